// Copyright 2026 The HeightLens Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "heightlens/dlt.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

#include "heightlens/metrics.hpp"
#include "heightlens/nn/adam.hpp"
#include "heightlens/random.hpp"

namespace heightlens::dlt {

using scenegen::ScenePatch;

// ------------------------------------------------------------- grouping

std::vector<int> GroupAssignment::members(int g) const {
  std::vector<int> m;
  for (size_t u = 0; u < assign.size(); ++u) {
    if (assign[u] == g) m.push_back(static_cast<int>(u));
  }
  return m;
}

io::Json GroupAssignment::to_json() const {
  return {{"K", K}, {"assign", assign}, {"centroids", centroids}, {"sizes", sizes}, {"inertia", inertia}};
}

GroupAssignment GroupAssignment::from_json(const io::Json& j) {
  GroupAssignment g;
  try {
    g.K = j.at("K").get<int>();
    g.assign = j.at("assign").get<std::vector<int>>();
    g.centroids = j.at("centroids").get<std::vector<std::vector<double>>>();
    g.sizes = j.at("sizes").get<std::vector<int>>();
    g.inertia = j.at("inertia").get<double>();
  } catch (const io::Json::exception& e) {
    throw SchemaError("/groups", e.what());
  }
  return g;
}

namespace {

double sq_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

struct Clustering {
  std::vector<int> assign;
  std::vector<std::vector<double>> centers;
  double inertia = 0.0;
};

void update_centers(const std::vector<std::vector<double>>& pts, Clustering& c, int K) {
  const size_t d = pts.front().size();
  c.centers.assign(static_cast<size_t>(K), std::vector<double>(d, 0.0));
  std::vector<int> count(static_cast<size_t>(K), 0);
  for (size_t i = 0; i < pts.size(); ++i) {
    const int k = c.assign[i];
    ++count[static_cast<size_t>(k)];
    for (size_t j = 0; j < d; ++j) c.centers[static_cast<size_t>(k)][j] += pts[i][j];
  }
  for (int k = 0; k < K; ++k) {
    if (count[static_cast<size_t>(k)] == 0) continue;
    for (double& v : c.centers[static_cast<size_t>(k)]) v /= count[static_cast<size_t>(k)];
  }
}

// Moves the farthest member of the largest cluster into each empty one.
bool repair_empty(const std::vector<std::vector<double>>& pts, Clustering& c, int K) {
  bool changed = false;
  for (;;) {
    std::vector<int> count(static_cast<size_t>(K), 0);
    for (int a : c.assign) ++count[static_cast<size_t>(a)];
    const auto empty = std::find(count.begin(), count.end(), 0);
    if (empty == count.end()) return changed;
    const int largest = static_cast<int>(std::max_element(count.begin(), count.end()) - count.begin());
    if (count[static_cast<size_t>(largest)] < 2) return changed;
    size_t far = 0;
    double best = -1.0;
    for (size_t i = 0; i < pts.size(); ++i) {
      if (c.assign[i] != largest) continue;
      const double d = sq_dist(pts[i], c.centers[static_cast<size_t>(largest)]);
      if (d > best) {
        best = d;
        far = i;
      }
    }
    c.assign[far] = static_cast<int>(empty - count.begin());
    update_centers(pts, c, K);
    changed = true;
  }
}

Clustering lloyd(const std::vector<std::vector<double>>& pts, int K, Rng& rng, int max_iter) {
  const size_t n = pts.size();
  Clustering c;
  // k-means++ seeding
  c.centers.push_back(pts[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1))]);
  std::vector<double> d2(n);
  while (static_cast<int>(c.centers.size()) < K) {
    double total = 0.0;
    for (size_t i = 0; i < n; ++i) {
      double m = std::numeric_limits<double>::infinity();
      for (const auto& ctr : c.centers) m = std::min(m, sq_dist(pts[i], ctr));
      d2[i] = m;
      total += m;
    }
    size_t pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      for (pick = 0; pick + 1 < n; ++pick) {
        if (d2[pick] > 0.0 && u < d2[pick]) break;
        u -= d2[pick];
      }
      while (d2[pick] == 0.0 && pick > 0) --pick;
    } else {
      pick = static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(n) - 1));
    }
    c.centers.push_back(pts[pick]);
  }
  c.assign.assign(n, -1);
  for (int it = 0; it < max_iter; ++it) {
    bool changed = false;
    for (size_t i = 0; i < n; ++i) {
      int best = 0;
      double bd = sq_dist(pts[i], c.centers[0]);
      for (int k = 1; k < K; ++k) {
        const double d = sq_dist(pts[i], c.centers[static_cast<size_t>(k)]);
        if (d < bd) {
          bd = d;
          best = k;
        }
      }
      if (c.assign[i] != best) {
        c.assign[i] = best;
        changed = true;
      }
    }
    update_centers(pts, c, K);
    changed = repair_empty(pts, c, K) || changed;
    if (!changed) break;
  }
  c.inertia = 0.0;
  for (size_t i = 0; i < n; ++i) c.inertia += sq_dist(pts[i], c.centers[static_cast<size_t>(c.assign[i])]);
  return c;
}

}  // namespace

GroupAssignment kmeans(const std::vector<std::vector<double>>& points, int K, const KMeansConfig& config) {
  if (points.empty()) throw DomainError("kmeans: no points");
  if (K < 1 || K > static_cast<int>(points.size())) {
    throw DomainError("kmeans: K must be in [1, " + std::to_string(points.size()) + "]");
  }
  for (const auto& p : points) {
    if (p.size() != points.front().size()) throw ShapeError("kmeans: ragged points");
  }
  Clustering best;
  best.inertia = std::numeric_limits<double>::infinity();
  for (int r = 0; r < std::max(1, config.restarts); ++r) {
    Rng rng(mix_seed(config.seed, static_cast<uint64_t>(r)));
    Clustering c = lloyd(points, K, rng, config.max_iterations);
    if (c.inertia < best.inertia) best = std::move(c);
  }
  GroupAssignment g;
  g.K = K;
  g.assign = best.assign;
  g.centroids = best.centers;
  g.inertia = best.inertia;
  g.sizes.assign(static_cast<size_t>(K), 0);
  for (int a : g.assign) ++g.sizes[static_cast<size_t>(a)];
  return g;
}

std::vector<std::vector<double>> final_layer_vectors(const toymodel::Net& net) {
  const Tensor<float>& w = net.params().at("final.w").value;  // [1, 1, C, n]
  const int C = w.dim(2), n = w.dim(3);
  std::vector<std::vector<double>> pts(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(C)));
  for (int u = 0; u < n; ++u) {
    double norm = 0.0;
    for (int c = 0; c < C; ++c) {
      const double v = w.data[static_cast<size_t>(c) * n + u];
      pts[static_cast<size_t>(u)][static_cast<size_t>(c)] = v;
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (double& v : pts[static_cast<size_t>(u)]) v /= norm;
    }
  }
  return pts;
}

GroupAssignment cluster_final_layer(const toymodel::Net& net, int K, const KMeansConfig& config) {
  const int n = net.spec().final_units;
  if (K < 2) throw DomainError("cluster_final_layer: K must be >= 2");
  if (K > n) {
    throw DomainError("cluster_final_layer: K = " + std::to_string(K) + " exceeds the " + std::to_string(n) +
                      " final-layer units");
  }
  return kmeans(final_layer_vectors(net), K, config);
}

std::vector<FeatureStack> group_features(const FeatureStack& features, const GroupAssignment& groups) {
  if (static_cast<size_t>(features.channels()) != groups.assign.size()) {
    throw ShapeError("group_features: " + std::to_string(features.channels()) + " feature maps but " +
                     std::to_string(groups.assign.size()) + " assigned units");
  }
  std::vector<FeatureStack> out;
  for (int g = 0; g < groups.K; ++g) {
    const std::vector<int> m = groups.members(g);
    FeatureStack s(features.rows(), features.cols(), static_cast<int>(m.size()));
    for (int r = 0; r < features.rows(); ++r)
      for (int c = 0; c < features.cols(); ++c)
        for (size_t k = 0; k < m.size(); ++k) s(r, c, static_cast<int>(k)) = features(r, c, m[k]);
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------- latent state

Raster<double> sample_latent(const LatentState& state, const Raster<double>& noise) {
  if (!(noise.same_grid(state.mu) && noise.channels() == state.mu.channels()) ||
      !(state.log_var.same_grid(state.mu) && state.log_var.channels() == state.mu.channels())) {
    throw ShapeError("sample_latent: noise and state shapes differ");
  }
  Raster<double> out = state.mu;
  for (size_t i = 0; i < out.size(); ++i) {
    out.storage()[i] += std::exp(state.log_var.storage()[i] / 2.0) * noise.storage()[i];
  }
  return out;
}

double kl_term(const LatentState& state) {
  if (state.mu.size() != state.log_var.size() || state.mu.size() != state.prior_mu.size()) {
    throw ShapeError("kl_term: state shapes differ");
  }
  double s = 0.0;
  for (size_t i = 0; i < state.mu.size(); ++i) {
    const double lv = state.log_var.storage()[i];
    const double d = state.mu.storage()[i] - state.prior_mu.storage()[i];
    s += std::exp(lv) - 1.0 - lv + d * d;
  }
  return 0.5 * s;
}

void DltConfig::validate() const {
  if (K < 2) throw DomainError("K must be >= 2");
  if (samples < 1) throw DomainError("samples L must be >= 1");
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be > 0");
  if (hidden < 1 || head_width < 1) throw DomainError("hidden and head_width must be >= 1");
}

io::Json DltConfig::to_json() const {
  return {{"K", K},
          {"hidden", hidden},
          {"head_width", head_width},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"height_weight", height_weight},
          {"recon_weight", recon_weight},
          {"kl_weight", kl_weight},
          {"kl_warmup_epochs", kl_warmup_epochs},
          {"samples", samples},
          {"seed", seed}};
}

DltConfig DltConfig::from_json(const io::Json& j) {
  if (!j.is_object()) throw SchemaError("/dlt", "expected an object");
  DltConfig c;
  for (const auto& [k, v] : j.items()) {
    if (!c.to_json().contains(k)) throw SchemaError("/dlt/" + k, "unknown key '" + k + "'");
    if (k != "seed" && !v.is_number()) throw SchemaError("/dlt/" + k, "expected a number");
    if (k == "seed" && !v.is_number_unsigned()) throw SchemaError("/dlt/seed", "expected an unsigned integer");
    if (k == "K") c.K = v.get<int>();
    else if (k == "hidden") c.hidden = v.get<int>();
    else if (k == "head_width") c.head_width = v.get<int>();
    else if (k == "epochs") c.epochs = v.get<int>();
    else if (k == "batch_size") c.batch_size = v.get<int>();
    else if (k == "learning_rate") c.learning_rate = v.get<double>();
    else if (k == "height_weight") c.height_weight = v.get<double>();
    else if (k == "recon_weight") c.recon_weight = v.get<double>();
    else if (k == "kl_weight") c.kl_weight = v.get<double>();
    else if (k == "kl_warmup_epochs") c.kl_warmup_epochs = v.get<double>();
    else if (k == "samples") c.samples = v.get<int>();
    else if (k == "seed") c.seed = v.get<uint64_t>();
    else throw SchemaError("/dlt/" + k, "unknown key '" + k + "'");
  }
  c.validate();
  return c;
}

namespace {

void require_fitted(const Dlt& model) {
  if (!model.fitted()) throw Error("DLT heads are untrained; run fit_dlt first");
}

Raster<double> to_raster(const Tensor<float>& t) {
  // [1, h, w, C]
  Raster<double> r(t.dim(1), t.dim(2), t.dim(3));
  std::copy(t.data.begin(), t.data.end(), r.storage().begin());
  return r;
}

}  // namespace

LatentState latent_forward(const Dlt& model, const std::vector<FeatureStack>& groups) {
  require_fitted(model);
  if (static_cast<int>(groups.size()) != model.K()) throw ShapeError("latent_forward: one stack per group");
  Graph<float> g(false);
  std::optional<Var<float>> mu, lv, pm;
  for (int gi = 0; gi < model.K(); ++gi) {
    const FeatureStack& f = groups[static_cast<size_t>(gi)];
    if (f.channels() != model.groups().sizes[static_cast<size_t>(gi)]) {
      throw ShapeError("latent_forward: group " + std::to_string(gi) + " has the wrong number of maps");
    }
    Var<float> x = g.constant(Tensor<float>({1, f.rows(), f.cols(), f.channels()}, f.storage()));
    auto [m, v] = model.encode(g, x, gi, false);
    Var<float> p = nn::mean_channels(x);
    mu = mu ? nn::concat_channels(*mu, m) : m;
    lv = lv ? nn::concat_channels(*lv, v) : v;
    pm = pm ? nn::concat_channels(*pm, p) : p;
  }
  return {to_raster(mu->value()), to_raster(lv->value()), to_raster(pm->value())};
}

LatentState latent_state(const Dlt& model, const Image& image) {
  require_fitted(model);
  Graph<float> g(false);
  auto L = model.latents(g, g.constant(toymodel::image_tensor(image)), false);
  Var<float> mu = L.mu[0], lv = L.log_var[0], pm = L.prior[0];
  for (int gi = 1; gi < model.K(); ++gi) {
    mu = nn::concat_channels(mu, L.mu[static_cast<size_t>(gi)]);
    lv = nn::concat_channels(lv, L.log_var[static_cast<size_t>(gi)]);
    pm = nn::concat_channels(pm, L.prior[static_cast<size_t>(gi)]);
  }
  return {to_raster(mu.value()), to_raster(lv.value()), to_raster(pm.value())};
}

io::Json DltLog::to_json() const {
  io::Json arr = io::Json::array();
  for (const DltEpoch& e : epochs) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.loss},
                   {"height_term", e.height},
                   {"recon_term", e.recon},
                   {"kl_term", e.kl},
                   {"val_mae", e.val_mae ? io::Json(*e.val_mae) : io::Json(nullptr)}});
  }
  return {{"epochs", arr}};
}

DltLog fit_dlt(Dlt& model, const std::vector<ScenePatch>& train_set, const std::vector<ScenePatch>& val_set,
               const DltConfig& config) {
  config.validate();
  if (train_set.empty()) throw Error("fit_dlt: empty training set");
  const size_t N = train_set.size();
  const size_t B = static_cast<size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((N + B - 1) / B);
  const long total = steps_per_epoch * config.epochs;
  // The summed objective is rescaled by N/M, so norm clipping would act on
  // an arbitrary scale; Adam is invariant to it.
  nn::Adam<float> opt_base({.learning_rate = config.learning_rate, .clip_norm = 0.0});
  nn::Adam<float> opt_head({.learning_rate = config.learning_rate, .clip_norm = 0.0});
  const double nm = static_cast<double>(N) / static_cast<double>(B);
  const double warm = config.kl_warmup_epochs * static_cast<double>(steps_per_epoch);
  std::vector<size_t> order(N);
  DltLog log;
  long step = 0;
  model.set_fitted(true);
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    Rng shuffle_rng(mix_seed(config.seed, static_cast<uint64_t>(epoch)));
    shuffle_rng.shuffle(order);
    DltEpoch e;
    e.epoch = epoch;
    long batches = 0;
    for (size_t s = 0; s < N; s += B, ++step, ++batches) {
      std::vector<const ScenePatch*> batch;
      for (size_t i = s; i < std::min(N, s + B); ++i) batch.push_back(&train_set[order[i]]);
      Graph<float> g;
      Var<float> x = g.constant(toymodel::stack_images(batch));
      Var<float> y = g.constant(toymodel::stack_heights(batch));
      ElboWeights w;
      w.height = config.height_weight;
      w.recon = config.recon_weight;
      w.kl = warm > 0.0 ? config.kl_weight * std::min(1.0, static_cast<double>(step + 1) / warm)
                        : config.kl_weight;
      w.scale = nm;
      Rng noise_rng(mix_seed(config.seed ^ 0x9e3779b97f4a7c15ULL, static_cast<uint64_t>(step)));
      auto noise = [&](int, int, const std::vector<int>& shape) {
        Tensor<float> t(shape);
        for (float& v : t.data) v = static_cast<float>(noise_rng.normal());
        return t;
      };
      ElboTerms<float> t = model.elbo(g, x, y, config.samples, w, noise, true);
      const double h = t.height.value().data[0], r = t.recon.value().data[0], k = t.kl.value().data[0];
      const double nominal = nm * (config.height_weight * h + config.recon_weight * r + config.kl_weight * k);
      if (!std::isfinite(t.loss.value().data[0]) || !std::isfinite(nominal)) {
        throw DivergenceError(epoch, "ELBO is not finite");
      }
      model.base().params().zero_grad();
      model.head().zero_grad();
      g.backward(t.loss);
      const double lr = nn::cosine_lr(config.learning_rate, step, total);
      opt_base.step(model.base().params(), lr);
      opt_head.step(model.head(), lr);
      e.loss += nominal;
      e.height += h;
      e.recon += r;
      e.kl += k;
    }
    e.loss /= static_cast<double>(batches);
    e.height /= static_cast<double>(batches);
    e.recon /= static_cast<double>(batches);
    e.kl /= static_cast<double>(batches);
    if (!val_set.empty()) e.val_mae = evaluate_mae(model, val_set);
    if (config.log_progress) {
      std::fprintf(stderr, "dlt epoch %d  -elbo %.4g  height %.4g  recon %.4g  kl %.4g  val_mae %.4f\n", epoch,
                   e.loss, e.height, e.recon, e.kl, e.val_mae.value_or(NAN));
    }
    log.epochs.push_back(e);
  }
  return log;
}

std::vector<RealMap> predict_heights(const Dlt& model, const std::vector<ScenePatch>& patches) {
  std::vector<RealMap> out;
  for (size_t s = 0; s < patches.size(); s += 8) {
    std::vector<const ScenePatch*> batch;
    for (size_t i = s; i < std::min(patches.size(), s + 8); ++i) batch.push_back(&patches[i]);
    Graph<float> g(false);
    const Tensor<float>& h = model.predict(g, g.constant(toymodel::stack_images(batch))).second.value();
    const int H = h.dim(1), W = h.dim(2);
    for (size_t b = 0; b < batch.size(); ++b) {
      RealMap m(H, W);
      std::copy(h.data.begin() + static_cast<long>(b * H * W), h.data.begin() + static_cast<long>((b + 1) * H * W),
                m.storage().begin());
      out.push_back(std::move(m));
    }
  }
  return out;
}

double evaluate_mae(const Dlt& model, const std::vector<ScenePatch>& patches) {
  const auto preds = predict_heights(model, patches);
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < patches.size(); ++i) {
    const auto& gt = patches[i].height.storage();
    for (size_t k = 0; k < gt.size(); ++k) s += std::abs(static_cast<double>(preds[i].storage()[k]) - gt[k]);
    n += gt.size();
  }
  if (n == 0) throw Error("evaluate_mae: empty set");
  return s / static_cast<double>(n);
}

// ------------------------------------------------------------ segmentation

std::vector<int> otsu_bins(const RealMap& map, double* lo_out, double* hi_out) {
  if (map.empty()) throw DomainError("otsu: empty map");
  double lo = INFINITY, hi = -INFINITY;
  for (float v : map.storage()) {
    if (!std::isfinite(v)) throw DomainError("otsu: map has non-finite values");
    lo = std::min(lo, static_cast<double>(v));
    hi = std::max(hi, static_cast<double>(v));
  }
  if (lo_out) *lo_out = lo;
  if (hi_out) *hi_out = hi;
  std::vector<double> edges(255);
  const double step = (hi - lo) / 256.0;
  for (int j = 0; j < 255; ++j) edges[static_cast<size_t>(j)] = lo + (j + 1) * step;
  std::vector<int> bins(map.size());
  for (size_t i = 0; i < map.size(); ++i) {
    const double v = map.storage()[i];
    bins[i] = static_cast<int>(std::lower_bound(edges.begin(), edges.end(), v) - edges.begin());
  }
  return bins;
}

double between_class_variance(const std::vector<size_t>& hist, int cut) {
  double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
  for (size_t j = 0; j < hist.size(); ++j) {
    const double h = static_cast<double>(hist[j]);
    if (static_cast<int>(j) < cut) {
      n0 += h;
      s0 += h * static_cast<double>(j);
    } else {
      n1 += h;
      s1 += h * static_cast<double>(j);
    }
  }
  if (n0 == 0 || n1 == 0) return 0.0;
  const double n = n0 + n1;
  const double d = s0 / n0 - s1 / n1;
  return (n0 / n) * (n1 / n) * d * d;
}

OtsuResult otsu_threshold(const RealMap& map) {
  double lo = 0.0, hi = 0.0;
  const std::vector<int> bins = otsu_bins(map, &lo, &hi);
  OtsuResult out;
  out.mask = Mask(map.rows(), map.cols());
  if (!(hi > lo)) {
    out.degenerate = true;
    out.threshold = lo;
    return out;
  }
  std::vector<uint64_t> hist(256, 0);
  for (int b : bins) ++hist[static_cast<size_t>(b)];
  uint64_t N = 0, S = 0;
  for (int j = 0; j < 256; ++j) {
    N += hist[static_cast<size_t>(j)];
    S += hist[static_cast<size_t>(j)] * static_cast<uint64_t>(j);
  }
  // Between-class variance is proportional to (N*S0 - N0*S)^2 / (N0*N1);
  // candidates are compared as exact fractions while they fit in 128 bits.
  const bool exact = N <= (uint64_t{1} << 18);
  using U = unsigned __int128;
  U best_num = 0, best_den = 1;
  long double best_ld = -1.0L;
  int best_cut = 1;
  uint64_t N0 = 0, S0 = 0;
  for (int k = 1; k < 256; ++k) {
    N0 += hist[static_cast<size_t>(k - 1)];
    S0 += hist[static_cast<size_t>(k - 1)] * static_cast<uint64_t>(k - 1);
    const uint64_t N1 = N - N0;
    if (N0 == 0 || N1 == 0) continue;
    const __int128 diff = static_cast<__int128>(N) * S0 - static_cast<__int128>(N0) * S;
    const U mag = static_cast<U>(diff < 0 ? -diff : diff);
    if (exact) {
      const U num = mag * mag;
      const U den = static_cast<U>(N0) * N1;
      if (num * best_den > best_num * den) {
        best_num = num;
        best_den = den;
        best_cut = k;
      }
    } else {
      const long double v = static_cast<long double>(mag) * static_cast<long double>(mag) /
                            (static_cast<long double>(N0) * static_cast<long double>(N1));
      if (v > best_ld) {
        best_ld = v;
        best_cut = k;
      }
    }
  }
  out.cut = best_cut;
  out.threshold = lo + best_cut * ((hi - lo) / 256.0);
  for (size_t i = 0; i < bins.size(); ++i) out.mask.storage()[i] = bins[i] >= best_cut;
  return out;
}

SegmentationMaps segment(const Dlt& model, const Image& image) {
  require_fitted(model);
  Graph<float> g(false);
  Var<float> mu = model.predict(g, g.constant(toymodel::image_tensor(image))).first;
  const Tensor<float>& up = nn::resize_bilinear(mu, image.rows(), image.cols()).value();
  const int K = model.K();
  SegmentationMaps out;
  for (int k = 0; k < K; ++k) {
    RealMap m(image.rows(), image.cols());
    for (size_t p = 0; p < m.size(); ++p) m.storage()[p] = up.data[p * K + k];
    OtsuResult r = otsu_threshold(m);
    out.masks.push_back(std::move(r.mask));
    out.thresholds.push_back(r.threshold);
    out.degenerate.push_back(r.degenerate);
  }
  return out;
}

std::vector<int> hungarian_max(const std::vector<std::vector<double>>& score) {
  const int rows = static_cast<int>(score.size());
  if (rows == 0) return {};
  const int cols = static_cast<int>(score.front().size());
  const int n = std::max(rows, cols);
  double top = 0.0;
  for (const auto& r : score) {
    if (static_cast<int>(r.size()) != cols) throw ShapeError("hungarian: ragged score matrix");
    for (double v : r) top = std::max(top, v);
  }
  // Square cost matrix (1-based as in the classic potentials formulation).
  std::vector<std::vector<double>> a(static_cast<size_t>(n + 1), std::vector<double>(static_cast<size_t>(n + 1), top));
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) a[static_cast<size_t>(i + 1)][static_cast<size_t>(j + 1)] = top - score[static_cast<size_t>(i)][static_cast<size_t>(j)];
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<size_t>(n + 1)), v(static_cast<size_t>(n + 1));
  std::vector<int> p(static_cast<size_t>(n + 1)), way(static_cast<size_t>(n + 1));
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), inf);
    std::vector<bool> used(static_cast<size_t>(n + 1), false);
    do {
      used[static_cast<size_t>(j0)] = true;
      const int i0 = p[static_cast<size_t>(j0)];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) continue;
        const double cur = a[static_cast<size_t>(i0)][static_cast<size_t>(j)] - u[static_cast<size_t>(i0)] - v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      const int j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<int> out(static_cast<size_t>(rows), -1);
  for (int j = 1; j <= n; ++j) {
    const int i = p[static_cast<size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) out[static_cast<size_t>(i - 1)] = j - 1;
  }
  return out;
}

namespace {

Mask class_mask(const LabelMap& sem, int c) {
  Mask m(sem.rows(), sem.cols());
  for (size_t i = 0; i < m.size(); ++i) m.storage()[i] = sem.storage()[i] == c;
  return m;
}

}  // namespace

std::vector<int> name_groups(const Dlt& model, const std::vector<ScenePatch>& naming, int num_classes) {
  const int K = model.K();
  std::vector<std::vector<metrics::IouAccumulator>> acc(
      static_cast<size_t>(K), std::vector<metrics::IouAccumulator>(static_cast<size_t>(num_classes)));
  for (const ScenePatch& p : naming) {
    const SegmentationMaps s = segment(model, p.image);
    for (int c = 0; c < num_classes; ++c) {
      const Mask gt = class_mask(p.semantic, c);
      for (int k = 0; k < K; ++k) acc[static_cast<size_t>(k)][static_cast<size_t>(c)].add(s.masks[static_cast<size_t>(k)], gt);
    }
  }
  std::vector<std::vector<double>> score(static_cast<size_t>(K), std::vector<double>(static_cast<size_t>(num_classes)));
  for (int k = 0; k < K; ++k)
    for (int c = 0; c < num_classes; ++c) score[static_cast<size_t>(k)][static_cast<size_t>(c)] = acc[static_cast<size_t>(k)][static_cast<size_t>(c)].value().value;
  return hungarian_max(score);
}

SegmentationEval evaluate_segmentation(const Dlt& model, const std::vector<int>& group_to_class,
                                       const std::vector<ScenePatch>& patches, int num_classes) {
  const int K = model.K();
  if (static_cast<int>(group_to_class.size()) != K) throw ShapeError("group_to_class must have K entries");
  std::vector<metrics::IouAccumulator> acc(static_cast<size_t>(K));
  std::vector<double> tsum(static_cast<size_t>(K), 0.0);
  std::vector<int> tcount(static_cast<size_t>(K), 0);
  for (const ScenePatch& p : patches) {
    const SegmentationMaps s = segment(model, p.image);
    for (int k = 0; k < K; ++k) {
      if (!s.degenerate[static_cast<size_t>(k)]) {
        tsum[static_cast<size_t>(k)] += s.thresholds[static_cast<size_t>(k)];
        ++tcount[static_cast<size_t>(k)];
      }
      const int c = group_to_class[static_cast<size_t>(k)];
      if (c < 0 || c >= num_classes) continue;
      acc[static_cast<size_t>(k)].add(s.masks[static_cast<size_t>(k)], class_mask(p.semantic, c));
    }
  }
  SegmentationEval e;
  e.group_to_class = group_to_class;
  std::vector<metrics::Iou> ious;
  for (int k = 0; k < K; ++k) {
    e.mean_thresholds.push_back(tcount[static_cast<size_t>(k)] ? tsum[static_cast<size_t>(k)] / tcount[static_cast<size_t>(k)] : 0.0);
    const int c = group_to_class[static_cast<size_t>(k)];
    if (c < 0 || c >= num_classes) continue;
    const metrics::Iou v = acc[static_cast<size_t>(k)].value();
    e.class_iou[c] = v.value;
    ious.push_back(v);
  }
  if (!ious.empty()) e.miou = metrics::miou(ious);
  return e;
}

io::Json SegmentationEval::to_json(const std::vector<std::string>& classes, int K) const {
  io::Json iou = io::Json::object();
  for (const auto& [c, v] : class_iou) iou[classes.at(static_cast<size_t>(c))] = v;
  io::Json names = io::Json::array();
  for (int c : group_to_class) names.push_back(c >= 0 ? io::Json(classes.at(static_cast<size_t>(c))) : io::Json(nullptr));
  return {{"K", K},
          {"thresholds", mean_thresholds},
          {"iou", iou},
          {"group_to_class", names},
          {"miou", miou ? io::Json(*miou) : io::Json(nullptr)}};
}

// ------------------------------------------------------------ checkpoints

void save_dlt(const std::filesystem::path& dir, const Dlt& model, const DltConfig& config) {
  io::Checkpoint ck;
  ck.arch["model"] = model.base().spec().to_json();
  io::Json d = config.to_json();
  d["K"] = model.K();
  d["hidden"] = model.hidden();
  d["head_width"] = model.head_width();
  ck.arch["dlt"] = d;
  ck.arch["dlt_fitted"] = model.fitted();
  auto put = [&](const std::string& name, const Tensor<float>& t) {
    ck.tensors[name] = io::FloatArray(std::vector<int64_t>(t.shape.begin(), t.shape.end()), std::vector<float>(t.data.begin(), t.data.end()));
  };
  for (const auto& [name, p] : model.base().params()) put(name, p.value);
  for (const auto& [name, p] : model.teacher().params()) put("teacher." + name, p.value);
  for (const auto& [name, p] : model.head()) put("dlt." + name, p.value);
  io::write_checkpoint(dir, ck);
  io::write_text(dir / "groups.json", io::canonical_dump(model.groups().to_json()));
}

Dlt load_dlt(const std::filesystem::path& dir, DltConfig* config) {
  io::Json arch;
  toymodel::Net base = toymodel::load_checkpoint(dir, &arch);
  if (!arch.contains("dlt")) throw SchemaError("/dlt", "checkpoint has no DLT head");
  if (!std::filesystem::exists(dir / "groups.json")) throw Error("missing " + (dir / "groups.json").string());
  const DltConfig cfg = DltConfig::from_json(arch.at("dlt"));
  GroupAssignment groups = GroupAssignment::from_json(io::Json::parse(io::read_text(dir / "groups.json")));
  const io::Checkpoint ck = io::read_checkpoint(dir);
  auto fill = [&](ParamStore<float>& store, const std::string& prefix) {
    for (auto& [name, p] : store) {
      auto it = ck.tensors.find(prefix + name);
      if (it == ck.tensors.end()) throw ShapeError("DLT checkpoint is missing tensor '" + prefix + name + "'");
      std::vector<int> shape(it->second.shape.begin(), it->second.shape.end());
      if (shape != p.value.shape) {
        throw ShapeError("tensor '" + prefix + name + "' has shape " + nn::shape_string(shape));
      }
      p.value.data.assign(it->second.values.begin(), it->second.values.end());
    }
  };
  toymodel::Net teacher = base;
  fill(teacher.params(), "teacher.");
  Dlt model(std::move(base), std::move(groups), cfg, std::move(teacher));
  fill(model.head(), "dlt.");
  model.set_fitted(arch.value("dlt_fitted", false));
  if (config) *config = cfg;
  return model;
}

}  // namespace heightlens::dlt
