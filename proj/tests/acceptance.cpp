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


// Acceptance checks, one per criterion: `acceptance --criterion N`. Trained
// networks are cached under the cache directory so criteria that share a
// model train it once.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "heightlens/attribute.hpp"
#include "heightlens/dissect.hpp"
#include "heightlens/dlt.hpp"
#include "heightlens/io.hpp"
#include "heightlens/metrics.hpp"
#include "heightlens/perturb.hpp"
#include "heightlens/random.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace fs = std::filesystem;
using namespace heightlens;
using scenegen::ScenePatch;
using nn::Tensor;
using toymodel::FeatureStack;
using toymodel::Net;

namespace {

// ---------------------------------------------------------------- tolerances

constexpr double kFixtureRel = 1e-9;
constexpr double kRowTarget = 0.8893;
constexpr double kRowTol = 5e-4;
constexpr double kCompletenessFrac = 0.01;
constexpr double kLinearIgRel = 1e-12;
constexpr double kKlMcRel = 0.02;
constexpr int kKlSamples = 100000;
constexpr double kShiftRel = 1e-12;
constexpr double kGradRel = 1e-3;
constexpr double kSelective = 0.5;
constexpr double kScaleTrend = 0.8;
constexpr double kDltMaeSlack = 0.15;
constexpr double kBuildingIou = 0.30;
constexpr int kSeeds = 3;
constexpr int kSeedsNeeded = 2;
constexpr int kTeacherEpochs = 30;
constexpr int kFineTuneEpochs = 20;
constexpr int kCompressedUnits = 16;

fs::path g_cache;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

std::string opt(const std::optional<double>& v) { return v ? fmt("%.4f", *v) : std::string("undef"); }

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ----------------------------------------------------------- shared models

const scenegen::SceneConfig& corpus_config() {
  static const scenegen::SceneConfig c{};
  return c;
}

const std::vector<ScenePatch>& split(const std::string& name) {
  static std::map<std::string, std::vector<ScenePatch>> cache;
  auto it = cache.find(name);
  if (it == cache.end()) {
    std::fprintf(stderr, "generating %s split\n", name.c_str());
    it = cache.emplace(name, scenegen::generate_split(corpus_config(), {}, name)).first;
  }
  return it->second;
}

toymodel::ModelSpec teacher_spec(toymodel::Variant v, uint64_t seed) {
  toymodel::ModelSpec s;
  s.seed = seed;
  if (v == toymodel::Variant::kConv) s = toymodel::matched_conv_spec(s);
  s.seed = seed;
  return s;
}

// Trains or loads a network cached under `name`.
Net cached(const std::string& name, const std::function<Net()>& make) {
  const fs::path dir = g_cache / name;
  if (fs::exists(dir / "done")) return toymodel::load_checkpoint(dir);
  const auto t0 = std::chrono::steady_clock::now();
  Net net = make();
  toymodel::save_checkpoint(dir, net);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  io::write_text(dir / "done", fmt("%.0f s\n", secs));
  std::fprintf(stderr, "%s trained in %.0f s\n", name.c_str(), secs);
  return net;
}

Net teacher(toymodel::Variant v, uint64_t seed) {
  const std::string name = toymodel::variant_name(v) + "_64_s" + std::to_string(seed);
  return cached(name, [&] {
    Net net(teacher_spec(v, seed));
    toymodel::TrainConfig cfg;
    cfg.epochs = kTeacherEpochs;
    cfg.seed = seed;
    cfg.log_progress = true;
    const toymodel::TrainLog log = toymodel::fit(net, split("train"), split("val"), cfg);
    io::write_text(g_cache / (name + "_log.json"), io::canonical_dump(log.to_json()));
    return net;
  });
}

// ---------------------------------------------------------------- criteria

Outcome c1() {
  // two 4x4 images, three units; unit 0 responds to class 1 only, unit 1 is
  // constant, unit 2 is a ramp
  const int C = 3;
  std::vector<FeatureStack> feats;
  std::vector<dissect::MaskSet> masks;
  std::vector<LabelMap> sems;
  Rng rng(7);
  for (int im = 0; im < 2; ++im) {
    LabelMap sem(4, 4);
    for (auto& v : sem.storage()) v = static_cast<uint8_t>(rng.uniform_int(0, C - 1));
    FeatureStack f(4, 4, 3);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        f(r, c, 0) = sem(r, c) == 1 ? 1.0f : 0.0f;
        f(r, c, 1) = 0.7f;
        f(r, c, 2) = static_cast<float>(0.25 * (r * 4 + c) + im);
      }
    feats.push_back(f);
    masks.push_back(dissect::class_masks(sem, C));
    sems.push_back(sem);
  }
  const dissect::ResponseMatrix m = dissect::responses(feats, masks);
  // hand oracle: mass over area per class pooled over both images
  double worst = 0.0;
  for (int u = 0; u < 3; ++u) {
    std::vector<double> row;
    for (int k = 0; k < C; ++k) {
      double mass = 0, area = 0;
      for (int im = 0; im < 2; ++im)
        for (int r = 0; r < 4; ++r)
          for (int c = 0; c < 4; ++c)
            if (sems[static_cast<size_t>(im)](r, c) == k) mass += feats[static_cast<size_t>(im)](r, c, u), area += 1;
      row.push_back(mass / area);
      worst = std::max(worst, rel_err(m.at(u, k), mass / area));
    }
    const auto mx = std::max_element(row.begin(), row.end());
    double rest = 0;
    for (auto it = row.begin(); it != row.end(); ++it)
      if (it != mx) rest += *it;
    rest /= (C - 1);
    const double cs = std::abs(*mx - rest) / std::abs(*mx + rest);
    const auto got = dissect::selectivity(m.row(u));
    if (!got) return {false, "unit " + std::to_string(u) + " has undefined CS"};
    worst = std::max(worst, std::abs(*got - cs) / std::max(cs, 1e-12));
  }
  const double cs_mask = *dissect::selectivity(m.row(0));
  const double cs_const = *dissect::selectivity(m.row(1));
  const bool ok = worst <= kFixtureRel && cs_mask == 1.0 && cs_const == 0.0;
  return {ok, "max rel err " + fmt("%.2e", worst) + ", mask unit CS " + fmt("%.6f", cs_mask) +
                  ", constant unit CS " + fmt("%.6f", cs_const)};
}

Outcome c2() {
  const auto cs = dissect::selectivity({0.7083, 0.0833, 0.0485, 0.1597});
  const bool ok = cs && std::abs(*cs - kRowTarget) <= kRowTol;
  return {ok, "CS = " + opt(cs) + ", expected " + fmt("%.4f", kRowTarget) + " +/- " + fmt("%.0e", kRowTol)};
}

Outcome c3() {
  // linear target: IG is exact for any m
  double linear_worst = 0.0;
  const Image img = [] {
    Image im(16, 16, 3);
    Rng r(3);
    for (float& v : im.storage()) v = static_cast<float>(r.uniform());
    return im;
  }();
  Tensor<double> w({1, 16, 16, 3});
  Rng wr(4);
  for (double& v : w.data) v = wr.uniform(-1, 1);
  attribute::TargetFn lin = [&](const Tensor<double>& x, std::vector<double>& vals, Tensor<double>& grads) {
    const int B = x.dim(0);
    const size_t n = w.size();
    vals.assign(static_cast<size_t>(B), 0.0);
    grads = Tensor<double>(x.shape);
    for (int b = 0; b < B; ++b)
      for (size_t i = 0; i < n; ++i) {
        vals[static_cast<size_t>(b)] += w.data[i] * x.data[b * n + i];
        grads.data[b * n + i] = w.data[i];
      }
  };
  double expect = 0.0;
  for (size_t i = 0; i < w.size(); ++i) expect += w.data[i] * img.storage()[i];
  for (int m : {1, 10, 100}) {
    const auto a = attribute::integrated_gradients(lin, img, {0, 0, 16, 0.0}, m);
    linear_worst = std::max(linear_worst, rel_err(a.ig_sum, expect));
  }

  const Net net = teacher(toymodel::Variant::kAttention, 0);
  const auto& val = split("val");
  Rng rng(2024);
  double worst_frac = 0.0;
  int violations = 0;
  std::vector<double> fracs;
  for (int t = 0; t < 20; ++t) {
    const ScenePatch& p = val[static_cast<size_t>(rng.uniform_int(0, val.size() - 1))];
    const int n = 16;
    const int px = static_cast<int>(rng.uniform_int(0, p.image.cols() - n));
    const int py = static_cast<int>(rng.uniform_int(0, p.image.rows() - n));
    const auto a = attribute::integrated_gradients(net, p.image, {px, py, n, 0.0}, 100);
    const double denom = std::abs(a.target_input - a.target_baseline);
    const double frac = a.completeness_gap / std::max(denom, 1e-300);
    worst_frac = std::max(worst_frac, frac);
    fracs.push_back(frac);
    if (frac > kCompletenessFrac) ++violations;
  }
  std::sort(fracs.begin(), fracs.end());
  const double median = 0.5 * (fracs[9] + fracs[10]);
  const bool ok = linear_worst <= kLinearIgRel && violations == 0;
  return {ok, "linear max rel err " + fmt("%.2e", linear_worst) + "; trained model gap as % of |D(x)-D(x')|: median " +
                  fmt("%.2f", 100 * median) + ", worst " + fmt("%.2f", 100 * worst_frac) + ", " +
                  std::to_string(violations) + "/20 over 1%"};
}

Outcome c4() {
  Rng rng(99);
  double worst = 0.0;
  for (int s = 0; s < 10; ++s) {
    dlt::LatentState st{Raster<double>(1, 2, 2), Raster<double>(1, 2, 2), Raster<double>(1, 2, 2)};
    for (size_t i = 0; i < 4; ++i) {
      st.mu.storage()[i] = rng.uniform(-1.5, 1.5);
      st.log_var.storage()[i] = rng.uniform(-1.0, 0.5);
      st.prior_mu.storage()[i] = rng.uniform(-1.5, 1.5);
    }
    const double closed = dlt::kl_term(st);
    double mc = 0.0;
    for (int k = 0; k < kKlSamples; ++k) {
      for (size_t i = 0; i < 4; ++i) {
        const double lv = st.log_var.storage()[i];
        const double e = rng.normal();
        const double z = st.mu.storage()[i] + std::exp(lv / 2) * e;
        const double d = z - st.prior_mu.storage()[i];
        // log q - log p; the 2 pi terms cancel
        mc += -0.5 * (lv + e * e) + 0.5 * d * d;
      }
    }
    mc /= kKlSamples;
    worst = std::max(worst, rel_err(mc, closed));
  }
  dlt::LatentState matched{Raster<double>(3, 3, 2, 0.4), Raster<double>(3, 3, 2, 0.0),
                           Raster<double>(3, 3, 2, 0.4)};
  const double zero = dlt::kl_term(matched);
  return {worst <= kKlMcRel && zero == 0.0,
          "worst MC rel err " + fmt("%.4f", worst) + " over 10 states, KL at matched point " + fmt("%g", zero)};
}

Outcome c5() {
  int mismatches = 0;
  for (uint64_t seed = 0; seed < 100; ++seed) {
    RealMap m(16, 16);
    Rng r(5000 + seed);
    for (float& v : m.storage()) v = static_cast<float>(r.uniform(-2.0, 9.0));
    double lo = 1e300, hi = -1e300;
    for (float v : m.storage()) lo = std::min(lo, double(v)), hi = std::max(hi, double(v));
    const double step = (hi - lo) / 256.0;
    std::vector<int> bins;
    for (float v : m.storage()) {
      int j = 0;
      while (j < 255 && !(v <= lo + (j + 1) * step)) ++j;
      bins.push_back(j);
    }
    double best = -1.0;
    int cut = -1;
    for (int k = 1; k < 256; ++k) {
      double n0 = 0, n1 = 0, s0 = 0, s1 = 0;
      for (int b : bins) {
        if (b < k) n0 += 1, s0 += b;
        else n1 += 1, s1 += b;
      }
      if (n0 == 0 || n1 == 0) continue;
      const double v = n0 * n1 * (s0 / n0 - s1 / n1) * (s0 / n0 - s1 / n1);
      if (v > best) best = v, cut = k;
    }
    const dlt::OtsuResult o = dlt::otsu_threshold(m);
    bool same = o.cut == cut && o.threshold == lo + cut * step;
    for (size_t i = 0; i < bins.size(); ++i) same = same && o.mask.storage()[i] == (bins[i] >= cut);
    if (!same) ++mismatches;
  }
  return {mismatches == 0, std::to_string(mismatches) + "/100 maps differ from exhaustive search"};
}

Outcome c6() {
  // values on a 1/1024 grid so shifted maps are exact in float
  auto grid = [](uint64_t seed) {
    RealMap m(32, 32);
    Rng r(seed);
    for (float& v : m.storage()) v = static_cast<float>(r.uniform_int(0, 20 * 1024)) / 1024.0f;
    return m;
  };
  double worst_shift = 0.0;
  for (uint64_t s = 0; s < 20; ++s) {
    const RealMap p = grid(s), g = grid(s + 100);
    for (float c : {0.5f, 3.0f, -7.25f}) {
      RealMap q = p;
      for (float& v : q.storage()) v += c;
      worst_shift = std::max(worst_shift, rel_err(metrics::si_rmse(q, g), metrics::si_rmse(p, g)));
      worst_shift = std::max(worst_shift, rel_err(metrics::msge(q, g), metrics::msge(p, g)));
    }
  }
  int order_fail = 0;
  for (uint64_t s = 0; s < 1000; ++s) {
    RealMap p(8, 8), g(8, 8);
    Rng r(20000 + s);
    for (float& v : p.storage()) v = static_cast<float>(r.uniform(0, 30));
    for (float& v : g.storage()) v = static_cast<float>(r.uniform(0, 30));
    if (metrics::rmse(p, g) < metrics::mae(p, g)) ++order_fail;
  }
  // 2 px intersection over 5 px union; disjoint; both empty
  Mask a(2, 4), b(2, 4), empty(2, 4);
  a(0, 0) = a(0, 1) = a(0, 2) = 1;
  b(0, 1) = b(0, 2) = b(1, 3) = b(1, 0) = 1;
  Mask d(2, 4);
  d(1, 1) = 1;
  const bool hand = metrics::iou(a, b).value == 0.4 && metrics::iou(a, d).value == 0.0 &&
                    metrics::iou(empty, empty).value == 1.0 && metrics::iou(empty, empty).empty_union &&
                    metrics::iou(a, a).value == 1.0;
  const bool ok = worst_shift <= kShiftRel && order_fail == 0 && hand;
  return {ok, "shift rel err " + fmt("%.2e", worst_shift) + ", rmse<mae in " + std::to_string(order_fail) +
                  "/1000, IoU hand cases " + (hand ? "exact" : "wrong")};
}

// Central differences on `probes` random weights of `store`, skipping weights
// with numerically zero gradient.
double probe_gradients(nn::ParamStore<double>& store, const std::function<double(bool)>& eval, int probes,
                       uint64_t seed, int* checked) {
  eval(true);
  std::vector<std::string> names;
  for (const auto& [name, p] : store) names.push_back(name);
  Rng rng(seed);
  double worst = 0.0;
  *checked = 0;
  for (int tries = 0; *checked < probes && tries < 1000; ++tries) {
    auto& p = store.at(names[static_cast<size_t>(rng.uniform_int(0, names.size() - 1))]);
    const size_t i = static_cast<size_t>(rng.uniform_int(0, p.value.size() - 1));
    const double analytic = p.grad.data[i];
    const double h = 1e-4, w0 = p.value.data[i];
    p.value.data[i] = w0 + h;
    const double lp = eval(false);
    p.value.data[i] = w0 - h;
    const double lm = eval(false);
    p.value.data[i] = w0;
    const double numeric = (lp - lm) / (2 * h);
    if (std::abs(numeric) < 1e-7 && std::abs(analytic) < 1e-7) continue;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(std::abs(numeric), 1e-7));
    ++*checked;
  }
  return worst;
}

Outcome c7() {
  const ScenePatch p = [] {
    scenegen::SceneConfig c;
    c.image_size = 32;
    c.building_count_range = {1, 1};
    c.building_side_range = {8, 12};
    c.tree_count_range = {1, 1};
    c.tree_radius_range = {3, 4};
    c.road_count_range = {0, 0};
    c.water_count_range = {0, 0};
    return scenegen::generate_scene(c, 0);
  }();
  Tensor<double> x({1, 32, 32, 3}, std::vector<double>(p.image.storage().begin(), p.image.storage().end()));
  Tensor<double> y({1, 32, 32, 1}, std::vector<double>(p.height.storage().begin(), p.height.storage().end()));
  std::string detail;
  bool ok = true;
  for (toymodel::Variant v : {toymodel::Variant::kAttention, toymodel::Variant::kConv}) {
    toymodel::Network<double> net = Net(teacher_spec(v, 11)).cast<double>();
    auto eval = [&](bool grad) {
      nn::Graph<double> g(grad);
      nn::Var<double> l = nn::squared_error(net.forward(g, g.constant(x), grad).height, g.constant(y), true);
      if (grad) {
        net.params().zero_grad();
        g.backward(l);
      }
      return l.value().data[0];
    };
    int checked = 0;
    const double w = probe_gradients(net.params(), eval, 6, 13, &checked);
    ok = ok && checked >= 5 && w <= kGradRel;
    detail += toymodel::variant_name(v) + " loss " + fmt("%.1e", w) + " (" + std::to_string(checked) + " params); ";
  }
  toymodel::ModelSpec s = teacher_spec(toymodel::Variant::kAttention, 12);
  s.final_units = kCompressedUnits;
  const Net base(s);
  dlt::DltConfig cfg;
  cfg.seed = 12;
  dlt::DltModel<double> m =
      dlt::Dlt(base, dlt::cluster_final_layer(base, cfg.K, {.restarts = 5, .seed = 12}), cfg).cast<double>();
  auto noise = [](int l, int gi, const std::vector<int>& shape) {
    Tensor<double> t(shape);
    Rng r(mix_seed(static_cast<uint64_t>(l) + 1, static_cast<uint64_t>(gi)));
    for (double& v : t.data) v = r.normal();
    return t;
  };
  auto elbo = [&](bool grad) {
    nn::Graph<double> g(grad);
    dlt::ElboTerms<double> t = m.elbo(g, g.constant(x), g.constant(y), 2, {1.0, 0.5, 0.01, 10.0}, noise, grad);
    if (grad) {
      m.base().params().zero_grad();
      m.head().zero_grad();
      g.backward(t.loss);
    }
    return t.loss.value().data[0];
  };
  int ch = 0, cb = 0;
  const double wh = probe_gradients(m.head(), elbo, 6, 14, &ch);
  const double wb = probe_gradients(m.base().params(), elbo, 6, 15, &cb);
  ok = ok && ch >= 5 && cb >= 5 && wh <= kGradRel && wb <= kGradRel;
  detail += "ELBO head " + fmt("%.1e", wh) + " (" + std::to_string(ch) + "), backbone " + fmt("%.1e", wb) + " (" +
            std::to_string(cb) + ")";
  return {ok, "max rel err: " + detail};
}

Outcome c8() {
  const std::vector<std::string> classes = corpus_config().class_set;
  const auto& val = split("val");
  int held = 0;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const Net att = teacher(toymodel::Variant::kAttention, static_cast<uint64_t>(seed));
    const Net conv = teacher(toymodel::Variant::kConv, static_cast<uint64_t>(seed));
    const dissect::SelectivityReport ra = dissect::analyze(att, val, classes);
    const dissect::SelectivityReport rc = dissect::analyze(conv, val, classes);
    const auto ab = ra.max_class_selectivity(scenegen::kBuilding);
    const auto at = ra.max_class_selectivity(scenegen::kTree);
    bool ok = ab && *ab > kSelective && at && *at > kSelective;
    std::string cmp;
    for (int c = 0; c < static_cast<int>(classes.size()); ++c) {
      const auto a = ra.max_class_selectivity(c), b = rc.max_class_selectivity(c);
      if (b && (!a || *a < *b)) ok = false;
      cmp += " " + classes[static_cast<size_t>(c)] + " " + opt(a) + "/" + opt(b);
    }
    if (ok) ++held;
    detail += "seed " + std::to_string(seed) + (ok ? " holds" : " fails") + " [att/conv max CS:" + cmp + "; MAE " +
              fmt("%.3f", toymodel::evaluate_mae(att, val)) + "/" + fmt("%.3f", toymodel::evaluate_mae(conv, val)) +
              "] ";
  }
  detail += "baseline MAE " + fmt("%.3f", toymodel::mean_height_baseline_mae(split("train"), val));
  return {held >= kSeedsNeeded, std::to_string(held) + "/3 seeds; " + detail};
}

Outcome c9() {
  const Net net = teacher(toymodel::Variant::kAttention, 0);
  std::vector<ScenePatch> scenes(split("val").begin(), split("val").begin() + 50);
  const perturb::PerturbResult sc = perturb::scale_sweep(net, scenes, corpus_config(), scenegen::kBuilding);
  const perturb::PerturbResult sh = perturb::shadow_sweep(net, scenes, corpus_config(), scenegen::kBuilding);
  double abs_shadow = 0.0;
  for (double t : sh.scene_trends) abs_shadow += std::abs(t);
  if (!sh.scene_trends.empty()) abs_shadow /= static_cast<double>(sh.scene_trends.size());
  const bool ok = sc.trend && *sc.trend >= kScaleTrend;
  return {ok, "building scale Spearman " + opt(sc.trend) + " over " + std::to_string(sc.scene_trends.size()) +
                  " scenes (" + std::to_string(sc.skipped) + " skipped); shadow Spearman " + opt(sh.trend) +
                  ", mean |Spearman| " + fmt("%.4f", abs_shadow) + " (reported only)"};
}

Outcome c10() {
  const auto& train = split("train");
  const auto& val = split("val");
  const std::vector<ScenePatch> naming(train.begin(), train.begin() + 200);
  int held = 0;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const uint64_t s = static_cast<uint64_t>(seed);
    const Net big = teacher(toymodel::Variant::kAttention, s);
    const Net plain = cached("attention_16_plain_s" + std::to_string(seed), [&] {
      Net n = toymodel::compress_head(big, kCompressedUnits);
      toymodel::TrainConfig cfg;
      cfg.epochs = kFineTuneEpochs;
      cfg.seed = s;
      cfg.log_progress = true;
      toymodel::fit(n, train, val, cfg);
      return n;
    });
    const fs::path ddir = g_cache / ("attention_16_dlt_s" + std::to_string(seed));
    dlt::DltConfig cfg;
    cfg.epochs = kFineTuneEpochs;
    cfg.seed = s;
    cfg.log_progress = true;
    dlt::Dlt model;
    if (fs::exists(ddir / "done")) {
      model = dlt::load_dlt(ddir);
    } else {
      const auto t0 = std::chrono::steady_clock::now();
      model = dlt::Dlt(plain, dlt::cluster_final_layer(plain, cfg.K, {.restarts = 50, .seed = s}), cfg);
      const dlt::DltLog log = dlt::fit_dlt(model, train, val, cfg);
      dlt::save_dlt(ddir, model, cfg);
      io::write_text(g_cache / ("attention_16_dlt_s" + std::to_string(seed) + "_log.json"),
                     io::canonical_dump(log.to_json()));
      io::write_text(ddir / "done",
                     fmt("%.0f s\n", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()));
    }
    const double t_mae = toymodel::evaluate_mae(big, val);
    const double p_mae = toymodel::evaluate_mae(plain, val);
    const double d_mae = dlt::evaluate_mae(model, val);
    const std::vector<int> names = dlt::name_groups(model, naming, scenegen::kNumDefaultClasses);
    const dlt::SegmentationEval ev = dlt::evaluate_segmentation(model, names, val, scenegen::kNumDefaultClasses);
    const auto it = ev.class_iou.find(scenegen::kBuilding);
    const std::optional<double> b_iou = it == ev.class_iou.end() ? std::nullopt : std::optional<double>(it->second);
    const bool near = d_mae <= (1.0 + kDltMaeSlack) * t_mae;
    const bool better = d_mae < p_mae;
    const bool seg = b_iou && *b_iou >= kBuildingIou;
    const bool ok = near && better && seg;
    if (ok) ++held;
    detail += "seed " + std::to_string(seed) + (ok ? " holds" : " fails") + " [MAE teacher " + fmt("%.3f", t_mae) +
              " plain16 " + fmt("%.3f", p_mae) + " dlt16 " + fmt("%.3f", d_mae) + " (" +
              fmt("%+.1f", 100 * (d_mae / t_mae - 1)) + "% vs teacher); building IoU " + opt(b_iou) + " mIoU " +
              opt(ev.miou) + "] ";
  }
  return {held >= kSeedsNeeded, std::to_string(held) + "/3 seeds; " + detail};
}

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root))
    if (e.is_regular_file()) out[fs::relative(e.path(), root).generic_string()] = io::read_text(e.path());
  return out;
}

Outcome c11() {
  const fs::path a = g_cache / "regen_a", b = g_cache / "regen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  const scenegen::SplitSizes sizes{40, 10, 10};
  scenegen::write_corpus(a, corpus_config(), sizes);
  scenegen::write_corpus(b, corpus_config(), sizes);
  const auto ta = read_tree(a), tb = read_tree(b);
  bool corpus_ok = ta == tb && ta.size() == 1 + 3 * 60;
  // the files decode to what the generator produced in memory
  const ScenePatch back = scenegen::read_patch(a / "val", scenegen::patch_id("val", 3));
  const ScenePatch mem = scenegen::generate_split(corpus_config(), sizes, "val")[3];
  corpus_ok = corpus_ok && back.height == mem.height && back.semantic == mem.semantic;

  bool arrays_ok = true;
  Rng rng(77);
  for (int t = 0; t < 50; ++t) {
    const int d0 = static_cast<int>(rng.uniform_int(1, 7)), d1 = static_cast<int>(rng.uniform_int(1, 9));
    std::vector<float> vals(static_cast<size_t>(d0 * d1));
    for (float& v : vals) v = static_cast<float>(rng.normal(0.0, 1e3));
    const io::FloatArray arr({d0, d1}, vals);
    const std::string bytes = io::encode_array(arr);
    const io::FloatArray got = io::decode_array(bytes);
    arrays_ok = arrays_ok && got.shape == arr.shape && got.values == arr.values && io::encode_array(got) == bytes;
  }
  const fs::path f = g_cache / "roundtrip.rawf";
  const io::FloatArray big({3, 4, 5}, std::vector<float>(60, -0.125f));
  io::write_array(f, big);
  arrays_ok = arrays_ok && io::read_array(f).values == big.values;

  io::Report r;
  r.kind = io::ReportKind::kPerturb;
  r.created_at = "2026-01-02T03:04:05Z";
  r.config_digest = io::config_digest({{"seed", 1}});
  r.body = {{"experiment", "scale"}, {"trend", 0.1 + 0.2}, {"values", {1e-300, -0.0, 3.0}}, {"cases", io::Json::array()}, {"skipped", 2}};
  const std::string text = io::encode_report(r);
  const io::Report rr = io::decode_report(text);
  const bool report_ok = io::encode_report(rr) == text && rr.body == r.body && rr.kind == r.kind;
  fs::remove_all(a);
  fs::remove_all(b);
  return {corpus_ok && arrays_ok && report_ok, std::string("corpus regeneration ") +
                                                   (corpus_ok ? "identical" : "differs") + ", arrays " +
                                                   (arrays_ok ? "exact" : "differ") + ", reports " +
                                                   (report_ok ? "exact" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> which;
  std::string cache = HEIGHTLENS_ACCEPTANCE_CACHE;
  app.add_option("--criterion", which, "criteria to run (default all)")->check(CLI::Range(1, 11));
  app.add_option("--cache", cache, "directory for trained networks")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  if (which.empty()) {
    which.resize(11);
    std::iota(which.begin(), which.end(), 1);
  }
  g_cache = cache;
  fs::create_directories(g_cache);
  const std::vector<std::function<Outcome()>> all = {c1, c2, c3, c4, c5, c6, c7, c8, c9, c10, c11};
  int failed = 0;
  for (int n : which) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[static_cast<size_t>(n - 1)]();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("criterion %2d: %s  (%.1f s) %s\n", n, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
    std::fflush(stdout);
    if (!o.pass) ++failed;
  }
  return failed == 0 ? 0 : 1;
}
