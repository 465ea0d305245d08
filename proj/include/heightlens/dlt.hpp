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

#ifndef HEIGHTLENS_DLT_HPP_
#define HEIGHTLENS_DLT_HPP_

#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/nn/ops.hpp"
#include "heightlens/raster.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::dlt {

using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;
using toymodel::FeatureStack;

// ------------------------------------------------------------- grouping

struct GroupAssignment {
  int K = 0;
  std::vector<int> assign;                     // unit -> group
  std::vector<std::vector<double>> centroids;  // K x dim
  std::vector<int> sizes;
  double inertia = 0.0;

  // Units of group g in ascending order.
  std::vector<int> members(int g) const;
  io::Json to_json() const;
  static GroupAssignment from_json(const io::Json& j);
};

struct KMeansConfig {
  int restarts = 50;
  int max_iterations = 300;
  uint64_t seed = 0;
};

// K-means++ seeded Lloyd iterations; the restart with the lowest inertia is
// kept. Empty clusters are repaired by moving the point of the largest
// cluster farthest from its centroid.
GroupAssignment kmeans(const std::vector<std::vector<double>>& points, int K,
                       const KMeansConfig& config = {});

// Incoming filter weights of each final-layer unit, L2-normalized.
std::vector<std::vector<double>> final_layer_vectors(const toymodel::Net& net);
GroupAssignment cluster_final_layer(const toymodel::Net& net, int K, const KMeansConfig& config = {});

// Per-group stacks of feature maps, channels ordered by unit index.
std::vector<FeatureStack> group_features(const FeatureStack& features, const GroupAssignment& groups);

// ---------------------------------------------------------- latent state

// K-channel maps (H x W x K).
struct LatentState {
  Raster<double> mu;
  Raster<double> log_var;
  Raster<double> prior_mu;
  // The prior variance is fixed at 1.
  static constexpr double kPriorVar = 1.0;
};

// mu + exp(log_var / 2) * noise.
Raster<double> sample_latent(const LatentState& state, const Raster<double>& noise);
// Closed-form KL(q || p) summed over groups and pixels.
double kl_term(const LatentState& state);

struct DltConfig {
  int K = scenegen::kNumDefaultClasses + 1;
  int hidden = 8;
  int head_width = 16;
  int epochs = 20;
  int batch_size = 4;
  double learning_rate = 2e-3;
  double height_weight = 1.0;
  double recon_weight = 0.5;
  double kl_weight = 0.01;
  double kl_warmup_epochs = 2.0;
  int samples = 1;  // L
  uint64_t seed = 0;
  bool log_progress = false;

  void validate() const;
  io::Json to_json() const;
  static DltConfig from_json(const io::Json& j);
};

template <typename T>
struct ElboTerms {
  Var<T> height;  // 1/2 sum (y - yhat)^2
  Var<T> recon;   // 1/2 sum (F_c - Fhat)^2, averaged over samples
  Var<T> kl;
  Var<T> loss;    // scale * (w_h height + w_r recon + w_kl kl)
  Var<T> mu;      // [B, h, w, K]
  Var<T> log_var;
  Var<T> prior_mu;
  Var<T> pred;    // [B, H, W, 1]
};

struct ElboWeights {
  double height = 1.0;
  double recon = 0.5;
  double kl = 0.01;
  double scale = 1.0;  // N / M
};

// Network with a DLT head on its final feature layer. The reconstruction
// targets F_c and the prior come from a frozen teacher with the same final
// layer, by default a snapshot of the network before fine-tuning. Taking
// them from the live features instead lets the targets chase the encoder.
template <typename T>
class DltModel {
 public:
  DltModel() = default;
  DltModel(toymodel::Network<T> base, GroupAssignment groups, const DltConfig& config)
      : DltModel(base, std::move(groups), config, base) {}
  DltModel(toymodel::Network<T> base, GroupAssignment groups, const DltConfig& config,
           toymodel::Network<T> teacher)
      : base_(std::move(base)), teacher_(std::move(teacher)), groups_(std::move(groups)),
        hidden_(config.hidden), head_width_(config.head_width) {
    if (groups_.assign.size() != static_cast<size_t>(base_.spec().final_units)) {
      throw ShapeError("group assignment does not match the final layer width");
    }
    if (teacher_.spec().final_units != base_.spec().final_units) {
      throw ShapeError("teacher final layer width differs from the fine-tuned network");
    }
    init_head(config.seed);
  }

  toymodel::Network<T>& base() { return base_; }
  const toymodel::Network<T>& base() const { return base_; }
  const toymodel::Network<T>& teacher() const { return teacher_; }
  const GroupAssignment& groups() const { return groups_; }
  ParamStore<T>& head() { return head_; }
  const ParamStore<T>& head() const { return head_; }
  int K() const { return groups_.K; }
  int hidden() const { return hidden_; }
  int head_width() const { return head_width_; }
  bool fitted() const { return fitted_; }
  void set_fitted(bool f) { fitted_ = f; }

  // Per-group (mu, log_var) from group feature stacks [B, h, w, n_i].
  std::pair<Var<T>, Var<T>> encode(Graph<T>& g, Var<T> group_feats, int gi, bool trainable) const {
    auto P = [&](const std::string& n) { return bind(g, "g" + std::to_string(gi) + "." + n, trainable); };
    Var<T> h = nn::gelu(nn::linear(group_feats, P("enc1.w"), P("enc1.b")));
    Var<T> o = nn::linear(h, P("enc2.w"), P("enc2.b"));
    return {nn::gather_channels(o, {0}), nn::gather_channels(o, {1})};
  }

  // Height prediction from the K latent means.
  Var<T> height_from(Graph<T>& g, Var<T> mu, int rows, int cols, bool trainable) const {
    auto P = [&](const std::string& n) { return bind(g, "hh." + n, trainable); };
    Var<T> h = nn::relu(nn::conv2d(mu, P("c1.w"), P("c1.b"), 1, 1));
    h = nn::conv2d(h, P("c2.w"), P("c2.b"), 1, 0);
    return nn::softplus(nn::resize_bilinear(h, rows, cols));
  }

  // Latent means, log variances and priors of all groups for a batch.
  struct Latents {
    Var<T> features;  // live final-layer features
    std::vector<Var<T>> group_feats, mu, log_var, prior;
  };

  Latents latents(Graph<T>& g, Var<T> images, bool trainable) const {
    Latents L;
    L.features = base_.features(g, images, trainable);
    Var<T> frozen = teacher_.features(g, images, false);
    for (int gi = 0; gi < K(); ++gi) {
      const std::vector<int> m = groups_.members(gi);
      Var<T> live = nn::gather_channels(L.features, m);
      auto [mu, lv] = encode(g, live, gi, trainable);
      L.group_feats.push_back(nn::gather_channels(frozen, m));
      L.mu.push_back(mu);
      L.log_var.push_back(lv);
      L.prior.push_back(nn::mean_channels(L.group_feats.back()));
    }
    return L;
  }

  // Builds the negated ELBO for a batch. `noise(l, gi, shape)` supplies the
  // standard-normal draws for sample l of group gi.
  ElboTerms<T> elbo(Graph<T>& g, Var<T> images, Var<T> heights, int samples, const ElboWeights& w,
                    const std::function<Tensor<T>(int, int, const std::vector<int>&)>& noise,
                    bool trainable) const {
    if (samples < 1) throw DomainError("elbo: samples L must be >= 1");
    Latents L = latents(g, images, trainable);
    ElboTerms<T> t;
    std::optional<Var<T>> recon, kl;
    for (int gi = 0; gi < K(); ++gi) {
      const std::string p = "g" + std::to_string(gi) + ".";
      const int n = L.group_feats[static_cast<size_t>(gi)].dim(-1);
      for (int l = 0; l < samples; ++l) {
        Var<T> z = nn::reparameterize(L.mu[static_cast<size_t>(gi)], L.log_var[static_cast<size_t>(gi)],
                                      noise(l, gi, L.mu[static_cast<size_t>(gi)].shape()));
        Var<T> rec = nn::channel_affine(nn::broadcast_channels(z, n), bind(g, p + "rec.a", trainable),
                                        bind(g, p + "rec.b", trainable));
        Var<T> e = nn::scale(nn::squared_error(rec, L.group_feats[static_cast<size_t>(gi)], false),
                             T(0.5) / static_cast<T>(samples));
        recon = recon ? nn::add(*recon, e) : e;
      }
      Var<T> k = nn::gaussian_kl(L.mu[static_cast<size_t>(gi)], L.log_var[static_cast<size_t>(gi)],
                                 L.prior[static_cast<size_t>(gi)]);
      kl = kl ? nn::add(*kl, k) : k;
    }
    t.mu = L.mu[0];
    t.log_var = L.log_var[0];
    t.prior_mu = L.prior[0];
    for (int gi = 1; gi < K(); ++gi) {
      t.mu = nn::concat_channels(t.mu, L.mu[static_cast<size_t>(gi)]);
      t.log_var = nn::concat_channels(t.log_var, L.log_var[static_cast<size_t>(gi)]);
      t.prior_mu = nn::concat_channels(t.prior_mu, L.prior[static_cast<size_t>(gi)]);
    }
    t.pred = height_from(g, t.mu, images.dim(1), images.dim(2), trainable);
    t.height = nn::scale(nn::squared_error(t.pred, heights, false), T(0.5));
    t.recon = *recon;
    t.kl = *kl;
    Var<T> total = nn::add(nn::add(nn::scale(t.height, static_cast<T>(w.height)),
                                   nn::scale(t.recon, static_cast<T>(w.recon))),
                           nn::scale(t.kl, static_cast<T>(w.kl)));
    t.loss = nn::scale(total, static_cast<T>(w.scale));
    return t;
  }

  // Latent means [B, h, w, K] and height predictions without sampling.
  std::pair<Var<T>, Var<T>> predict(Graph<T>& g, Var<T> images) const {
    Latents L = latents(g, images, false);
    Var<T> mu = L.mu[0];
    for (int gi = 1; gi < K(); ++gi) mu = nn::concat_channels(mu, L.mu[static_cast<size_t>(gi)]);
    return {mu, height_from(g, mu, images.dim(1), images.dim(2), false)};
  }

  Var<T> bind(Graph<T>& g, const std::string& name, bool trainable) const {
    auto& p = const_cast<nn::Parameter<T>&>(head_.at(name));
    return trainable ? g.param(p) : g.reference(p.value);
  }

  template <typename U>
  DltModel<U> cast() const {
    DltModel<U> out;
    out.assign(base_.template cast<U>(), teacher_.template cast<U>(), groups_, head_.template cast<U>(),
               hidden_, head_width_, fitted_);
    return out;
  }

  void assign(toymodel::Network<T> base, toymodel::Network<T> teacher, GroupAssignment groups,
              ParamStore<T> head, int hidden, int head_width, bool fitted) {
    base_ = std::move(base);
    teacher_ = std::move(teacher);
    groups_ = std::move(groups);
    head_ = std::move(head);
    hidden_ = hidden;
    head_width_ = head_width;
    fitted_ = fitted;
  }

 private:
  void init_head(uint64_t seed) {
    for (int gi = 0; gi < K(); ++gi) {
      const std::string p = "g" + std::to_string(gi) + ".";
      const int n = groups_.sizes[static_cast<size_t>(gi)];
      head_.add(p + "enc1.w", toymodel::init_tensor<T>({n, hidden_}, std::sqrt(2.0 / n), seed, p + "enc1.w"));
      head_.add(p + "enc1.b", Tensor<T>({hidden_}));
      Tensor<T> w2 = toymodel::init_tensor<T>({hidden_, 2}, std::sqrt(1.0 / hidden_), seed, p + "enc2.w");
      // log_var starts flat at the bias: unnormalised features would put
      // exp(log_var) out of float range otherwise
      for (int h = 0; h < hidden_; ++h) w2.data[static_cast<size_t>(h) * 2 + 1] = T(0);
      head_.add(p + "enc2.w", std::move(w2));
      head_.add(p + "enc2.b", Tensor<T>({2}, std::vector<T>{T(0), T(-2)}));
      head_.add(p + "rec.a", Tensor<T>({n}, T(1)));
      head_.add(p + "rec.b", Tensor<T>({n}));
    }
    head_.add("hh.c1.w", toymodel::init_tensor<T>({3, 3, K(), head_width_}, std::sqrt(2.0 / (9 * K())),
                                                  seed, "hh.c1.w"));
    head_.add("hh.c1.b", Tensor<T>({head_width_}));
    head_.add("hh.c2.w", toymodel::init_tensor<T>({1, 1, head_width_, 1}, 0.1 / std::sqrt(head_width_),
                                                  seed, "hh.c2.w"));
    head_.add("hh.c2.b", Tensor<T>({1}, static_cast<T>(std::log(std::expm1(3.0)))));
  }

  toymodel::Network<T> base_;
  toymodel::Network<T> teacher_;
  GroupAssignment groups_;
  ParamStore<T> head_;
  int hidden_ = 8;
  int head_width_ = 16;
  bool fitted_ = false;
};

using Dlt = DltModel<float>;

// Latent state of one image from its per-group feature stacks (any
// resolution); requires a fitted model.
LatentState latent_forward(const Dlt& model, const std::vector<FeatureStack>& groups);
// Latent state at the model's feature resolution for an image.
LatentState latent_state(const Dlt& model, const Image& image);

struct DltEpoch {
  int epoch = 0;
  double loss = 0.0;  // negated ELBO at nominal weights, mean per batch
  double height = 0.0;
  double recon = 0.0;
  double kl = 0.0;
  std::optional<double> val_mae;
};

struct DltLog {
  std::vector<DltEpoch> epochs;
  io::Json to_json() const;  // training report body
};

// End-to-end fine-tuning of `model` under the ELBO.
DltLog fit_dlt(Dlt& model, const std::vector<scenegen::ScenePatch>& train_set,
               const std::vector<scenegen::ScenePatch>& val_set, const DltConfig& config);

std::vector<RealMap> predict_heights(const Dlt& model, const std::vector<scenegen::ScenePatch>& patches);
double evaluate_mae(const Dlt& model, const std::vector<scenegen::ScenePatch>& patches);

// ------------------------------------------------------------ segmentation

struct OtsuResult {
  double threshold = 0.0;
  int cut = 0;  // first bin of the foreground class
  Mask mask;    // map > threshold
  bool degenerate = false;
};

// 256 bins over [min, max]; bin j (0-based) holds values v with
// e_j < v <= e_{j+1}, e_j = min + j * (max - min) / 256, the lowest value
// going to bin 0. The cut maximizes between-class variance of the bin
// levels; ties go to the lowest cut.
OtsuResult otsu_threshold(const RealMap& map);
std::vector<int> otsu_bins(const RealMap& map, double* lo = nullptr, double* hi = nullptr);
double between_class_variance(const std::vector<size_t>& histogram, int cut);

struct SegmentationMaps {
  std::vector<Mask> masks;  // per group, image-sized
  std::vector<double> thresholds;
  std::vector<bool> degenerate;
  std::vector<int> group_to_class;  // -1 = unnamed; empty until naming
};

SegmentationMaps segment(const Dlt& model, const Image& image);

// Maximum-total-score assignment of rows to columns (rectangular allowed);
// returns the column of each row or -1.
std::vector<int> hungarian_max(const std::vector<std::vector<double>>& score);

// Names groups by Hungarian matching of pooled group/class IoU on `naming`.
std::vector<int> name_groups(const Dlt& model, const std::vector<scenegen::ScenePatch>& naming,
                             int num_classes);

struct SegmentationEval {
  std::vector<int> group_to_class;
  std::map<int, double> class_iou;  // class -> pooled IoU of its group
  std::vector<double> mean_thresholds;
  std::optional<double> miou;
  io::Json to_json(const std::vector<std::string>& classes, int K) const;  // dlt report body
};

SegmentationEval evaluate_segmentation(const Dlt& model, const std::vector<int>& group_to_class,
                                       const std::vector<scenegen::ScenePatch>& patches, int num_classes);

// ------------------------------------------------------------ checkpoints

void save_dlt(const std::filesystem::path& dir, const Dlt& model, const DltConfig& config);
Dlt load_dlt(const std::filesystem::path& dir, DltConfig* config = nullptr);

}  // namespace heightlens::dlt

#endif  // HEIGHTLENS_DLT_HPP_
