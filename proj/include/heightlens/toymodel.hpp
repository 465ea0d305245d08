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

#ifndef HEIGHTLENS_TOYMODEL_HPP_
#define HEIGHTLENS_TOYMODEL_HPP_

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/nn/graph.hpp"
#include "heightlens/nn/ops.hpp"
#include "heightlens/random.hpp"
#include "heightlens/raster.hpp"
#include "heightlens/scenegen.hpp"

namespace heightlens::toymodel {

using nn::Graph;
using nn::ParamStore;
using nn::Tensor;
using nn::Var;

enum class Variant { kAttention, kConv };

std::string variant_name(Variant v);
Variant parse_variant(const std::string& name);

struct ModelSpec {
  Variant variant = Variant::kAttention;
  int final_units = 64;
  int depth = 3;
  int attention_heads = 2;
  int base_width = 16;  // channels of the first stage; doubled per stage
  int window = 8;       // attention window (tokens per side)
  int num_classes = scenegen::kNumDefaultClasses;
  uint64_t seed = 0;

  void validate() const;
  int width(int stage) const { return base_width << stage; }
  io::Json to_json() const;
  static ModelSpec from_json(const io::Json& j);
};

// Conv variant whose parameter count is closest to `attention`'s.
ModelSpec matched_conv_spec(const ModelSpec& attention);

enum class Loss { kL1, kL2 };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 4;
  double learning_rate = 2e-3;
  Loss loss = Loss::kL2;
  uint64_t seed = 0;
  std::string corpus_root;
  int train_limit = -1;  // first N training patches; -1 = all
  int val_limit = -1;
  bool log_progress = false;

  void validate() const;
  io::Json to_json() const;
  static TrainConfig from_json(const io::Json& j);
};

// n maps of the penultimate layer upsampled to the image size (H x W x n).
using FeatureStack = Raster<float>;

struct ForwardResult {
  RealMap height_pred;
  FeatureStack features;
};

template <typename T>
Tensor<T> init_tensor(std::vector<int> shape, double stddev, uint64_t seed,
                      const std::string& name) {
  uint64_t h = 1469598103934665603ULL;
  for (char c : name) h = (h ^ static_cast<uint8_t>(c)) * 1099511628211ULL;
  Rng rng(mix_seed(seed, h));
  Tensor<T> t(std::move(shape));
  for (T& v : t.data) v = static_cast<T>(stddev * rng.normal());
  return t;
}

// Encoder-decoder height regressor. Parameters live in a name-ordered store
// so that checkpoints and optimizer state have a fixed layout.
template <typename T>
class Network {
 public:
  struct Output {
    Var<T> features;  // [B, h, w, n] after ReLU, stride-4 grid
    Var<T> height;    // [B, H, W, 1]
  };

  Network() = default;
  explicit Network(ModelSpec spec) : spec_(std::move(spec)) {
    spec_.validate();
    init_trunk();
    init_final();
  }

  Network(ModelSpec spec, ParamStore<T> params) : spec_(std::move(spec)), params_(std::move(params)) {}

  template <typename U>
  Network<U> cast() const {
    return Network<U>(spec_, params_.template cast<U>());
  }

  const ModelSpec& spec() const { return spec_; }
  ModelSpec& mutable_spec() { return spec_; }
  ParamStore<T>& params() { return params_; }
  const ParamStore<T>& params() const { return params_; }

  // Re-creates the final feature layer and head with fresh weights.
  void init_final() {
    const int c0 = spec_.width(0);
    const int n = spec_.final_units;
    params_.add("final.w", he({1, 1, c0, n}, "final.w"));
    params_.add("final.b", Tensor<T>({n}, T(0.01)));
    params_.add("head.w", init_tensor<T>({1, 1, n, 1}, 0.1 / std::sqrt(n), spec_.seed, "head.w"));
    // softplus(b) ~ 3 m, near the corpus mean height
    params_.add("head.b", Tensor<T>({1}, static_cast<T>(std::log(std::expm1(3.0)))));
  }

  // `trainable` selects whether weights receive gradients in this graph.
  Output forward(Graph<T>& g, Var<T> images, bool trainable) const {
    Var<T> feats = features(g, images, trainable);
    return {feats, head(g, feats, images.dim(1), images.dim(2), trainable)};
  }

  Var<T> features(Graph<T>& g, Var<T> images, bool trainable) const {
    auto P = [&](const std::string& name) { return bind(g, name, trainable); };
    const bool attn = spec_.variant == Variant::kAttention;
    Var<T> x = nn::conv2d(images, P("stem.w"), P("stem.b"), 4, 0);
    if (!attn) x = nn::relu(x);
    std::vector<Var<T>> skips;
    for (int i = 0; i < spec_.depth; ++i) {
      const std::string s = "enc" + std::to_string(i);
      if (i > 0) {
        const std::string d = "down" + std::to_string(i);
        x = nn::conv2d(x, P(d + ".w"), P(d + ".b"), 2, 1);
        if (!attn) x = nn::relu(x);
      }
      x = attn ? attention_block(g, x, s, trainable) : conv_block(g, x, s, trainable);
      skips.push_back(x);
    }
    for (int i = spec_.depth - 1; i >= 1; --i) {
      const std::string s = "dec" + std::to_string(i);
      const Var<T>& skip = skips[static_cast<size_t>(i - 1)];
      Var<T> up = nn::resize_bilinear(x, skip.dim(1), skip.dim(2));
      x = nn::concat_channels(up, skip);
      x = nn::relu(nn::conv2d(x, P(s + ".reduce.w"), P(s + ".reduce.b"), 1, 0));
      x = nn::relu(nn::conv2d(x, P(s + ".conv.w"), P(s + ".conv.b"), 1, 1));
    }
    return nn::relu(nn::conv2d(x, P("final.w"), P("final.b"), 1, 0));
  }

  // 1x1 regression on the low-resolution features, upsampled, then softplus.
  // Bilinear upsampling and the 1x1 layer are both linear, so this equals
  // applying the head to the upsampled feature maps.
  Var<T> head(Graph<T>& g, Var<T> feats, int rows, int cols, bool trainable) const {
    Var<T> h = nn::conv2d(feats, bind(g, "head.w", trainable), bind(g, "head.b", trainable), 1, 0);
    return nn::softplus(nn::resize_bilinear(h, rows, cols));
  }

  Var<T> bind(Graph<T>& g, const std::string& name, bool trainable) const {
    auto& p = const_cast<nn::Parameter<T>&>(params_.at(name));
    return trainable ? g.param(p) : g.reference(p.value);
  }

 private:
  Tensor<T> he(std::vector<int> shape, const std::string& name, double gain = 1.0) {
    int fan_in = 1;
    for (size_t i = 0; i + 1 < shape.size(); ++i) fan_in *= shape[i];
    return init_tensor<T>(std::move(shape), gain * std::sqrt(2.0 / fan_in), spec_.seed, name);
  }
  Tensor<T> lecun(std::vector<int> shape, const std::string& name, double gain = 1.0) {
    const int fan_in = shape[0];
    return init_tensor<T>(std::move(shape), gain * std::sqrt(1.0 / fan_in), spec_.seed, name);
  }
  void add_bias(const std::string& name, int n) { params_.add(name, Tensor<T>({n})); }

  void init_trunk() {
    const int c0 = spec_.width(0);
    params_.add("stem.w", he({4, 4, 3, c0}, "stem.w"));
    add_bias("stem.b", c0);
    for (int i = 0; i < spec_.depth; ++i) {
      const int c = spec_.width(i);
      const std::string s = "enc" + std::to_string(i);
      if (i > 0) {
        const std::string d = "down" + std::to_string(i);
        params_.add(d + ".w", he({3, 3, spec_.width(i - 1), c}, d + ".w"));
        add_bias(d + ".b", c);
      }
      if (spec_.variant == Variant::kAttention) {
        const int span = 2 * spec_.window - 1;
        params_.add(s + ".ln1.g", Tensor<T>({c}, T(1)));
        add_bias(s + ".ln1.b", c);
        params_.add(s + ".qkv.w", lecun({c, 3 * c}, s + ".qkv.w"));
        add_bias(s + ".qkv.b", 3 * c);
        params_.add(s + ".relbias", init_tensor<T>({span * span, spec_.attention_heads}, 0.02,
                                                   spec_.seed, s + ".relbias"));
        params_.add(s + ".proj.w", lecun({c, c}, s + ".proj.w", 0.5));
        add_bias(s + ".proj.b", c);
        params_.add(s + ".ln2.g", Tensor<T>({c}, T(1)));
        add_bias(s + ".ln2.b", c);
        params_.add(s + ".mlp1.w", he({c, 2 * c}, s + ".mlp1.w"));
        add_bias(s + ".mlp1.b", 2 * c);
        params_.add(s + ".mlp2.w", lecun({2 * c, c}, s + ".mlp2.w", 0.5));
        add_bias(s + ".mlp2.b", c);
      } else {
        params_.add(s + ".c1.w", he({3, 3, c, c}, s + ".c1.w"));
        add_bias(s + ".c1.b", c);
        params_.add(s + ".c2.w", he({3, 3, c, c}, s + ".c2.w", 0.5));
        add_bias(s + ".c2.b", c);
      }
    }
    for (int i = spec_.depth - 1; i >= 1; --i) {
      const std::string s = "dec" + std::to_string(i);
      const int lo = spec_.width(i - 1);
      params_.add(s + ".reduce.w", he({1, 1, spec_.width(i) + lo, lo}, s + ".reduce.w"));
      add_bias(s + ".reduce.b", lo);
      params_.add(s + ".conv.w", he({3, 3, lo, lo}, s + ".conv.w"));
      add_bias(s + ".conv.b", lo);
    }
  }

  Var<T> attention_block(Graph<T>& g, Var<T> x, const std::string& s, bool trainable) const {
    auto P = [&](const std::string& name) { return bind(g, s + "." + name, trainable); };
    Var<T> y = nn::layer_norm(x, P("ln1.g"), P("ln1.b"));
    y = nn::linear(y, P("qkv.w"), P("qkv.b"));
    y = nn::window_attention(y, P("relbias"), spec_.attention_heads, spec_.window);
    x = nn::add(x, nn::linear(y, P("proj.w"), P("proj.b")));
    y = nn::layer_norm(x, P("ln2.g"), P("ln2.b"));
    y = nn::gelu(nn::linear(y, P("mlp1.w"), P("mlp1.b")));
    return nn::add(x, nn::linear(y, P("mlp2.w"), P("mlp2.b")));
  }

  Var<T> conv_block(Graph<T>& g, Var<T> x, const std::string& s, bool trainable) const {
    auto P = [&](const std::string& name) { return bind(g, s + "." + name, trainable); };
    Var<T> y = nn::relu(nn::conv2d(x, P("c1.w"), P("c1.b"), 1, 1));
    y = nn::conv2d(y, P("c2.w"), P("c2.b"), 1, 1);
    return nn::relu(nn::add(x, y));
  }

  ModelSpec spec_;
  ParamStore<T> params_;
};

using Net = Network<float>;

// ------------------------------------------------------------- batching

// Stacks images into [B, H, W, 3] and heights into [B, H, W, 1].
Tensor<float> stack_images(const std::vector<const scenegen::ScenePatch*>& batch);
Tensor<float> stack_heights(const std::vector<const scenegen::ScenePatch*>& batch);
Tensor<float> image_tensor(const Image& image);

// -------------------------------------------------------------- inference

ForwardResult forward(const Net& net, const Image& image);
// Height predictions only, evaluated in batches.
std::vector<RealMap> predict_heights(const Net& net, const std::vector<scenegen::ScenePatch>& patches,
                                     int batch_size = 8);
// Pixel-pooled MAE of predictions against ground truth.
double evaluate_mae(const Net& net, const std::vector<scenegen::ScenePatch>& patches);
// MAE of predicting the training-set mean height everywhere.
double mean_height_baseline_mae(const std::vector<scenegen::ScenePatch>& train,
                                const std::vector<scenegen::ScenePatch>& val);

// --------------------------------------------------------------- training

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  std::optional<double> val_mae;
};

struct TrainLog {
  std::vector<EpochLog> epochs;
  io::Json to_json() const;  // training report body
};

struct Batch {
  std::vector<const scenegen::ScenePatch*> patches;
  Var<float> images;
  Var<float> heights;
};

// Additional loss term and its parameters, trained jointly with the network.
struct Objective {
  ParamStore<float>* extra_params = nullptr;
  std::function<Var<float>(Graph<float>&, const Batch&, const Net::Output&)> term;
};

// Optimizes `net` in place on `train_set`, logging val MAE each epoch.
TrainLog fit(Net& net, const std::vector<scenegen::ScenePatch>& train_set,
             const std::vector<scenegen::ScenePatch>& val_set, const TrainConfig& config,
             const Objective* objective = nullptr);

// Loads config.corpus_root and trains a fresh network.
Net train(const ModelSpec& spec, const TrainConfig& config, TrainLog* log = nullptr);

Net compress_head(const Net& net, int new_units);

// Fine-tunes `student` with height loss + weight * MSE(student features,
// learned 1x1 projection of teacher features).
TrainLog distill_features(const Net& teacher, Net& student,
                          const std::vector<scenegen::ScenePatch>& train_set,
                          const std::vector<scenegen::ScenePatch>& val_set,
                          const TrainConfig& config, double weight);

// Distillation term on one batch, for inspection.
double distillation_loss(const Net& teacher, const Net& student, const ParamStore<float>& projection,
                         const Image& image);
ParamStore<float> init_projection(int teacher_units, int student_units);

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const std::filesystem::path& dir, const Net& net,
                     const io::Json& extra_arch = io::Json::object());
Net load_checkpoint(const std::filesystem::path& dir, io::Json* arch = nullptr);

}  // namespace heightlens::toymodel

#endif  // HEIGHTLENS_TOYMODEL_HPP_
