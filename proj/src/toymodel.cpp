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

#include "heightlens/toymodel.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "heightlens/nn/adam.hpp"

namespace heightlens::toymodel {

namespace {

using scenegen::ScenePatch;

void reject_unknown(const io::Json& j, std::initializer_list<const char*> keys,
                    const std::string& where) {
  if (!j.is_object()) throw SchemaError(where, "expected an object");
  for (const auto& [k, v] : j.items()) {
    bool known = false;
    for (const char* key : keys) known = known || k == key;
    if (!known) throw SchemaError(where + "/" + k, "unknown key '" + k + "'");
  }
}

template <typename V>
void read_key(const io::Json& j, const char* key, V& out) {
  if (j.contains(key)) out = j.at(key).get<V>();
}

size_t param_count(const ModelSpec& spec) { return Network<float>(spec).params().scalar_count(); }

}  // namespace

std::string variant_name(Variant v) { return v == Variant::kAttention ? "attention" : "conv"; }

Variant parse_variant(const std::string& name) {
  if (name == "attention") return Variant::kAttention;
  if (name == "conv") return Variant::kConv;
  throw DomainError("unknown variant '" + name + "' (expected attention or conv)");
}

void ModelSpec::validate() const {
  if (depth < 2) throw DomainError("depth must be >= 2");
  if (final_units < num_classes) {
    throw DomainError("final_units (" + std::to_string(final_units) +
                      ") must be >= the number of classes (" + std::to_string(num_classes) + ")");
  }
  if (base_width < 1 || window < 1) throw DomainError("base_width and window must be >= 1");
  if (variant == Variant::kAttention) {
    if (attention_heads < 1 || base_width % attention_heads != 0) {
      throw DomainError("base_width must be divisible by attention_heads");
    }
  }
}

io::Json ModelSpec::to_json() const {
  return {{"variant", variant_name(variant)}, {"final_units", final_units},
          {"depth", depth},                   {"attention_heads", attention_heads},
          {"base_width", base_width},         {"window", window},
          {"num_classes", num_classes},       {"seed", seed}};
}

ModelSpec ModelSpec::from_json(const io::Json& j) {
  reject_unknown(j, {"variant", "final_units", "depth", "attention_heads", "base_width", "window",
                     "num_classes", "seed"},
                 "/model");
  ModelSpec s;
  if (j.contains("variant")) s.variant = parse_variant(j.at("variant").get<std::string>());
  read_key(j, "final_units", s.final_units);
  read_key(j, "depth", s.depth);
  read_key(j, "attention_heads", s.attention_heads);
  read_key(j, "base_width", s.base_width);
  read_key(j, "window", s.window);
  read_key(j, "num_classes", s.num_classes);
  read_key(j, "seed", s.seed);
  s.validate();
  return s;
}

ModelSpec matched_conv_spec(const ModelSpec& attention) {
  const double target = static_cast<double>(param_count(attention));
  ModelSpec best = attention;
  best.variant = Variant::kConv;
  double best_gap = INFINITY;
  for (int w = 2; w <= 4 * attention.base_width; ++w) {
    ModelSpec s = attention;
    s.variant = Variant::kConv;
    s.base_width = w;
    const double gap = std::abs(static_cast<double>(param_count(s)) - target) / target;
    if (gap < best_gap) {
      best_gap = gap;
      best = s;
    }
  }
  if (best_gap > 0.10) throw Error("no conv width within 10% of the attention parameter count");
  return best;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw DomainError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw DomainError("learning_rate must be > 0");
  if (epochs < 0) throw DomainError("epochs must be >= 0");
}

io::Json TrainConfig::to_json() const {
  return {{"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"loss", loss == Loss::kL1 ? "L1" : "L2"},
          {"seed", seed},
          {"corpus_root", corpus_root},
          {"train_limit", train_limit},
          {"val_limit", val_limit}};
}

TrainConfig TrainConfig::from_json(const io::Json& j) {
  reject_unknown(j, {"epochs", "batch_size", "learning_rate", "loss", "seed", "corpus_root",
                     "train_limit", "val_limit"},
                 "/train");
  TrainConfig c;
  read_key(j, "epochs", c.epochs);
  read_key(j, "batch_size", c.batch_size);
  read_key(j, "learning_rate", c.learning_rate);
  if (j.contains("loss")) {
    const std::string l = j.at("loss").get<std::string>();
    if (l == "L1") c.loss = Loss::kL1;
    else if (l == "L2") c.loss = Loss::kL2;
    else throw SchemaError("/train/loss", "expected L1 or L2");
  }
  read_key(j, "seed", c.seed);
  read_key(j, "corpus_root", c.corpus_root);
  read_key(j, "train_limit", c.train_limit);
  read_key(j, "val_limit", c.val_limit);
  c.validate();
  return c;
}

// ------------------------------------------------------------- batching

Tensor<float> image_tensor(const Image& image) {
  if (image.channels() != 3) throw ShapeError("image must have 3 channels");
  return Tensor<float>({1, image.rows(), image.cols(), 3}, image.storage());
}

Tensor<float> stack_images(const std::vector<const ScenePatch*>& batch) {
  const Image& first = batch.front()->image;
  Tensor<float> t({static_cast<int>(batch.size()), first.rows(), first.cols(), 3});
  size_t off = 0;
  for (const ScenePatch* p : batch) {
    require_same_grid(first, p->image, "stack_images");
    std::copy(p->image.storage().begin(), p->image.storage().end(), t.data.begin() + off);
    off += p->image.size();
  }
  return t;
}

Tensor<float> stack_heights(const std::vector<const ScenePatch*>& batch) {
  const RealMap& first = batch.front()->height;
  Tensor<float> t({static_cast<int>(batch.size()), first.rows(), first.cols(), 1});
  size_t off = 0;
  for (const ScenePatch* p : batch) {
    require_same_grid(first, p->height, "stack_heights");
    std::copy(p->height.storage().begin(), p->height.storage().end(), t.data.begin() + off);
    off += p->height.size();
  }
  return t;
}

// -------------------------------------------------------------- inference

ForwardResult forward(const Net& net, const Image& image) {
  Graph<float> g(false);
  Var<float> x = g.constant(image_tensor(image));
  Net::Output out = net.forward(g, x, false);
  const int H = image.rows(), W = image.cols(), n = net.spec().final_units;
  ForwardResult r;
  r.height_pred = RealMap(H, W);
  const Tensor<float>& h = out.height.value();
  std::copy(h.data.begin(), h.data.end(), r.height_pred.storage().begin());
  const Tensor<float>& f = nn::resize_bilinear(out.features, H, W).value();
  r.features = FeatureStack(H, W, n);
  std::copy(f.data.begin(), f.data.end(), r.features.storage().begin());
  return r;
}

std::vector<RealMap> predict_heights(const Net& net, const std::vector<ScenePatch>& patches,
                                     int batch_size) {
  std::vector<RealMap> out;
  out.reserve(patches.size());
  for (size_t s = 0; s < patches.size(); s += static_cast<size_t>(batch_size)) {
    std::vector<const ScenePatch*> batch;
    for (size_t i = s; i < std::min(patches.size(), s + batch_size); ++i) batch.push_back(&patches[i]);
    Graph<float> g(false);
    Var<float> x = g.constant(stack_images(batch));
    const Tensor<float>& h = net.forward(g, x, false).height.value();
    const int H = h.dim(1), W = h.dim(2);
    for (size_t b = 0; b < batch.size(); ++b) {
      RealMap m(H, W);
      std::copy(h.data.begin() + static_cast<long>(b * H * W),
                h.data.begin() + static_cast<long>((b + 1) * H * W), m.storage().begin());
      out.push_back(std::move(m));
    }
  }
  return out;
}

double evaluate_mae(const Net& net, const std::vector<ScenePatch>& patches) {
  const std::vector<RealMap> preds = predict_heights(net, patches);
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < patches.size(); ++i) {
    const auto& gt = patches[i].height.storage();
    const auto& p = preds[i].storage();
    for (size_t k = 0; k < gt.size(); ++k) s += std::abs(static_cast<double>(p[k]) - gt[k]);
    n += gt.size();
  }
  if (n == 0) throw Error("evaluate_mae: empty set");
  return s / static_cast<double>(n);
}

double mean_height_baseline_mae(const std::vector<ScenePatch>& train,
                                const std::vector<ScenePatch>& val) {
  double sum = 0.0;
  size_t n = 0;
  for (const auto& p : train) {
    for (float v : p.height.storage()) sum += v;
    n += p.height.size();
  }
  if (n == 0) throw Error("mean_height_baseline_mae: empty training set");
  const double mean = sum / static_cast<double>(n);
  double err = 0.0;
  size_t m = 0;
  for (const auto& p : val) {
    for (float v : p.height.storage()) err += std::abs(v - mean);
    m += p.height.size();
  }
  if (m == 0) throw Error("mean_height_baseline_mae: empty validation set");
  return err / static_cast<double>(m);
}

// --------------------------------------------------------------- training

io::Json TrainLog::to_json() const {
  io::Json arr = io::Json::array();
  for (const EpochLog& e : epochs) {
    arr.push_back({{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"val_mae", e.val_mae ? io::Json(*e.val_mae) : io::Json(nullptr)}});
  }
  return {{"epochs", arr}};
}

TrainLog fit(Net& net, const std::vector<ScenePatch>& train_set,
             const std::vector<ScenePatch>& val_set, const TrainConfig& config,
             const Objective* objective) {
  config.validate();
  if (train_set.empty()) throw Error("fit: empty training set");
  const size_t N = train_set.size();
  const size_t B = static_cast<size_t>(config.batch_size);
  const long steps_per_epoch = static_cast<long>((N + B - 1) / B);
  const long total = steps_per_epoch * config.epochs;
  nn::Adam<float> opt({.learning_rate = config.learning_rate});
  nn::Adam<float> extra_opt({.learning_rate = config.learning_rate});
  ParamStore<float>* extra = objective ? objective->extra_params : nullptr;

  std::vector<size_t> order(N);
  TrainLog log;
  long step = 0;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), size_t{0});
    Rng rng(mix_seed(config.seed, static_cast<uint64_t>(epoch)));
    rng.shuffle(order);
    double loss_sum = 0.0;
    for (size_t s = 0; s < N; s += B, ++step) {
      Batch batch;
      for (size_t i = s; i < std::min(N, s + B); ++i) batch.patches.push_back(&train_set[order[i]]);
      Graph<float> g;
      batch.images = g.constant(stack_images(batch.patches));
      batch.heights = g.constant(stack_heights(batch.patches));
      Net::Output out = net.forward(g, batch.images, true);
      Var<float> loss = config.loss == Loss::kL1 ? nn::l1_loss(out.height, batch.heights)
                                                 : nn::squared_error(out.height, batch.heights, true);
      if (objective && objective->term) loss = nn::add(loss, objective->term(g, batch, out));
      const double lv = loss.value().data[0];
      if (!std::isfinite(lv)) throw DivergenceError(epoch, "training loss is not finite");
      net.params().zero_grad();
      if (extra) extra->zero_grad();
      g.backward(loss);
      const double lr = nn::cosine_lr(config.learning_rate, step, total);
      opt.step(net.params(), lr);
      if (extra) extra_opt.step(*extra, lr);
      loss_sum += lv * static_cast<double>(batch.patches.size());
    }
    EpochLog e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(N);
    if (!val_set.empty()) e.val_mae = evaluate_mae(net, val_set);
    if (config.log_progress) {
      std::fprintf(stderr, "epoch %d  train_loss %.4f  val_mae %.4f\n", epoch, e.train_loss,
                   e.val_mae.value_or(NAN));
    }
    log.epochs.push_back(e);
  }
  return log;
}

Net train(const ModelSpec& spec, const TrainConfig& config, TrainLog* log) {
  const auto train_set = scenegen::load_split(config.corpus_root, "train", config.train_limit);
  const auto val_set = scenegen::load_split(config.corpus_root, "val", config.val_limit);
  Net net(spec);
  TrainLog l = fit(net, train_set, val_set, config);
  if (log) *log = std::move(l);
  return net;
}

Net compress_head(const Net& net, int new_units) {
  const ModelSpec& s = net.spec();
  if (new_units < s.num_classes) {
    throw DomainError("cannot compress to " + std::to_string(new_units) + " units: fewer than the " +
                      std::to_string(s.num_classes) + " classes");
  }
  if (new_units > s.final_units) {
    throw DomainError("compress_head cannot grow the final layer (" +
                      std::to_string(s.final_units) + " -> " + std::to_string(new_units) + ")");
  }
  Net out = net;
  if (new_units == s.final_units) return out;
  out.mutable_spec().final_units = new_units;
  out.init_final();
  return out;
}

// ---------------------------------------------------------- distillation

ParamStore<float> init_projection(int teacher_units, int student_units) {
  ParamStore<float> p;
  Tensor<float> w({1, 1, teacher_units, student_units});
  for (int i = 0; i < std::min(teacher_units, student_units); ++i) {
    w.data[static_cast<size_t>(i) * student_units + i] = 1.0f;
  }
  p.add("proj.w", std::move(w));
  p.add("proj.b", Tensor<float>({student_units}));
  return p;
}

namespace {

Var<float> distill_term(Graph<float>& g, const Net& teacher, ParamStore<float>& proj,
                        Var<float> images, Var<float> student_features, bool trainable) {
  Var<float> tf = teacher.features(g, images, false);
  auto P = [&](const char* name) {
    auto& p = proj.at(name);
    return trainable ? g.param(p) : g.reference(p.value);
  };
  Var<float> target = nn::conv2d(tf, P("proj.w"), P("proj.b"), 1, 0);
  return nn::squared_error(student_features, target, true);
}

}  // namespace

double distillation_loss(const Net& teacher, const Net& student, const ParamStore<float>& projection,
                         const Image& image) {
  Graph<float> g(false);
  Var<float> x = g.constant(image_tensor(image));
  Var<float> sf = student.features(g, x, false);
  auto& proj = const_cast<ParamStore<float>&>(projection);
  return distill_term(g, teacher, proj, x, sf, false).value().data[0];
}

TrainLog distill_features(const Net& teacher, Net& student, const std::vector<ScenePatch>& train_set,
                          const std::vector<ScenePatch>& val_set, const TrainConfig& config,
                          double weight) {
  if (teacher.spec().final_units < student.spec().final_units) {
    throw DomainError("teacher must have at least as many final units as the student");
  }
  ParamStore<float> proj = init_projection(teacher.spec().final_units, student.spec().final_units);
  Objective obj;
  obj.extra_params = &proj;
  obj.term = [&](Graph<float>& g, const Batch& batch, const Net::Output& out) {
    Var<float> d = distill_term(g, teacher, proj, batch.images, out.features, true);
    return nn::scale(d, static_cast<float>(weight));
  };
  return fit(student, train_set, val_set, config, &obj);
}

// ------------------------------------------------------------ checkpoints

void save_checkpoint(const std::filesystem::path& dir, const Net& net, const io::Json& extra_arch) {
  io::Checkpoint ck;
  ck.arch = extra_arch;
  ck.arch["model"] = net.spec().to_json();
  for (const auto& [name, p] : net.params()) {
    std::vector<int64_t> shape(p.value.shape.begin(), p.value.shape.end());
    ck.tensors[name] = io::FloatArray(std::move(shape), std::vector<float>(p.value.data.begin(), p.value.data.end()));
  }
  io::write_checkpoint(dir, ck);
}

Net load_checkpoint(const std::filesystem::path& dir, io::Json* arch) {
  io::Checkpoint ck = io::read_checkpoint(dir);
  if (!ck.arch.contains("model")) throw SchemaError("/model", "arch.json has no model section");
  Net net(ModelSpec::from_json(ck.arch.at("model")));
  for (auto& [name, p] : net.params()) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      throw ShapeError("checkpoint is missing tensor '" + name + "' required by arch.json");
    }
    std::vector<int> shape(it->second.shape.begin(), it->second.shape.end());
    if (shape != p.value.shape) {
      throw ShapeError("tensor '" + name + "' has shape " + nn::shape_string(shape) +
                       " but arch.json implies " + nn::shape_string(p.value.shape));
    }
    p.value.data.assign(it->second.values.begin(), it->second.values.end());
  }
  if (arch) *arch = ck.arch;
  return net;
}

}  // namespace heightlens::toymodel
