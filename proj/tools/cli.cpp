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

#include "cli.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

#include "CLI11.hpp"
#include "figures.hpp"
#include "heightlens/attribute.hpp"
#include "heightlens/dissect.hpp"
#include "heightlens/dlt.hpp"
#include "heightlens/metrics.hpp"
#include "heightlens/perturb.hpp"
#include "heightlens/random.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::cli {

namespace fs = std::filesystem;
using io::Json;
using scenegen::ScenePatch;

namespace {

// Bad invocation or configuration; maps to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

Json without(Json j, std::initializer_list<const char*> keys) {
  for (const char* k : keys) j.erase(k);
  return j;
}

}  // namespace

Json default_config() {
  Json train = without(toymodel::TrainConfig{}.to_json(), {"seed", "corpus_root"});
  train["compress_units"] = 0;
  train["distill_weight"] = 0.0;
  Json dlt = without(dlt::DltConfig{}.to_json(), {"seed"});
  dlt["train_limit"] = -1;
  dlt["val_limit"] = -1;
  dlt["kmeans_restarts"] = 50;
  return {
      {"subcommand", ""},
      {"seed", 0},
      {"jobs", 1},
      {"paths", {{"data", "data"}, {"ckpt", ""}, {"teacher", ""}, {"dlt", ""}, {"out", ""}, {"run_dir", ""}}},
      {"scene", without(scenegen::SceneConfig{}.to_json(), {"seed"})},
      {"splits", {{"train", 2000}, {"val", 200}, {"test", 200}}},
      {"model", without(toymodel::ModelSpec{}.to_json(), {"seed"})},
      {"train", train},
      {"dissect", {{"split", "val"}, {"limit", 200}, {"num_bins", 5}}},
      {"ood", {{"split", "val"}, {"limit", 20}, {"size", 32}, {"cell", 4}}},
      {"perturb",
       {{"experiment", "scale"},
        {"class", "building"},
        {"swap_classes", {"road", "tree", "building"}},
        {"split", "val"},
        {"scenes", 50}}},
      {"attribute",
       {{"class", "building"},
        {"split", "val"},
        {"scenes", 10},
        {"targets", 20},
        {"steps", 100},
        {"window", 16},
        {"radius", 4},
        {"batch", 10}}},
      {"dlt", dlt},
      {"segment", {{"naming_split", "val"}, {"eval_split", "test"}, {"limit", -1}, {"figures", 4}}},
      {"evaluate", {{"split", "test"}, {"limit", -1}, {"msge_scales", 4}}},
  };
}

void merge_config(Json& base, const Json& patch, const std::string& where) {
  if (!patch.is_object()) throw SchemaError(where.empty() ? "/" : where, "expected an object");
  for (const auto& [k, v] : patch.items()) {
    const std::string path = where + "/" + k;
    if (!base.contains(k)) throw SchemaError(path, "unknown key '" + k + "'");
    Json& slot = base[k];
    const bool open_section = k == "height_rule" || k == "shadow_direction";
    if (slot.is_object() && !open_section) {
      merge_config(slot, v, path);
    } else {
      if (!slot.is_null() && slot.type() != v.type() && !(slot.is_number() && v.is_number())) {
        throw SchemaError(path, "expected a value of type " + std::string(slot.type_name()));
      }
      slot = v;
    }
  }
}

namespace {

// -------------------------------------------------------------- plumbing

struct Binding {
  CLI::Option* option = nullptr;
  std::string pointer;  // JSON pointer into the run config
  std::string value;
};

struct Context {
  Json config;
  std::string digest;
  fs::path out;
  int jobs = 1;
  bool progress = false;
};

fs::path require_path(const std::string& p, const std::string& what) {
  if (p.empty()) throw ConfigError("missing required path: " + what);
  if (!fs::exists(p)) throw ConfigError(what + " not found: " + p);
  return p;
}

fs::path corpus_root(const Context& c) {
  const fs::path root = require_path(c.config["paths"]["data"].get<std::string>(), "--data");
  if (!fs::exists(root / "manifest.json")) {
    throw ConfigError("corpus manifest not found: " + (root / "manifest.json").string());
  }
  return root;
}

// Accepts a checkpoint directory or a run directory holding checkpoint/.
fs::path checkpoint_dir(const std::string& p, const std::string& what, const char* sub = "checkpoint") {
  const fs::path dir = require_path(p, what);
  if (fs::exists(dir / "arch.json")) return dir;
  if (fs::exists(dir / sub / "arch.json")) return dir / sub;
  throw ConfigError(what + " has no arch.json: " + dir.string());
}

void write_report(const Context& c, io::ReportKind kind, Json body, const std::string& name) {
  io::Report r{kind, io::timestamp_now(), c.digest, std::move(body)};
  io::write_report(c.out / name, r);
}

void write_svg(const Context& c, const std::string& name, const std::string& svg) {
  io::write_text(c.out / name, svg);
}

std::vector<std::string> class_names(const fs::path& data) {
  return scenegen::read_manifest(data).config.class_set;
}

int class_index(const std::vector<std::string>& classes, const std::string& name) {
  auto it = std::find(classes.begin(), classes.end(), name);
  if (it == classes.end()) throw ConfigError("unknown class '" + name + "'");
  return static_cast<int>(it - classes.begin());
}

int64_t seed_of(const Context& c) { return c.config["seed"].get<int64_t>(); }

toymodel::Net load_net(const Context& c) {
  return toymodel::load_checkpoint(checkpoint_dir(c.config["paths"]["ckpt"].get<std::string>(), "--ckpt"));
}

// ------------------------------------------------------------- generate

void cmd_generate(Context& c) {
  Json scene = c.config["scene"];
  scene["seed"] = c.config["seed"];
  const scenegen::SceneConfig sc = scenegen::SceneConfig::from_json(scene);
  const Json& s = c.config["splits"];
  const scenegen::SplitSizes sizes{s["train"].get<int>(), s["val"].get<int>(), s["test"].get<int>()};
  if (sizes.train < 0 || sizes.val < 0 || sizes.test < 0) throw ConfigError("split sizes must be >= 0");
  scenegen::write_corpus(c.out, sc, sizes, c.jobs);
  std::printf("wrote %d/%d/%d patches to %s\n", sizes.train, sizes.val, sizes.test, c.out.string().c_str());
}

// ---------------------------------------------------------------- train

std::string training_figure(const toymodel::TrainLog& log, const std::string& title) {
  figures::Series loss{"train loss", {}, {}}, mae{"val MAE (m)", {}, {}};
  for (const auto& e : log.epochs) {
    loss.x.push_back(e.epoch);
    loss.y.push_back(e.train_loss);
    mae.x.push_back(e.epoch);
    mae.y.push_back(e.val_mae.value_or(NAN));
  }
  return figures::line_chart(title, "epoch", "value", {loss, mae});
}

void cmd_train(Context& c) {
  const fs::path data = corpus_root(c);
  const Json& tj = c.config["train"];
  Json tcfg = without(tj, {"compress_units", "distill_weight"});
  tcfg["seed"] = c.config["seed"];
  tcfg["corpus_root"] = data.string();
  toymodel::TrainConfig cfg = toymodel::TrainConfig::from_json(tcfg);
  cfg.log_progress = c.progress;
  Json mj = c.config["model"];
  mj["seed"] = c.config["seed"];
  const toymodel::ModelSpec spec = toymodel::ModelSpec::from_json(mj);
  const int compress = tj["compress_units"].get<int>();
  const double distill = tj["distill_weight"].get<double>();
  const std::string ckpt = c.config["paths"]["ckpt"].get<std::string>();
  const std::string teacher_path = c.config["paths"]["teacher"].get<std::string>();
  if (distill < 0.0) throw ConfigError("distill_weight must be >= 0");
  if (distill > 0.0 && compress <= 0) throw ConfigError("distillation needs --compress-units");

  const auto train_set = scenegen::load_split(data, "train", cfg.train_limit);
  const auto val_set = scenegen::load_split(data, "val", cfg.val_limit);
  toymodel::Net net;
  toymodel::TrainLog log;
  std::string what;
  if (compress > 0) {
    const std::string src = ckpt.empty() ? teacher_path : ckpt;
    const toymodel::Net teacher = toymodel::load_checkpoint(checkpoint_dir(src, "--ckpt"));
    net = toymodel::compress_head(teacher, compress);
    if (distill > 0.0) {
      const toymodel::Net dt =
          teacher_path.empty() ? teacher : toymodel::load_checkpoint(checkpoint_dir(teacher_path, "--teacher"));
      log = toymodel::distill_features(dt, net, train_set, val_set, cfg, distill);
      what = "distilled " + std::to_string(compress) + "-unit student";
    } else {
      log = toymodel::fit(net, train_set, val_set, cfg);
      what = std::to_string(compress) + "-unit fine-tuning";
    }
  } else if (!ckpt.empty()) {
    net = toymodel::load_checkpoint(checkpoint_dir(ckpt, "--ckpt"));
    log = toymodel::fit(net, train_set, val_set, cfg);
    what = "continued training";
  } else {
    net = toymodel::Net(spec);
    log = toymodel::fit(net, train_set, val_set, cfg);
    what = toymodel::variant_name(spec.variant) + " training";
  }
  toymodel::save_checkpoint(c.out / "checkpoint", net);
  Json body = log.to_json();
  body["model"] = net.spec().to_json();
  body["parameters"] = net.params().scalar_count();
  body["mean_height_baseline_mae"] = toymodel::mean_height_baseline_mae(train_set, val_set);
  write_report(c, io::ReportKind::kTraining, body, "training.json");
  write_svg(c, "training.svg", training_figure(log, what));
  if (!log.epochs.empty() && log.epochs.back().val_mae) {
    std::printf("val MAE %.4f m after %zu epochs\n", *log.epochs.back().val_mae, log.epochs.size());
  }
}

// -------------------------------------------------------------- dissect

void cmd_dissect(Context& c) {
  const fs::path data = corpus_root(c);
  const toymodel::Net net = load_net(c);
  const Json& d = c.config["dissect"];
  const auto classes = class_names(data);
  const auto patches = scenegen::load_split(data, d["split"].get<std::string>(), d["limit"].get<int>());
  if (patches.empty()) throw ConfigError("dissect: the selected split is empty");
  const dissect::SelectivityReport rep = dissect::analyze(net, patches, classes, d["num_bins"].get<int>());
  write_report(c, io::ReportKind::kSelectivity, rep.to_json(), "selectivity.json");
  io::write_text(c.out / "selectivity.csv", dissect::selectivity_csv(rep));

  // Class responses of the most selective unit per class.
  std::vector<figures::BarGroup> bars;
  for (size_t k = 0; k < classes.size(); ++k) {
    const auto ranked = rep.rank_units(classes[k]);
    if (ranked.empty()) continue;
    const int u = ranked.front();
    figures::BarGroup g{"unit " + std::to_string(u) + " (" + classes[k] + ")", {}};
    for (size_t j = 0; j < classes.size(); ++j) g.values.push_back(rep.CR.at(u, static_cast<int>(j)));
    bars.push_back(std::move(g));
  }
  write_svg(c, "selectivity.svg", figures::bar_chart("class response of top units", classes, bars));

  const toymodel::ForwardResult fr = toymodel::forward(net, patches.front().image);
  fs::create_directories(c.out / "units");
  io::write_png_rgb(c.out / "units" / "input.png", patches.front().image);
  for (int u = 0; u < fr.features.channels(); ++u) {
    RealMap m(fr.features.rows(), fr.features.cols());
    for (int r = 0; r < m.rows(); ++r)
      for (int col = 0; col < m.cols(); ++col) m(r, col) = fr.features(r, col, u);
    char name[32];
    std::snprintf(name, sizeof name, "unit_%02d.png", u);
    io::write_png_rgb(c.out / "units" / name, io::render_heatmap(m));
  }
  std::printf("dissected %d units over %zu patches\n", rep.CR.units, patches.size());
}

// ------------------------------------------------------------------ ood

void cmd_ood(Context& c) {
  const fs::path data = corpus_root(c);
  const toymodel::Net net = load_net(c);
  const Json& o = c.config["ood"];
  const int size = o["size"].get<int>(), cell = o["cell"].get<int>();
  const auto patches = scenegen::load_split(data, o["split"].get<std::string>(), o["limit"].get<int>());
  if (patches.empty()) throw ConfigError("ood: the selected split is empty");
  Json images = Json::array();
  double inside_sum = 0.0;
  int inside_n = 0;
  size_t undefined = 0;
  fs::create_directories(c.out / "ood");
  for (size_t i = 0; i < patches.size(); ++i) {
    const ScenePatch& p = patches[i];
    if (size > p.image.rows() || size > p.image.cols()) throw ConfigError("ood: checkerboard larger than the image");
    Rng rng(mix_seed(static_cast<uint64_t>(seed_of(c)), i));
    const int row = static_cast<int>(rng.uniform_int(0, p.image.rows() - size));
    const int col = static_cast<int>(rng.uniform_int(0, p.image.cols() - size));
    Image img = p.image;
    const Mask region = dissect::paste_checkerboard(img, row, col, size, cell);
    Mask outside(region.rows(), region.cols());
    for (size_t k = 0; k < region.size(); ++k) outside.storage()[k] = !region.storage()[k];
    const dissect::AnomalyMap clean = dissect::anomaly_map(toymodel::forward(net, p.image).features);
    const dissect::AnomalyMap pert = dissect::anomaly_map(toymodel::forward(net, img).features);
    const auto in = dissect::mean_anomaly(pert, &region);
    const auto out = dissect::mean_anomaly(pert, &outside);
    const auto base = dissect::mean_anomaly(clean, &region);
    undefined += count_set(pert.undefined);
    if (in) {
      inside_sum += *in;
      ++inside_n;
    }
    auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
    images.push_back({{"id", p.id},
                      {"row", row},
                      {"col", col},
                      {"size", size},
                      {"mean_inside", opt(in)},
                      {"mean_outside", opt(out)},
                      {"mean_inside_clean", opt(base)}});
    if (i < 4) {
      io::write_png_rgb(c.out / "ood" / (p.id + "_input.png"), img);
      io::write_png_rgb(c.out / "ood" / (p.id + "_anomaly.png"), io::render_heatmap(pert.values, 0.0f, 1.0f));
    }
  }
  Json body = {{"images", images},
               {"mean_anomaly", inside_n ? Json(inside_sum / inside_n) : Json(nullptr)},
               {"undefined_pixels", undefined}};
  write_report(c, io::ReportKind::kOod, body, "ood.json");
  std::printf("ood maps for %zu images\n", patches.size());
}

// -------------------------------------------------------------- perturb

void cmd_perturb(Context& c) {
  const fs::path data = corpus_root(c);
  const toymodel::Net net = load_net(c);
  const Json& p = c.config["perturb"];
  const scenegen::SceneConfig sc = scenegen::read_manifest(data).config;
  const auto classes = sc.class_set;
  const auto scenes = scenegen::load_split(data, p["split"].get<std::string>(), p["scenes"].get<int>());
  if (scenes.empty()) throw ConfigError("perturb: the selected split is empty");
  const std::string exp = p["experiment"].get<std::string>();
  perturb::PerturbResult res;
  if (exp == "class_swap") {
    std::vector<int> idx;
    for (const auto& n : p["swap_classes"]) idx.push_back(class_index(classes, n.get<std::string>()));
    res = perturb::class_swap(net, scenes, sc, idx, c.jobs);
  } else if (exp == "scale" || exp == "shadow") {
    const int k = class_index(classes, p["class"].get<std::string>());
    res = exp == "scale" ? perturb::scale_sweep(net, scenes, sc, k, {scenegen::kTemplateScales.begin(), scenegen::kTemplateScales.end()}, c.jobs)
                         : perturb::shadow_sweep(net, scenes, sc, k, {scenegen::kTemplateScales.begin(), scenegen::kTemplateScales.end()}, c.jobs);
  } else {
    throw ConfigError("unknown experiment '" + exp + "' (class_swap, scale, shadow)");
  }
  write_report(c, io::ReportKind::kPerturb, res.to_json(), "perturb_" + exp + ".json");

  // Mean over scenes per case label, in first-seen order.
  std::vector<std::string> labels;
  std::map<std::string, std::pair<double, int>> pred, gt;
  for (const auto& cs : res.cases) {
    if (!pred.count(cs.label)) labels.push_back(cs.label);
    pred[cs.label].first += cs.mean_pred_height;
    ++pred[cs.label].second;
    gt[cs.label].first += cs.mean_gt_height;
    ++gt[cs.label].second;
  }
  if (exp == "class_swap") {
    figures::BarGroup bp{"predicted", {}}, bg{"ground truth", {}};
    for (const auto& l : labels) {
      bp.values.push_back(pred[l].first / pred[l].second);
      bg.values.push_back(gt[l].first / gt[l].second);
    }
    write_svg(c, "perturb_" + exp + ".svg", figures::bar_chart("mean height in pasted region (m)", labels, {bp, bg}));
  } else {
    figures::Series sp{"predicted", {}, {}}, sg{"ground truth", {}, {}};
    for (const auto& l : labels) {
      const double s = std::stod(l.substr(l.find('=') + 1));
      sp.x.push_back(s);
      sp.y.push_back(pred[l].first / pred[l].second);
      sg.x.push_back(s);
      sg.y.push_back(gt[l].first / gt[l].second);
    }
    write_svg(c, "perturb_" + exp + ".svg",
              figures::line_chart(exp + " sweep", exp == "scale" ? "object scale" : "shadow scale",
                                  "mean height (m)", {sp, sg}));
  }
  if (res.trend) std::printf("%s: mean Spearman %.3f over %zu scenes\n", exp.c_str(), *res.trend, res.scene_trends.size());
}

// ------------------------------------------------------------ attribute

void cmd_attribute(Context& c) {
  const fs::path data = corpus_root(c);
  const toymodel::Net net = load_net(c);
  const Json& a = c.config["attribute"];
  const auto classes = class_names(data);
  const int k = class_index(classes, a["class"].get<std::string>());
  const int steps = a["steps"].get<int>(), window = a["window"].get<int>(), radius = a["radius"].get<int>();
  const int max_targets = a["targets"].get<int>(), batch = a["batch"].get<int>();
  if (steps < 1) throw ConfigError("attribute: steps must be >= 1");
  const auto scenes = scenegen::load_split(data, a["split"].get<std::string>(), a["scenes"].get<int>());
  fs::create_directories(c.out / "attribution");
  int done = 0;
  for (const ScenePatch& s : scenes) {
    for (const attribute::ObjectTarget& t : attribute::object_targets(s, k, window)) {
      if (done >= max_targets) break;
      const attribute::AttributionMap m = attribute::integrated_gradients(net, s.image, t.window, steps, batch);
      const auto compact = attribute::attribution_compactness(m, t.mask, radius);
      Json body = attribute::report_body(m, compact);
      body["scene_id"] = s.id;
      body["class"] = classes[static_cast<size_t>(k)];
      char name[48];
      std::snprintf(name, sizeof name, "attribution_%03d", done);
      write_report(c, io::ReportKind::kAttribution, body, std::string("attribution/") + name + ".json");
      io::write_png_rgb(c.out / "attribution" / (std::string(name) + ".png"), io::render_heatmap(m.magnitude()));
      io::write_png_rgb(c.out / "attribution" / (std::string(name) + "_input.png"), s.image);
      ++done;
    }
  }
  if (done == 0) throw Error("attribute: no " + classes[static_cast<size_t>(k)] + " instances found");
  std::printf("%d attribution maps\n", done);
}

// ------------------------------------------------------------------ dlt

dlt::DltConfig dlt_config(const Context& c) {
  Json j = without(c.config["dlt"], {"train_limit", "val_limit", "kmeans_restarts"});
  j["seed"] = c.config["seed"];
  dlt::DltConfig cfg = dlt::DltConfig::from_json(j);
  cfg.log_progress = c.progress;
  return cfg;
}

void cmd_dlt(Context& c) {
  const fs::path data = corpus_root(c);
  const Json& dj = c.config["dlt"];
  const dlt::DltConfig cfg = dlt_config(c);
  toymodel::Net base = load_net(c);
  const std::string tp = c.config["paths"]["teacher"].get<std::string>();
  const toymodel::Net teacher = tp.empty() ? base : toymodel::load_checkpoint(checkpoint_dir(tp, "--teacher"));
  dlt::KMeansConfig km;
  km.restarts = dj["kmeans_restarts"].get<int>();
  km.seed = static_cast<uint64_t>(seed_of(c));
  dlt::GroupAssignment groups;
  try {
    groups = dlt::cluster_final_layer(base, cfg.K, km);
  } catch (const DomainError& e) {
    throw ConfigError(e.what());
  }
  dlt::Dlt model(base, groups, cfg, teacher);
  const auto train_set = scenegen::load_split(data, "train", dj["train_limit"].get<int>());
  const auto val_set = scenegen::load_split(data, "val", dj["val_limit"].get<int>());
  const dlt::DltLog log = dlt::fit_dlt(model, train_set, val_set, cfg);
  dlt::save_dlt(c.out / "dlt", model, cfg);
  Json body = log.to_json();
  body["groups"] = groups.to_json();
  write_report(c, io::ReportKind::kTraining, body, "dlt_training.json");
  figures::Series elbo{"negated ELBO", {}, {}}, mae{"val MAE (m)", {}, {}};
  for (const auto& e : log.epochs) {
    elbo.x.push_back(e.epoch);
    elbo.y.push_back(std::log10(std::max(e.loss, 1e-300)));
    mae.x.push_back(e.epoch);
    mae.y.push_back(e.val_mae.value_or(NAN));
  }
  elbo.name = "log10 negated ELBO";
  write_svg(c, "dlt_training.svg", figures::line_chart("DLT fine-tuning", "epoch", "value", {elbo, mae}));
  if (!log.epochs.empty() && log.epochs.back().val_mae) std::printf("DLT val MAE %.4f m\n", *log.epochs.back().val_mae);
}

dlt::Dlt load_dlt_model(const Context& c) {
  const fs::path dir = checkpoint_dir(c.config["paths"]["dlt"].get<std::string>(), "--dlt", "dlt");
  return dlt::load_dlt(dir);
}

void cmd_segment(Context& c) {
  const fs::path data = corpus_root(c);
  const dlt::Dlt model = load_dlt_model(c);
  if (!model.fitted()) throw ConfigError("segment: the DLT checkpoint is not fitted");
  const Json& s = c.config["segment"];
  const auto classes = class_names(data);
  const int C = static_cast<int>(classes.size());
  const int limit = s["limit"].get<int>();
  const auto naming = scenegen::load_split(data, s["naming_split"].get<std::string>(), limit);
  const auto eval = scenegen::load_split(data, s["eval_split"].get<std::string>(), limit);
  if (naming.empty() || eval.empty()) throw ConfigError("segment: naming or evaluation split is empty");
  const std::vector<int> names = dlt::name_groups(model, naming, C);
  const dlt::SegmentationEval ev = dlt::evaluate_segmentation(model, names, eval, C);
  Json body = ev.to_json(classes, model.K());
  body["naming_split"] = s["naming_split"];
  body["eval_split"] = s["eval_split"];
  write_report(c, io::ReportKind::kDlt, body, "segmentation.json");
  fs::create_directories(c.out / "segmentation");
  const int nfig = std::min<int>(s["figures"].get<int>(), static_cast<int>(eval.size()));
  for (int i = 0; i < nfig; ++i) {
    const dlt::SegmentationMaps maps = dlt::segment(model, eval[static_cast<size_t>(i)].image);
    io::write_png_rgb(c.out / "segmentation" / (eval[static_cast<size_t>(i)].id + "_input.png"),
                      eval[static_cast<size_t>(i)].image);
    for (int k = 0; k < model.K(); ++k) {
      LabelMap m(maps.masks[static_cast<size_t>(k)].rows(), maps.masks[static_cast<size_t>(k)].cols());
      for (size_t p = 0; p < m.size(); ++p) m.storage()[p] = maps.masks[static_cast<size_t>(k)].storage()[p] ? 255 : 0;
      const int cls = names[static_cast<size_t>(k)];
      const std::string tag = cls >= 0 ? classes[static_cast<size_t>(cls)] : "unnamed";
      io::write_png_gray(c.out / "segmentation" /
                             (eval[static_cast<size_t>(i)].id + "_g" + std::to_string(k) + "_" + tag + ".png"),
                         m);
    }
  }
  std::vector<std::string> named;
  figures::BarGroup bars{"IoU", {}};
  for (const auto& [cls, v] : ev.class_iou) {
    named.push_back(classes[static_cast<size_t>(cls)]);
    bars.values.push_back(v);
  }
  write_svg(c, "segmentation.svg", figures::bar_chart("unsupervised segmentation IoU", named, {bars}));
  if (ev.miou) std::printf("mIoU %.4f\n", *ev.miou);
}

// ------------------------------------------------------------- evaluate

void cmd_evaluate(Context& c) {
  const fs::path data = corpus_root(c);
  const Json& e = c.config["evaluate"];
  const auto patches = scenegen::load_split(data, e["split"].get<std::string>(), e["limit"].get<int>());
  if (patches.empty()) throw ConfigError("evaluate: the selected split is empty");
  const bool use_dlt = !c.config["paths"]["dlt"].get<std::string>().empty();
  std::vector<RealMap> preds;
  std::optional<double> miou;
  std::string source;
  if (use_dlt) {
    const dlt::Dlt model = load_dlt_model(c);
    preds = dlt::predict_heights(model, patches);
    const auto classes = class_names(data);
    const auto naming = scenegen::load_split(data, "val", -1);
    const auto names = dlt::name_groups(model, naming, static_cast<int>(classes.size()));
    miou = dlt::evaluate_segmentation(model, names, patches, static_cast<int>(classes.size())).miou;
    source = "dlt";
  } else {
    preds = toymodel::predict_heights(load_net(c), patches);
    source = "checkpoint";
  }
  metrics::HeightEvaluator ev(e["msge_scales"].get<int>());
  for (size_t i = 0; i < patches.size(); ++i) ev.add(preds[i], patches[i].height);
  Json body = {{"mae", ev.mae()},
               {"rmse", ev.rmse()},
               {"si_rmse", ev.si_rmse()},
               {"msge", ev.msge()},
               {"miou", miou ? Json(*miou) : Json(nullptr)},
               {"manifest_digest", io::sha256_hex(io::read_text(data / "manifest.json"))},
               {"split", e["split"]},
               {"images", patches.size()},
               {"source", source}};
  write_report(c, io::ReportKind::kMetrics, body, "metrics.json");
  std::printf("MAE %.4f  RMSE %.4f  SI-RMSE %.4f  MSGE %.4f\n", ev.mae(), ev.rmse(), ev.si_rmse(), ev.msge());
}

// --------------------------------------------------------------- report

std::string headline(const io::Report& r) {
  const Json& b = r.body;
  auto num = [&](const char* k) {
    if (!b.contains(k) || !b[k].is_number()) return std::string("n/a");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", b[k].get<double>());
    return std::string(buf);
  };
  switch (r.kind) {
    case io::ReportKind::kSelectivity: return std::to_string(b["CS"].size()) + " units";
    case io::ReportKind::kOod: return "mean anomaly inside pasted region " + num("mean_anomaly");
    case io::ReportKind::kPerturb: return b["experiment"].get<std::string>() + ", trend " + num("trend");
    case io::ReportKind::kAttribution: return "completeness gap " + num("completeness_gap") + ", compactness " + num("compactness");
    case io::ReportKind::kDlt: return "mIoU " + num("miou");
    case io::ReportKind::kMetrics: return "MAE " + num("mae") + ", RMSE " + num("rmse") + ", SI-RMSE " + num("si_rmse");
    case io::ReportKind::kTraining: {
      const Json& ep = b["epochs"];
      if (ep.empty() || !ep.back()["val_mae"].is_number()) return std::to_string(ep.size()) + " epochs";
      char buf[64];
      std::snprintf(buf, sizeof buf, "%zu epochs, final val MAE %.4f", ep.size(), ep.back()["val_mae"].get<double>());
      return buf;
    }
  }
  return "";
}

void cmd_report(Context& c) {
  std::string rd = c.config["paths"]["run_dir"].get<std::string>();
  const fs::path run = require_path(rd.empty() ? c.out.string() : rd, "--run-dir");
  std::map<std::string, std::vector<std::pair<std::string, io::Report>>> by_kind;
  std::vector<std::string> figs;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(run)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const fs::path& f : files) {
    const std::string rel = fs::relative(f, run).generic_string();
    if (f.extension() == ".json") {
      try {
        by_kind[io::to_string(io::read_report(f).kind)].emplace_back(rel, io::read_report(f));
      } catch (const Error&) {
        // arch.json, manifests and other non-report files
      }
    } else if (f.extension() == ".svg" || (f.extension() == ".png" && rel.find('/') == std::string::npos) ||
               rel.rfind("units/unit_0", 0) == 0 || rel.find("_anomaly.png") != std::string::npos ||
               (rel.rfind("attribution/", 0) == 0 && rel.find("_input") == std::string::npos)) {
      figs.push_back(rel);
    }
  }
  if (by_kind.empty()) throw Error("report: no reports under " + run.string());
  std::ostringstream md, html;
  md << "# HeightLens run summary\n\nRun directory: `" << run.string() << "`\n\n";
  html << "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>HeightLens run summary</title>"
       << "<style>body{font-family:sans-serif;max-width:1000px;margin:auto}img{max-width:300px;margin:4px}"
       << "td,th{padding:2px 8px;text-align:left}</style></head><body>\n<h1>HeightLens run summary</h1>\n";
  Json kinds = Json::array();
  for (const auto& [kind, reps] : by_kind) {
    kinds.push_back(kind);
    md << "## " << kind << "\n\n| file | created | digest | summary |\n|---|---|---|---|\n";
    html << "<h2>" << kind << "</h2>\n<table><tr><th>file</th><th>created</th><th>digest</th><th>summary</th></tr>\n";
    for (const auto& [rel, r] : reps) {
      md << "| " << rel << " | " << r.created_at << " | " << r.config_digest.substr(0, 12) << " | " << headline(r)
         << " |\n";
      html << "<tr><td>" << rel << "</td><td>" << r.created_at << "</td><td><code>" << r.config_digest.substr(0, 12)
           << "</code></td><td>" << headline(r) << "</td></tr>\n";
    }
    md << "\n";
    html << "</table>\n";
  }
  md << "## Figures\n\n";
  html << "<h2>Figures</h2>\n";
  for (const auto& f : figs) {
    md << "![" << f << "](" << f << ")\n";
    html << "<figure style=\"display:inline-block\"><img src=\"" << f << "\"><figcaption>" << f
         << "</figcaption></figure>\n";
  }
  html << "</body></html>\n";
  io::write_text(run / "report.md", md.str());
  io::write_text(run / "report.html", html.str());
  io::write_text(run / "report_index.json", io::canonical_dump({{"kinds", kinds}, {"figures", figs}}));
  std::printf("summarised %zu report kinds and %zu figures\n", by_kind.size(), figs.size());
}

// ------------------------------------------------------------- dispatch

using Command = void (*)(Context&);

struct Sub {
  const char* name;
  const char* help;
  Command fn;
};

const Sub kSubs[] = {
    {"generate", "write a synthetic corpus", cmd_generate},
    {"train", "train a toy model, or fine-tune a compressed / distilled one", cmd_train},
    {"dissect", "unit selectivity (class and height responses)", cmd_dissect},
    {"ood", "anomaly maps for pasted out-of-distribution content", cmd_ood},
    {"perturb", "instance perturbation: class swap, scale or shadow sweep", cmd_perturb},
    {"attribute", "integrated-gradients attribution of local height", cmd_attribute},
    {"dlt", "group final-layer units and fine-tune the DLT head", cmd_dlt},
    {"segment", "unsupervised segmentation from a fitted DLT checkpoint", cmd_segment},
    {"evaluate", "height metrics (and mIoU for DLT) on a split", cmd_evaluate},
    {"report", "assemble a markdown/HTML summary of a run directory", cmd_report},
};

// Flags per subcommand: name, JSON pointer, help.
struct Flag {
  const char* name;
  const char* pointer;
  const char* help;
};

std::vector<Flag> flags_for(const std::string& sub) {
  std::vector<Flag> f = {{"--seed", "/seed", "global seed"}, {"--jobs", "/jobs", "worker threads"}};
  auto add = [&](std::initializer_list<Flag> more) { f.insert(f.end(), more); };
  if (sub == "generate") {
    add({{"--train", "/splits/train", "training patches"},
         {"--val", "/splits/val", "validation patches"},
         {"--test", "/splits/test", "test patches"},
         {"--image-size", "/scene/image_size", "patch side in pixels"}});
    return f;
  }
  if (sub != "report") add({{"--data", "/paths/data", "corpus root"}});
  if (sub == "train") {
    add({{"--ckpt", "/paths/ckpt", "start from this checkpoint"},
         {"--teacher", "/paths/teacher", "teacher checkpoint for distillation"},
         {"--variant", "/model/variant", "attention or conv"},
         {"--units", "/model/final_units", "final-layer units"},
         {"--depth", "/model/depth", "encoder stages"},
         {"--base-width", "/model/base_width", "channels of the first stage"},
         {"--epochs", "/train/epochs", "epochs"},
         {"--batch-size", "/train/batch_size", "batch size"},
         {"--lr", "/train/learning_rate", "learning rate"},
         {"--loss", "/train/loss", "L1 or L2"},
         {"--train-limit", "/train/train_limit", "use the first N training patches (-1 all)"},
         {"--val-limit", "/train/val_limit", "use the first N validation patches (-1 all)"},
         {"--compress-units", "/train/compress_units", "replace the final layer with N units and fine-tune"},
         {"--distill-weight", "/train/distill_weight", "feature distillation weight (needs --compress-units)"}});
  } else if (sub == "dissect") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint"},
         {"--split", "/dissect/split", "split to dissect"},
         {"--limit", "/dissect/limit", "patches (-1 all)"},
         {"--bins", "/dissect/num_bins", "height bins including the zero bin"}});
  } else if (sub == "ood") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint"},
         {"--split", "/ood/split", "split"},
         {"--limit", "/ood/limit", "images"},
         {"--size", "/ood/size", "checkerboard side"},
         {"--cell", "/ood/cell", "checkerboard cell"}});
  } else if (sub == "perturb") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint"},
         {"--experiment", "/perturb/experiment", "class_swap, scale or shadow"},
         {"--class", "/perturb/class", "class for the sweeps"},
         {"--split", "/perturb/split", "split"},
         {"--scenes", "/perturb/scenes", "scenes"}});
  } else if (sub == "attribute") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint"},
         {"--class", "/attribute/class", "object class to explain"},
         {"--split", "/attribute/split", "split"},
         {"--scenes", "/attribute/scenes", "scenes to search for instances"},
         {"--targets", "/attribute/targets", "maximum number of maps"},
         {"--steps", "/attribute/steps", "Riemann steps m"},
         {"--window", "/attribute/window", "target window side n"},
         {"--radius", "/attribute/radius", "dilation radius for compactness"}});
  } else if (sub == "dlt") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint to fine-tune (e.g. 16-unit)"},
         {"--teacher", "/paths/teacher", "teacher for F_c (default: frozen copy of --ckpt)"},
         {"--K", "/dlt/K", "groups"},
         {"--epochs", "/dlt/epochs", "epochs"},
         {"--lr", "/dlt/learning_rate", "learning rate"},
         {"--samples", "/dlt/samples", "Monte Carlo samples L"},
         {"--train-limit", "/dlt/train_limit", "training patches (-1 all)"},
         {"--val-limit", "/dlt/val_limit", "validation patches (-1 all)"}});
  } else if (sub == "segment") {
    add({{"--dlt", "/paths/dlt", "fitted DLT checkpoint"},
         {"--naming-split", "/segment/naming_split", "split used to name groups"},
         {"--eval-split", "/segment/eval_split", "split used for IoU"},
         {"--limit", "/segment/limit", "patches per split (-1 all)"}});
  } else if (sub == "evaluate") {
    add({{"--ckpt", "/paths/ckpt", "checkpoint"},
         {"--dlt", "/paths/dlt", "DLT checkpoint (instead of --ckpt)"},
         {"--split", "/evaluate/split", "split"},
         {"--limit", "/evaluate/limit", "patches (-1 all)"}});
  } else if (sub == "report") {
    add({{"--run-dir", "/paths/run_dir", "run directory to summarise (default --out)"}});
  }
  return f;
}

Json parse_value(const std::string& text, const Json& like, const std::string& flag) {
  try {
    size_t pos = 0;
    if (like.is_number_integer()) {
      const long long v = std::stoll(text, &pos);
      if (pos == text.size()) return v;
    } else if (like.is_number()) {
      const double v = std::stod(text, &pos);
      if (pos == text.size()) return v;
    } else if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
    } else {
      return text;
    }
  } catch (const std::exception&) {
  }
  throw ConfigError(flag + ": cannot parse '" + text + "' as " + like.type_name());
}

std::string default_text(const Json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"HeightLens: interpretability toolkit for toy height-estimation networks", "heightlens"};
  app.require_subcommand(1, 1);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  const Json defaults = default_config();

  struct SubState {
    CLI::App* app;
    const Sub* sub;
    std::deque<Binding> bindings;
    std::string config_file, out;
    bool progress = false;
  };
  std::deque<SubState> subs;
  const char* env_out = std::getenv("HEIGHTLENS_OUT");
  for (const Sub& s : kSubs) {
    SubState& st = subs.emplace_back();
    st.sub = &s;
    st.app = app.add_subcommand(s.name, s.help);
    st.app->add_option("--config", st.config_file, "JSON run config (flags override it)");
    const std::string out_default = std::string(s.name) == "generate" ? "data" : "out";
    st.app->add_option("--out", st.out, "output directory (default $HEIGHTLENS_OUT, else " + out_default + ")")
        ->default_str(env_out ? env_out : out_default);
    for (const Flag& f : flags_for(s.name)) {
      Binding& b = st.bindings.emplace_back();
      b.pointer = f.pointer;
      const Json& like = defaults.at(Json::json_pointer(f.pointer));
      b.option = st.app->add_option(f.name, b.value, f.help)
                     ->default_str(default_text(like))
                     ->type_name(like.is_number_integer() ? "INT" : like.is_number() ? "FLOAT" : "TEXT");
    }
    if (std::string(s.name) == "train" || std::string(s.name) == "dlt") {
      st.app->add_flag("--progress", st.progress, "print per-epoch progress to stderr");
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e) == 0 ? kExitOk : kExitConfig;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    std::cerr << app.help();
    return kExitConfig;
  }

  SubState* chosen = nullptr;
  for (SubState& st : subs) {
    if (st.app->parsed()) chosen = &st;
  }
  Context ctx;
  try {
    ctx.config = defaults;
    ctx.config["subcommand"] = chosen->sub->name;
    if (!chosen->config_file.empty()) {
      const fs::path cf = require_path(chosen->config_file, "--config");
      Json file;
      try {
        file = Json::parse(io::read_text(cf));
      } catch (const Json::parse_error& e) {
        throw ConfigError(cf.string() + ": not valid JSON: " + e.what());
      }
      file.erase("subcommand");
      merge_config(ctx.config, file);
    }
    for (const Binding& b : chosen->bindings) {
      if (b.option->count() == 0) continue;
      const Json::json_pointer ptr(b.pointer);
      ctx.config[ptr] = parse_value(b.value, defaults.at(ptr), b.option->get_name());
    }
    std::string out = chosen->out;
    if (out.empty()) out = ctx.config["paths"]["out"].get<std::string>();
    if (out.empty()) out = env_out ? env_out : (std::string(chosen->sub->name) == "generate" ? "data" : "out");
    ctx.config["paths"]["out"] = out;
    ctx.out = out;
    ctx.jobs = ctx.config["jobs"].get<int>();
    if (ctx.jobs < 1) throw ConfigError("--jobs must be >= 1");
    ctx.progress = chosen->progress;
    ctx.digest = io::config_digest(ctx.config);
  } catch (const Error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const Json::exception& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  }

  try {
    fs::create_directories(ctx.out);
    chosen->sub->fn(ctx);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SchemaError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}

}  // namespace heightlens::cli
