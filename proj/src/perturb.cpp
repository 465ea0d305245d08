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

#include "heightlens/perturb.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "heightlens/parallel.hpp"

namespace heightlens::perturb {

using scenegen::ObjectTemplate;

std::string experiment_name(Experiment e) {
  switch (e) {
    case Experiment::kClassSwap: return "class_swap";
    case Experiment::kScaleSweep: return "scale_sweep";
    case Experiment::kShadowSweep: return "shadow_sweep";
  }
  return "";
}

io::Json PerturbResult::to_json() const {
  io::Json cs = io::Json::array();
  for (const Case& c : cases) {
    cs.push_back({{"label", c.label},
                  {"scene_id", c.scene_id},
                  {"location", {c.location.x, c.location.y}},
                  {"mean_pred_height", c.mean_pred_height},
                  {"mean_gt_height", c.mean_gt_height},
                  {"mask_area", c.mask_area}});
  }
  return {{"experiment", experiment_name(experiment)},
          {"cases", cs},
          {"scene_trends", scene_trends},
          {"trend", trend ? io::Json(*trend) : io::Json(nullptr)},
          {"skipped", skipped}};
}

double masked_mean_height(const RealMap& height, const Mask& mask) {
  require_same_grid(height, mask, "masked_mean_height");
  double s = 0.0;
  size_t n = 0;
  for (size_t i = 0; i < mask.size(); ++i) {
    if (!mask.storage()[i]) continue;
    s += height.storage()[i];
    ++n;
  }
  if (n == 0) throw DomainError("masked_mean_height: empty mask");
  return s / static_cast<double>(n);
}

namespace {

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<size_t> idx(v.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) { return v[a] < v[b]; });
  std::vector<double> r(v.size());
  for (size_t i = 0; i < idx.size();) {
    size_t j = i;
    while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
    const double rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (size_t k = i; k <= j; ++k) r[idx[k]] = rank;
    i = j + 1;
  }
  return r;
}

}  // namespace

std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("spearman: need two equal-length series");
  const std::vector<double> rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return sxy / std::sqrt(sxx * syy);
}

std::optional<Center> largest_ground_center(const ScenePatch& scene) {
  const LabelMap& sem = scene.semantic;
  const int R = sem.rows(), C = sem.cols();
  Raster<int> comp(R, C, 1, -1);
  std::vector<size_t> sizes;
  std::vector<std::pair<int, int>> stack;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      if (sem(r, c) != scenegen::kGround || comp(r, c) >= 0) continue;
      const int id = static_cast<int>(sizes.size());
      size_t n = 0;
      stack.assign(1, {r, c});
      comp(r, c) = id;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        ++n;
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (!sem.in_bounds(ny, nx) || sem(ny, nx) != scenegen::kGround || comp(ny, nx) >= 0) continue;
          comp(ny, nx) = id;
          stack.push_back({ny, nx});
        }
      }
      sizes.push_back(n);
    }
  }
  if (sizes.empty()) return std::nullopt;
  const int best = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
  Center out;
  out.region = Mask(R, C);
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < C; ++c) out.region(r, c) = comp(r, c) == best;

  // Chessboard distance to the nearest pixel outside the region (the image
  // border counts as outside).
  const int inf = R + C;
  Raster<int> d(R, C, 1, 0);
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      if (!out.region(r, c)) continue;
      int v = inf;
      for (int dr = -1; dr <= 0; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc >= 0) continue;
          const int y = r + dr, x = c + dc;
          v = std::min(v, d.in_bounds(y, x) ? d(y, x) + 1 : 1);
        }
      }
      d(r, c) = v;
    }
  }
  for (int r = R - 1; r >= 0; --r) {
    for (int c = C - 1; c >= 0; --c) {
      if (!out.region(r, c)) continue;
      int v = d(r, c);
      for (int dr = 0; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          if (dr == 0 && dc <= 0) continue;
          const int y = r + dr, x = c + dc;
          v = std::min(v, d.in_bounds(y, x) ? d(y, x) + 1 : 1);
        }
      }
      d(r, c) = v;
    }
  }
  int bv = -1;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      if (out.region(r, c) && d(r, c) > bv) {
        bv = d(r, c);
        out.row = r;
        out.col = c;
      }
    }
  }
  return out;
}

Location centered(const Center& c, const ObjectTemplate& t) {
  return {c.col - t.cols() / 2, c.row - t.rows() / 2};
}

bool fits(const Center& c, const ObjectTemplate& t, Location loc) {
  for (int r = 0; r < t.rows(); ++r) {
    for (int k = 0; k < t.cols(); ++k) {
      if (!t.mask(r, k)) continue;
      const int y = loc.y + r, x = loc.x + k;
      if (!c.region.in_bounds(y, x) || !c.region(y, x)) return false;
    }
  }
  return true;
}

Mask placed_mask(const ObjectTemplate& t, Location loc, int rows, int cols) {
  Mask m(rows, cols);
  for (int r = 0; r < t.rows(); ++r) {
    for (int k = 0; k < t.cols(); ++k) {
      if (t.mask(r, k) && m.in_bounds(loc.y + r, loc.x + k)) m(loc.y + r, loc.x + k) = 1;
    }
  }
  return m;
}

namespace {

std::string scale_label(double s) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s=%.1f", s);
  return buf;
}

Case measure(const toymodel::Net& net, const ScenePatch& edited, const ObjectTemplate& t,
             Location loc, std::string label) {
  const Mask m = placed_mask(t, loc, edited.height.rows(), edited.height.cols());
  const RealMap pred = toymodel::forward(net, edited.image).height_pred;
  Case c;
  c.label = std::move(label);
  c.scene_id = edited.id;
  c.location = loc;
  c.mean_pred_height = masked_mean_height(pred, m);
  c.mean_gt_height = masked_mean_height(edited.height, m);
  c.mask_area = count_set(m);
  return c;
}

// Runs `per_scene` over scenes in parallel and concatenates the results in
// scene order. For sweeps, `xs` are the swept factors and each scene's trend
// correlates them with the mean predictions.
template <typename Fn>
PerturbResult run(Experiment e, const std::vector<ScenePatch>& scenes, int jobs, Fn per_scene,
                  const std::vector<double>& xs = {}) {
  std::vector<std::optional<std::vector<Case>>> slots(scenes.size());
  std::vector<int> skipped(scenes.size(), 0);
  parallel_for(static_cast<int>(scenes.size()), jobs, [&](int i) {
    slots[static_cast<size_t>(i)] = per_scene(scenes[static_cast<size_t>(i)], skipped[static_cast<size_t>(i)]);
  });
  PerturbResult out;
  out.experiment = e;
  for (size_t i = 0; i < scenes.size(); ++i) {
    out.skipped += skipped[i];
    if (!slots[i]) continue;
    if (e != Experiment::kClassSwap) {
      std::vector<double> y;
      for (const Case& c : *slots[i]) y.push_back(c.mean_pred_height);
      // constant predictions carry no trend; count them as 0
      out.scene_trends.push_back(spearman(xs, y).value_or(0.0));
    }
    for (Case& c : *slots[i]) out.cases.push_back(std::move(c));
  }
  if (!out.scene_trends.empty()) {
    out.trend = std::accumulate(out.scene_trends.begin(), out.scene_trends.end(), 0.0) /
                static_cast<double>(out.scene_trends.size());
  }
  return out;
}

void require_sweep_class(int class_index) {
  if (class_index != scenegen::kTree && class_index != scenegen::kBuilding) {
    throw DomainError("sweeps are defined for tree and building only");
  }
}

}  // namespace

PerturbResult class_swap(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                         const scenegen::SceneConfig& config, const std::vector<int>& classes, int jobs) {
  std::vector<ObjectTemplate> templates;
  for (int k : classes) templates.push_back(scenegen::make_template(k, 1.0, config));
  return run(Experiment::kClassSwap, scenes, jobs,
             [&](const ScenePatch& s, int& skipped) -> std::optional<std::vector<Case>> {
               const auto center = largest_ground_center(s);
               std::vector<Case> cases;
               for (size_t k = 0; k < templates.size(); ++k) {
                 const ObjectTemplate& t = templates[k];
                 if (!center || !fits(*center, t, centered(*center, t))) {
                   ++skipped;
                   continue;
                 }
                 const Location loc = centered(*center, t);
                 cases.push_back(measure(net, scenegen::paste_object(s, t, loc), t, loc,
                                         config.class_set[static_cast<size_t>(t.class_index)]));
               }
               return cases;
             });
}

PerturbResult scale_sweep(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                          const scenegen::SceneConfig& config, int class_index,
                          const std::vector<double>& scales, int jobs) {
  require_sweep_class(class_index);
  std::vector<ObjectTemplate> templates;
  for (double s : scales) templates.push_back(scenegen::make_template(class_index, s, config));
  const size_t largest = static_cast<size_t>(
      std::max_element(scales.begin(), scales.end()) - scales.begin());
  return run(Experiment::kScaleSweep, scenes, jobs,
             [&](const ScenePatch& s, int& skipped) -> std::optional<std::vector<Case>> {
               const auto center = largest_ground_center(s);
               if (!center || !fits(*center, templates[largest], centered(*center, templates[largest]))) {
                 ++skipped;
                 return std::nullopt;
               }
               std::vector<Case> cases;
               for (size_t k = 0; k < templates.size(); ++k) {
                 const Location loc = centered(*center, templates[k]);
                 cases.push_back(measure(net, scenegen::paste_object(s, templates[k], loc),
                                         templates[k], loc, scale_label(scales[k])));
               }
               return cases;
             },
             scales);
}

PerturbResult shadow_sweep(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                           const scenegen::SceneConfig& config, int class_index,
                           const std::vector<double>& scales, int jobs) {
  require_sweep_class(class_index);
  if (!config.shadow_on) throw DomainError("shadow_sweep needs shadow rendering enabled");
  const ObjectTemplate t = scenegen::make_template(class_index, 1.0, config);
  return run(Experiment::kShadowSweep, scenes, jobs,
             [&](const ScenePatch& s, int& skipped) -> std::optional<std::vector<Case>> {
               const auto center = largest_ground_center(s);
               const Location loc = center ? centered(*center, t) : Location{};
               if (!center || !fits(*center, t, loc)) {
                 ++skipped;
                 return std::nullopt;
               }
               const ScenePatch with_object = scenegen::paste_object(s, t, loc);
               std::vector<Case> cases;
               for (double f : scales) {
                 const Mask shadow = scenegen::shadow_footprint(config, t, loc, f, s.image.rows(),
                                                                s.image.cols());
                 cases.push_back(measure(net, scenegen::paste_shadow(with_object, shadow, {0, 0}), t, loc,
                                         scale_label(f)));
               }
               return cases;
             },
             scales);
}

}  // namespace heightlens::perturb
