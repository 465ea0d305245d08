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

#ifndef HEIGHTLENS_PERTURB_HPP_
#define HEIGHTLENS_PERTURB_HPP_

#include <optional>
#include <string>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/raster.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::perturb {

using scenegen::Location;
using scenegen::ScenePatch;

enum class Experiment { kClassSwap, kScaleSweep, kShadowSweep };
std::string experiment_name(Experiment e);

struct Case {
  std::string label;     // class name, or "s=<factor>"
  std::string scene_id;
  Location location;     // template top-left
  double mean_pred_height = 0.0;
  double mean_gt_height = 0.0;
  size_t mask_area = 0;
};

struct PerturbResult {
  Experiment experiment = Experiment::kClassSwap;
  std::vector<Case> cases;
  std::vector<double> scene_trends;  // per-scene Spearman (sweeps)
  std::optional<double> trend;       // mean of scene_trends
  int skipped = 0;

  io::Json to_json() const;  // perturb report body
};

double masked_mean_height(const RealMap& height, const Mask& mask);

// Spearman rank correlation with average ranks for ties; nullopt when
// either side is constant.
std::optional<double> spearman(const std::vector<double>& x, const std::vector<double>& y);

// Placement policy: the pixel of the largest 4-connected ground region that
// is farthest (chessboard distance) from any non-region pixel. Returns the
// top-left for a rows x cols template centered there, or nullopt when the
// scene has no ground.
struct Center {
  int row = 0;
  int col = 0;
  Mask region;
};
std::optional<Center> largest_ground_center(const ScenePatch& scene);
Location centered(const Center& c, const scenegen::ObjectTemplate& t);
// True when every mask pixel of `t` at `loc` lands inside c.region.
bool fits(const Center& c, const scenegen::ObjectTemplate& t, Location loc);

PerturbResult class_swap(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                         const scenegen::SceneConfig& config,
                         const std::vector<int>& classes = {scenegen::kRoad, scenegen::kTree,
                                                            scenegen::kBuilding},
                         int jobs = 1);

PerturbResult scale_sweep(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                          const scenegen::SceneConfig& config, int class_index,
                          const std::vector<double>& scales = {scenegen::kTemplateScales.begin(),
                                                               scenegen::kTemplateScales.end()},
                          int jobs = 1);

PerturbResult shadow_sweep(const toymodel::Net& net, const std::vector<ScenePatch>& scenes,
                           const scenegen::SceneConfig& config, int class_index,
                           const std::vector<double>& scales = {scenegen::kTemplateScales.begin(),
                                                                scenegen::kTemplateScales.end()},
                           int jobs = 1);

// Scene-coordinate mask of a template pasted at `loc`.
Mask placed_mask(const scenegen::ObjectTemplate& t, Location loc, int rows, int cols);

}  // namespace heightlens::perturb

#endif  // HEIGHTLENS_PERTURB_HPP_
