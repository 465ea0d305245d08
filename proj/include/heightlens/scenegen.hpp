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

#ifndef HEIGHTLENS_SCENEGEN_HPP_
#define HEIGHTLENS_SCENEGEN_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/raster.hpp"

namespace heightlens::scenegen {

// Class indices of the default class set. Ground must be index 0.
enum SemanticClass : uint8_t {
  kGround = 0,
  kRoad = 1,
  kTree = 2,
  kBuilding = 3,
  kWater = 4,
};

inline constexpr int kNumDefaultClasses = 5;

struct IntRange {
  int lo = 0;
  int hi = 0;
  bool operator==(const IntRange&) const = default;
};

// Height assigned per class. Ground, road and water are always 0 m.
struct HeightRule {
  double building_base_m = 10.0;
  double building_m_per_px = 0.02;  // per pixel of footprint area
  double tree_min_m = 5.0;
  double tree_max_m = 15.0;

  double building_height(double area_px) const {
    return building_base_m + building_m_per_px * area_px;
  }
  double tree_mean() const { return 0.5 * (tree_min_m + tree_max_m); }
  bool operator==(const HeightRule&) const = default;
};

struct SceneConfig {
  int image_size = 128;
  std::vector<std::string> class_set = {"ground", "road", "tree", "building",
                                        "water"};
  IntRange building_count_range{2, 5};
  IntRange tree_count_range{3, 8};
  IntRange road_count_range{1, 2};
  IntRange water_count_range{0, 1};
  IntRange building_side_range{10, 36};
  IntRange tree_radius_range{4, 9};
  HeightRule height_rule;
  std::array<double, 2> shadow_direction{0.7071067811865476,
                                         0.7071067811865476};  // (dx, dy)
  bool shadow_on = true;
  double shadow_px_per_m = 0.35;
  double noise_std = 0.03;
  uint64_t seed = 0;

  // Throws DomainError on a violated invariant.
  void validate() const;
  int class_index(const std::string& name) const;

  io::Json to_json() const;
  static SceneConfig from_json(const io::Json& j);
  bool operator==(const SceneConfig&) const = default;
};

struct ScenePatch {
  Image image;        // H x W x 3, 8-bit quantized values in [0, 1]
  LabelMap semantic;  // H x W class indices
  RealMap height;     // H x W meters
  std::string id;

  bool operator==(const ScenePatch&) const = default;
};

inline constexpr std::array<double, 5> kTemplateScales = {0.3, 1.0, 1.5, 2.5,
                                                          3.0};

struct ObjectTemplate {
  int class_index = kBuilding;
  double scale_factor = 1.0;
  Image pixels;  // h x w x 3
  Mask mask;     // h x w
  float height_value = 0.0f;

  int rows() const { return mask.rows(); }
  int cols() const { return mask.cols(); }
  size_t area() const { return count_set(mask); }
};

// Pixel location of the top-left corner; x is the column, y the row.
struct Location {
  int x = 0;
  int y = 0;
  bool operator==(const Location&) const = default;
};

ScenePatch generate_scene(const SceneConfig& config, int64_t index);

// Base footprint area (pixels) of the scale-1 template for a class.
size_t template_base_area(int class_index, const SceneConfig& config);

ObjectTemplate make_template(int class_index, double scale_factor,
                             const SceneConfig& config);

ScenePatch paste_object(const ScenePatch& scene, const ObjectTemplate& tmpl,
                        Location location);

// Darkens ground pixels under `shadow` (same size as the template) whose
// top-left sits at `location`. Semantic and height are left unchanged, so the
// shadow stays labeled ground with height 0.
ScenePatch paste_shadow(const ScenePatch& scene, const Mask& shadow,
                        Location location);

// Builds a shadow footprint for `tmpl` whose area is `shadow_scale` times the
// template's area and which is offset along the configured shadow direction
// by the object's height. Returns the shadow mask in scene coordinates
// (same grid as the scene), excluding the object footprint itself.
Mask shadow_footprint(const SceneConfig& config, const ObjectTemplate& tmpl,
                      Location location, double shadow_scale, int rows,
                      int cols);

// ---------------------------------------------------------------- corpus

struct SplitSizes {
  int train = 2000;
  int val = 200;
  int test = 200;
};

struct Manifest {
  SceneConfig config;
  std::vector<std::string> train, val, test;
  io::Json to_json() const;
  static Manifest from_json(const io::Json& j);
  const std::vector<std::string>& split(const std::string& name) const;
};

// Global scene index of the i-th patch of a split (train, then val, test).
int64_t split_offset(const SplitSizes& sizes, const std::string& split);
std::string patch_id(const std::string& split, int i);

// Generates in memory what write_corpus would place under <root>/<split>.
std::vector<ScenePatch> generate_split(const SceneConfig& config,
                                       const SplitSizes& sizes,
                                       const std::string& split, int jobs = 1);

Manifest write_corpus(const std::filesystem::path& root,
                      const SceneConfig& config, const SplitSizes& sizes,
                      int jobs = 1);
Manifest read_manifest(const std::filesystem::path& root);
void write_patch(const std::filesystem::path& dir, const ScenePatch& patch);
ScenePatch read_patch(const std::filesystem::path& dir, const std::string& id);
std::vector<ScenePatch> load_split(const std::filesystem::path& root,
                                   const std::string& split, int limit = -1);

}  // namespace heightlens::scenegen

#endif  // HEIGHTLENS_SCENEGEN_HPP_
