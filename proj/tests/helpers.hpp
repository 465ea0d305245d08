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

#ifndef HEIGHTLENS_TESTS_HELPERS_HPP_
#define HEIGHTLENS_TESTS_HELPERS_HPP_

#include <filesystem>
#include <string>

#include "heightlens/random.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::testing {

namespace fs = std::filesystem;

// Fresh scratch directory, removed first if a previous run left it behind.
inline fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "heightlens_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 32 px scenes with few objects, cheap enough for unit tests.
inline scenegen::SceneConfig small_scene(uint64_t seed = 3) {
  scenegen::SceneConfig c;
  c.image_size = 32;
  c.building_count_range = {1, 2};
  c.tree_count_range = {1, 2};
  c.road_count_range = {0, 1};
  c.water_count_range = {0, 0};
  c.building_side_range = {5, 9};
  c.tree_radius_range = {2, 3};
  c.seed = seed;
  return c;
}

inline toymodel::ModelSpec small_spec(toymodel::Variant v = toymodel::Variant::kAttention,
                                      int units = 8, uint64_t seed = 1) {
  toymodel::ModelSpec s;
  s.variant = v;
  s.final_units = units;
  s.depth = 2;
  s.base_width = 4;
  s.window = 4;
  s.attention_heads = 2;
  s.seed = seed;
  return s;
}

inline RealMap random_map(int rows, int cols, uint64_t seed, double lo = 0.0, double hi = 1.0) {
  RealMap m(rows, cols);
  Rng rng(seed);
  for (float& v : m.storage()) v = static_cast<float>(rng.uniform(lo, hi));
  return m;
}

inline Image random_image(int rows, int cols, uint64_t seed) {
  Image im(rows, cols, 3);
  Rng rng(seed);
  for (float& v : im.storage()) v = static_cast<float>(rng.uniform());
  return im;
}

inline Mask random_mask(int rows, int cols, uint64_t seed, double p = 0.5) {
  Mask m(rows, cols);
  Rng rng(seed);
  for (uint8_t& v : m.storage()) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

}  // namespace heightlens::testing

#endif  // HEIGHTLENS_TESTS_HELPERS_HPP_
