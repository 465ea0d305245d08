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

#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "helpers.hpp"
#include "heightlens/dissect.hpp"

using namespace heightlens;
using namespace heightlens::dissect;
using heightlens::testing::random_map;
using heightlens::testing::small_scene;
using heightlens::testing::small_spec;

namespace {

// Two 4x4 images, three units, three classes. Values picked by hand.
struct Fixture {
  std::vector<FeatureStack> feats;
  std::vector<LabelMap> labels;
  std::vector<MaskSet> masks;
};

Fixture hand_fixture() {
  Fixture f;
  for (int img = 0; img < 2; ++img) {
    FeatureStack s(4, 4, 3);
    LabelMap l(4, 4);
    for (int r = 0; r < 4; ++r) {
      for (int c = 0; c < 4; ++c) {
        l(r, c) = static_cast<uint8_t>(img == 0 ? (r < 2 ? 0 : (c < 2 ? 1 : 2)) : (c == 0 ? 2 : (r == 3 ? 1 : 0)));
        s(r, c, 0) = static_cast<float>(r + c + img);
        s(r, c, 1) = l(r, c) == 1 ? 2.0f : 0.25f;
        s(r, c, 2) = 0.5f * static_cast<float>((r * 4 + c) % 3);
      }
    }
    f.feats.push_back(s);
    f.labels.push_back(l);
    f.masks.push_back(class_masks(l, 3));
  }
  return f;
}

// Eq. 1 summed out longhand.
double brute_response(const Fixture& f, int unit, int cls) {
  double mass = 0.0, area = 0.0;
  for (size_t i = 0; i < f.feats.size(); ++i)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c)
        if (f.labels[i](r, c) == cls) {
          mass += f.feats[i](r, c, unit);
          area += 1.0;
        }
  return mass / area;
}

double brute_cs(std::vector<double> row) {
  const auto top = std::max_element(row.begin(), row.end());
  const double mx = *top;
  row.erase(top);
  const double rest = std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
  return std::abs(mx - rest) / std::abs(mx + rest);
}

}  // namespace

TEST_CASE("responses equal hand summation on the 2-image fixture") {
  const Fixture f = hand_fixture();
  const ResponseMatrix m = responses(f.feats, f.masks);
  REQUIRE(m.units == 3);
  REQUIRE(m.categories == 3);
  for (int k = 0; k < 3; ++k) {
    for (int c = 0; c < 3; ++c) {
      const double want = brute_response(f, k, c);
      CHECK(std::abs(m.at(k, c) - want) <= 1e-9 * std::abs(want));
    }
    const double cs = *selectivity(m.row(k));
    CHECK(std::abs(cs - brute_cs(m.row(k))) <= 1e-9 * cs);
  }
  // unit 1 is 2.0 on class 1 and 0.25 elsewhere
  CHECK(m.at(1, 1) == 2.0);
  CHECK(m.at(1, 0) == 0.25);
}

TEST_CASE("unit equal to a class mask has CS 1; constant unit has CS 0") {
  const Fixture f = hand_fixture();
  std::vector<FeatureStack> feats;
  for (size_t i = 0; i < 2; ++i) {
    FeatureStack s(4, 4, 2);
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) {
        s(r, c, 0) = f.labels[i](r, c) == 2 ? 1.0f : 0.0f;
        s(r, c, 1) = 0.7f;
      }
    feats.push_back(s);
  }
  const ResponseMatrix m = responses(feats, f.masks);
  CHECK(m.at(0, 2) == 1.0);
  CHECK(m.at(0, 0) == 0.0);
  CHECK(m.at(0, 1) == 0.0);
  CHECK(*selectivity(m.row(0)) == 1.0);
  for (int c = 0; c < 3; ++c) CHECK(m.at(1, c) == doctest::Approx(0.7).epsilon(1e-7));
  CHECK(*selectivity(m.row(1)) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("selectivity edge cases") {
  CHECK(*selectivity({1, 0, 0, 0}) == 1.0);
  CHECK(*selectivity({0.3, 0.3, 0.3}) == 0.0);
  CHECK_FALSE(selectivity({0.4}).has_value());
  CHECK_FALSE(selectivity({0, 0, 0}).has_value());
  // undefined entries are dropped before the formula
  CHECK(*selectivity({1, 5, 0}, {true, false, true}) == 1.0);
  CHECK_FALSE(selectivity({1, 5, 0}, {true, false, false}).has_value());
}

TEST_CASE("Table I row uses the mean of non-maximal entries") {
  const double cs = *selectivity({0.7083, 0.0833, 0.0485, 0.1597});
  CHECK(cs == doctest::Approx(brute_cs({0.7083, 0.0833, 0.0485, 0.1597})).epsilon(1e-12));
  // (0.7083 - 0.09717) / (0.7083 + 0.09717)
  CHECK(cs == doctest::Approx(0.7587).epsilon(1e-4));
}

TEST_CASE("scaling a unit scales its responses but not its selectivity") {
  const Fixture f = hand_fixture();
  std::vector<FeatureStack> scaled = f.feats;
  for (auto& s : scaled)
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) s(r, c, 0) *= 2.5f;
  const ResponseMatrix a = responses(f.feats, f.masks), b = responses(scaled, f.masks);
  for (int c = 0; c < 3; ++c) CHECK(b.at(0, c) == doctest::Approx(2.5 * a.at(0, c)).epsilon(1e-12));
  CHECK(*selectivity(b.row(0)) == doctest::Approx(*selectivity(a.row(0))).epsilon(1e-12));
}

TEST_CASE("a single-image dataset matches that image") {
  const Fixture f = hand_fixture();
  ResponseAccumulator acc;
  acc.add(f.feats[0], f.masks[0]);
  const ResponseMatrix m = responses({f.feats[0]}, {f.masks[0]});
  CHECK(acc.result().values == m.values);
}

TEST_CASE("absent classes are undefined and excluded") {
  const Fixture f = hand_fixture();
  std::vector<MaskSet> masks;
  for (const auto& l : f.labels) masks.push_back(class_masks(l, 4));  // class 3 never occurs
  const ResponseMatrix m = responses(f.feats, masks);
  CHECK_FALSE(m.defined[3]);
  CHECK(m.defined[0]);
  const SelectivityReport r = build_report(m, m, {"a", "b", "c", "d"}, {0.0});
  for (int k = 0; k < 3; ++k) CHECK(*r.CS[static_cast<size_t>(k)] == doctest::Approx(*selectivity(m.row(k), m.defined)));
  CHECK(r.to_json()["CR"][0][3].is_null());
}

TEST_CASE("ranking is descending with index tie-break") {
  ResponseMatrix m;
  m.units = 4;
  m.categories = 2;
  m.values = {0.2, 1, 0.9, 0, 0.2, 1, 0.9, 0.5};
  m.defined = {true, true};
  CHECK(rank_units(m, 0) == std::vector<int>({1, 3, 0, 2}));
  CHECK(rank_units(m, 1) == std::vector<int>({0, 2, 3, 1}));
  CHECK_THROWS_AS(rank_units(m, 2), DomainError);
  // brute force on the hand fixture
  const Fixture f = hand_fixture();
  const ResponseMatrix h = responses(f.feats, f.masks);
  for (int c = 0; c < 3; ++c) {
    std::vector<int> want = {0, 1, 2};
    std::sort(want.begin(), want.end(), [&](int a, int b) {
      return h.at(a, c) != h.at(b, c) ? h.at(a, c) > h.at(b, c) : a < b;
    });
    CHECK(rank_units(h, c) == want);
  }
}

TEST_CASE("height discretisation") {
  RealMap h(2, 2);
  h(0, 0) = 10.0f;
  h(1, 1) = 10.0f;
  const auto sets = discretize_height({&h}, 2);
  REQUIRE(sets[0].masks.size() == 2);
  CHECK(count_set(sets[0].masks[0]) == 2);
  CHECK(count_set(sets[0].masks[1]) == 2);

  // heights uniform on (0, 30]: thirds at 10 and 20
  RealMap u(1, 3000);
  for (int i = 0; i < 3000; ++i) u(0, i) = static_cast<float>(30.0 * (i + 1) / 3000.0);
  const auto edges = height_bin_edges({&u}, 4);
  REQUIRE(edges.size() == 3);
  CHECK(edges[0] == 0.0);
  CHECK(edges[1] == doctest::Approx(10.0).epsilon(1e-3));
  CHECK(edges[2] == doctest::Approx(20.0).epsilon(1e-3));
  const MaskSet ms = height_masks(u, edges);
  size_t total = 0;
  for (const Mask& m : ms.masks) total += count_set(m);
  CHECK(total == 3000);  // partition

  CHECK_THROWS_AS(height_bin_edges({&u}, 1), DomainError);
  RealMap zero(3, 3);
  CHECK_THROWS_AS(height_bin_edges({&zero}, 3), DomainError);
}

TEST_CASE("anomaly map values") {
  FeatureStack s(1, 3, 16);
  for (int k = 0; k < 16; ++k) s(0, 0, k) = 0.3f;  // uniform
  s(0, 1, 5) = 2.0f;                                // one-hot
  const AnomalyMap a = anomaly_map(s);
  CHECK(a.values(0, 0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(a.values(0, 1) == doctest::Approx(241.0 / 256.0).epsilon(1e-7));
  CHECK(a.undefined(0, 2) == 1);
  CHECK(a.undefined(0, 0) == 0);
  Mask region(1, 3);
  region(0, 1) = 1;
  CHECK(*mean_anomaly(a, &region) == doctest::Approx(241.0 / 256.0).epsilon(1e-7));
  CHECK(*mean_anomaly(a) == doctest::Approx(0.5 * (1.0 + 241.0 / 256.0)).epsilon(1e-7));
}

TEST_CASE("anomaly map is invariant to channel permutation and bounded by 1") {
  FeatureStack s(6, 6, 8), p(6, 6, 8);
  Rng rng(3);
  for (float& v : s.storage()) v = static_cast<float>(rng.uniform());
  const int perm[8] = {3, 7, 0, 5, 1, 6, 2, 4};
  for (int r = 0; r < 6; ++r)
    for (int c = 0; c < 6; ++c)
      for (int k = 0; k < 8; ++k) p(r, c, k) = s(r, c, perm[k]);
  const AnomalyMap a = anomaly_map(s), b = anomaly_map(p);
  for (size_t i = 0; i < a.values.size(); ++i) {
    CHECK(a.values.storage()[i] == doctest::Approx(b.values.storage()[i]).epsilon(1e-6));
    CHECK(a.values.storage()[i] <= 1.0f);
  }
}

TEST_CASE("checkerboard paste") {
  Image im(16, 16, 3, 0.5f);
  const Mask m = paste_checkerboard(im, 2, 3, 8, 2);
  CHECK(count_set(m) == 64);
  CHECK(im(2, 3, 0) == 1.0f);
  CHECK(im(2, 5, 0) == 0.0f);
  CHECK(im(0, 0, 0) == 0.5f);
  CHECK_THROWS_AS(paste_checkerboard(im, 10, 10, 8, 2), PlacementError);
}

TEST_CASE("analyze on a toy network gives bounded scores and a CSV") {
  const toymodel::Net net(small_spec(toymodel::Variant::kAttention, 8));
  std::vector<scenegen::ScenePatch> patches;
  for (int i = 0; i < 4; ++i) patches.push_back(scenegen::generate_scene(small_scene(5), i));
  const auto cfg = small_scene(5);
  const SelectivityReport r = analyze(net, patches, cfg.class_set, 3);
  CHECK(r.CR.units == 8);
  CHECK(r.HR.categories == 3);
  for (const auto& cs : r.CS)
    if (cs) CHECK((*cs >= 0.0 && *cs <= 1.0));
  for (const auto& hs : r.HS)
    if (hs) CHECK((*hs >= 0.0 && *hs <= 1.0));
  const std::string csv = selectivity_csv(r);
  CHECK(csv.rfind("unit,CR_ground,CR_road,CR_tree,CR_building,CR_water,CS\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 9);
  const io::Json j = r.to_json();
  for (const char* k : {"classes", "CR", "HR", "CS", "HS", "bin_edges", "unit_ranking"}) CHECK(j.contains(k));
  CHECK(j["unit_ranking"]["building"].size() == 8);
}
