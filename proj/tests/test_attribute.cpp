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

#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "heightlens/attribute.hpp"

using namespace heightlens;
using namespace heightlens::attribute;
using heightlens::testing::random_image;
using heightlens::testing::random_map;
using heightlens::testing::small_spec;

namespace {

// D(x) = w . x for a fixed weight image w; gradient is w everywhere on the path.
TargetFn linear_target(const std::vector<double>& w) {
  return [w](const nn::Tensor<double>& in, std::vector<double>& values, nn::Tensor<double>& grads) {
    const int B = in.dim(0);
    const size_t per = w.size();
    values.assign(static_cast<size_t>(B), 0.0);
    grads = nn::Tensor<double>(in.shape);
    for (int b = 0; b < B; ++b) {
      for (size_t i = 0; i < per; ++i) {
        values[static_cast<size_t>(b)] += w[i] * in.data[b * per + i];
        grads.data[b * per + i] = w[i];
      }
    }
  };
}

double l1_diff(const AttributionMap& a, const AttributionMap& b) {
  double s = 0.0;
  for (size_t i = 0; i < a.ig.size(); ++i) s += std::abs(a.ig.storage()[i] - b.ig.storage()[i]);
  return s;
}

const toymodel::Net& toy() {
  static const toymodel::Net net(small_spec(toymodel::Variant::kAttention, 8, 3));
  return net;
}

}  // namespace

TEST_CASE("local target sums the window") {
  const RealMap two(6, 6, 1, 2.0f);
  CHECK(local_target(two, 1, 2, 3).value == 18.0);
  const RealMap r = random_map(5, 5, 2, 0, 9);
  CHECK(local_target(r, 3, 1, 1).value == r(1, 3));
  double s = 0.0;
  for (int y = 0; y < 5; ++y)
    for (int x = 0; x < 5; ++x) s += r(y, x);
  CHECK(local_target(r, 0, 0, 5).value == doctest::Approx(s).epsilon(1e-12));
  CHECK_THROWS_AS(local_target(r, 3, 3, 3), PlacementError);
  CHECK_THROWS_AS(local_target(r, 0, 0, 0), PlacementError);
}

TEST_CASE("linear model attributions are exact for every m") {
  const Image img = random_image(6, 5, 8);
  std::vector<double> w(img.size());
  Rng rng(4);
  for (double& v : w) v = rng.normal();
  for (int m : {1, 10, 100}) {
    const AttributionMap a = integrated_gradients(linear_target(w), img, LocalTarget{0, 0, 3, 0.0}, m, 7);
    for (size_t i = 0; i < w.size(); ++i) {
      CHECK(std::abs(a.ig.storage()[i] - w[i] * img.storage()[i]) <= 1e-12 * std::max(1.0, std::abs(w[i])));
    }
    CHECK(a.target_baseline == 0.0);
    CHECK(a.completeness_gap <= 1e-12 * std::max(1.0, std::abs(a.target_input)));
  }
}

TEST_CASE("zero-gradient pixels get zero attribution") {
  const Image img = random_image(4, 4, 1);
  std::vector<double> w(img.size(), 0.0);
  w[5] = 2.0;
  const AttributionMap a = integrated_gradients(linear_target(w), img, LocalTarget{0, 0, 1, 0.0}, 10);
  for (size_t i = 0; i < w.size(); ++i)
    if (i != 5) CHECK(a.ig.storage()[i] == 0.0);
}

TEST_CASE("baseline input attributes nothing") {
  const Image black(32, 32, 3);
  const AttributionMap a = integrated_gradients(toy(), black, LocalTarget{8, 8, 16, 0.0}, 5);
  for (double v : a.ig.storage()) REQUIRE(v == 0.0);
  CHECK(a.target_input == a.target_baseline);
}

TEST_CASE("toy network attributions converge with m") {
  const Image img = random_image(32, 32, 6);
  const LocalTarget t{8, 8, 16, 0.0};
  const AttributionMap a50 = integrated_gradients(toy(), img, t, 50);
  const AttributionMap a100 = integrated_gradients(toy(), img, t, 100);
  const AttributionMap a1000 = integrated_gradients(toy(), img, t, 1000);
  const AttributionMap ref = integrated_gradients(toy(), img, t, 4000, 50);
  CHECK(a100.steps == 100);
  CHECK(a100.target_input == doctest::Approx(local_target(toymodel::forward(toy(), img).height_pred, 8, 8, 16).value)
                                 .epsilon(1e-5));
  // right Riemann sums: error roughly halves as m doubles and drops 10x from 100 to 1000
  CHECK(l1_diff(a1000, ref) * 2.0 <= l1_diff(a100, ref));
  CHECK(a100.completeness_gap <= a50.completeness_gap);
  CHECK(a1000.completeness_gap < a100.completeness_gap);
  CHECK_THROWS_AS(integrated_gradients(toy(), img, t, 0), DomainError);
  CHECK_THROWS_AS(integrated_gradients(toy(), img, LocalTarget{20, 20, 16, 0.0}, 5), PlacementError);
}

TEST_CASE("compactness") {
  AttributionMap a;
  a.ig = Raster<double>(10, 10, 3);
  Mask obj(10, 10);
  obj(5, 5) = 1;
  a.ig(5, 5, 1) = -3.0;
  a.ig(6, 5, 0) = 1.0;
  CHECK(*attribution_compactness(a, obj, 1) == 1.0);
  a.ig.fill(0.5);
  const Mask region = dilate(obj, 4);
  CHECK(*attribution_compactness(a, obj, 4) == doctest::Approx(double(count_set(region)) / 100.0));
  CHECK(count_set(dilate(obj, 1)) == 5);
  a.ig.fill(0.0);
  CHECK_FALSE(attribution_compactness(a, obj, 4).has_value());
  CHECK_THROWS_AS(attribution_compactness(a, Mask(10, 10), 4), DomainError);
}

TEST_CASE("object targets centre a window on each instance") {
  scenegen::ScenePatch s;
  s.semantic = LabelMap(32, 32);
  s.height = RealMap(32, 32);
  s.image = Image(32, 32, 3);
  for (int r = 2; r < 8; ++r)
    for (int c = 20; c < 30; ++c) s.semantic(r, c) = scenegen::kBuilding;
  s.semantic(30, 0) = scenegen::kBuilding;  // below min_area
  const auto ts = object_targets(s, scenegen::kBuilding, 16);
  REQUIRE(ts.size() == 1);
  CHECK(count_set(ts[0].mask) == 60);
  CHECK(ts[0].window.px == 16);  // centroid x 24.5 rounds to 25, clamped to 32 - 16
  CHECK(ts[0].window.py == 0);
  CHECK(ts[0].window.n == 16);
}

TEST_CASE("attribution report body") {
  const Image img = random_image(32, 32, 9);
  const AttributionMap a = integrated_gradients(toy(), img, LocalTarget{0, 0, 8, 0.0}, 4);
  Mask obj(32, 32);
  obj(3, 3) = 1;
  const io::Json j = report_body(a, attribution_compactness(a, obj, 2));
  CHECK(j["steps"] == 4);
  CHECK(j["target"]["n"] == 8);
  CHECK(j["baseline_kind"] == "black");
  CHECK(j["completeness_gap"].get<double>() == a.completeness_gap);
  CHECK(j["compactness"].is_number());
  CHECK(a.magnitude().rows() == 32);
}
