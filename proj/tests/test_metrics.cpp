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
#include <vector>

#include "doctest.h"
#include "helpers.hpp"
#include "heightlens/metrics.hpp"

using namespace heightlens;
using namespace heightlens::metrics;
using heightlens::testing::random_map;
using heightlens::testing::random_mask;

namespace {

// Values on a 1/1024 grid so that adding a dyadic shift stays exact in float.
RealMap grid_map(int rows, int cols, uint64_t seed) {
  RealMap m = random_map(rows, cols, seed, 0.0, 30.0);
  for (float& v : m.storage()) v = std::round(v * 1024.0f) / 1024.0f;
  return m;
}

RealMap shifted(const RealMap& m, float c) {
  RealMap out = m;
  for (float& v : out.storage()) v += c;
  return out;
}

double two_pass_variance(const RealMap& pred, const RealMap& gt) {
  const size_t n = pred.pixels();
  double mean = 0.0;
  for (size_t i = 0; i < n; ++i) mean += double(gt.storage()[i]) - pred.storage()[i];
  mean /= double(n);
  double var = 0.0;
  for (size_t i = 0; i < n; ++i) {
    const double d = double(gt.storage()[i]) - pred.storage()[i] - mean;
    var += d * d;
  }
  return var / double(n);
}

}  // namespace

TEST_CASE("mae and rmse on trivial and hand cases") {
  const RealMap gt = grid_map(4, 4, 1);
  CHECK(mae(gt, gt) == 0.0);
  CHECK(rmse(gt, gt) == 0.0);
  CHECK(mae(shifted(gt, 2.5f), gt) == doctest::Approx(2.5).epsilon(1e-12));
  CHECK(rmse(shifted(gt, -2.5f), gt) == doctest::Approx(2.5).epsilon(1e-12));

  const RealMap pred = grid_map(4, 4, 2);
  double a = 0.0, s = 0.0;
  for (size_t i = 0; i < 16; ++i) {
    const double r = double(gt.storage()[i]) - pred.storage()[i];
    a += std::abs(r);
    s += r * r;
  }
  CHECK(mae(pred, gt) == doctest::Approx(a / 16).epsilon(1e-12));
  CHECK(rmse(pred, gt) == doctest::Approx(std::sqrt(s / 16)).epsilon(1e-12));

  Mask valid(4, 4);
  valid(1, 2) = 1;
  CHECK(mae(pred, gt, &valid) == doctest::Approx(std::abs(double(gt(1, 2)) - pred(1, 2))).epsilon(1e-12));
  CHECK_THROWS_AS(mae(pred, gt, &(valid = Mask(4, 4))), UndefinedError);
  CHECK_THROWS_AS(mae(RealMap(3, 4), gt), ShapeError);
}

TEST_CASE("si_rmse is the population variance of residuals") {
  RealMap pred(1, 2), gt(1, 2);
  gt(0, 1) = 2.0f;
  // residuals {0, 2}: (0 + 4) / 2 - 1 = 1
  CHECK(si_rmse(pred, gt) == 1.0);
  const RealMap a = grid_map(8, 8, 3), b = grid_map(8, 8, 4);
  CHECK(si_rmse(a, b) == doctest::Approx(two_pass_variance(a, b)).epsilon(1e-9));
  CHECK(si_rmse(shifted(b, 7.25f), b) == 0.0);
}

TEST_CASE("si_rmse and msge are shift invariant") {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const RealMap p = grid_map(16, 16, 100 + seed), g = grid_map(16, 16, 200 + seed);
    const float c = seed % 2 ? 3.5f : -0.125f;
    const double s0 = si_rmse(p, g), s1 = si_rmse(shifted(p, c), g);
    CHECK(std::abs(s0 - s1) <= 1e-12 * std::abs(s0));
    const double m0 = msge(p, g, 4), m1 = msge(shifted(p, c), g, 4);
    CHECK(std::abs(m0 - m1) <= 1e-12 * std::abs(m0));
  }
}

TEST_CASE("msge hand cases") {
  const RealMap gt = grid_map(8, 8, 5);
  CHECK(msge(gt, gt, 4) == 0.0);
  CHECK(msge(shifted(gt, 1.0f), gt, 4) == 0.0);
  // residual ramp R(x, y) = x on 4x4, one scale: 12 unit steps over 16 px
  RealMap pred(4, 4), ramp(4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) ramp(y, x) = float(x);
  CHECK(msge(pred, ramp, 1) == 0.75);
  // two scales: 8x8 ramp pools to 4x4 ramp with step 2
  RealMap pred8(8, 8), ramp8(8, 8);
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) ramp8(y, x) = float(x);
  // scale 1: 7*8 unit steps; scale 2: 3*4 steps of 2; M = 64 + 16
  CHECK(msge(pred8, ramp8, 2) == doctest::Approx((56.0 + 24.0) / 80.0).epsilon(1e-15));
  CHECK_THROWS_AS(msge(RealMap(6, 6), RealMap(6, 6), 3), ShapeError);
  CHECK_THROWS_AS(msge(pred, ramp, 0), DomainError);
}

TEST_CASE("rmse is at least mae on random pairs") {
  for (uint64_t seed = 0; seed < 1000; ++seed) {
    const RealMap p = random_map(4, 4, 3 * seed + 1, 0, 20), g = random_map(4, 4, 3 * seed + 2, 0, 20);
    REQUIRE(rmse(p, g) >= mae(p, g));
  }
}

TEST_CASE("iou hand cases") {
  Mask a(4, 4), b(4, 4);
  CHECK(iou(a, b).value == 1.0);
  CHECK(iou(a, b).empty_union);
  a.fill(1);
  CHECK(iou(a, a).value == 1.0);
  a.fill(0);
  a(0, 0) = a(0, 1) = a(0, 2) = 1;
  b(0, 1) = b(0, 2) = b(1, 1) = b(1, 2) = 1;
  // |a & b| = 2, |a | b| = 5
  CHECK(iou(a, b).value == 0.4);
  CHECK(iou(b, a).value == 0.4);
  Mask c(4, 4);
  c(3, 3) = 1;
  CHECK(iou(a, c).value == 0.0);
  std::vector<Iou> list = {iou(a, b), iou(a, c), iou(a, a)};
  CHECK(miou(list) == doctest::Approx(1.4 / 3).epsilon(1e-15));
  CHECK_THROWS_AS(miou(std::vector<Iou>{}), UndefinedError);
  CHECK_THROWS_AS(iou(a, Mask(3, 4)), ShapeError);
}

TEST_CASE("iou is symmetric on random masks") {
  for (uint64_t s = 0; s < 50; ++s) {
    const Mask a = random_mask(8, 8, s, 0.3), b = random_mask(8, 8, s + 1000, 0.6);
    CHECK(iou(a, b).value == iou(b, a).value);
  }
}

TEST_CASE("evaluator pools pixels for mae/rmse and averages images otherwise") {
  HeightEvaluator ev(2);
  const RealMap p1 = grid_map(4, 4, 7), g1 = grid_map(4, 4, 8);
  const RealMap p2 = grid_map(4, 4, 9), g2 = grid_map(4, 4, 10);
  ev.add(p1, g1);
  ev.add(p2, g2);
  CHECK(ev.images() == 2);
  CHECK(ev.mae() == doctest::Approx(0.5 * (mae(p1, g1) + mae(p2, g2))).epsilon(1e-12));
  const double ms = 0.5 * (std::pow(rmse(p1, g1), 2) + std::pow(rmse(p2, g2), 2));
  CHECK(ev.rmse() == doctest::Approx(std::sqrt(ms)).epsilon(1e-12));
  CHECK(ev.si_rmse() == doctest::Approx(0.5 * (si_rmse(p1, g1) + si_rmse(p2, g2))).epsilon(1e-12));
  CHECK(ev.msge() == doctest::Approx(0.5 * (msge(p1, g1, 2) + msge(p2, g2, 2))).epsilon(1e-12));
  CHECK_THROWS_AS(HeightEvaluator().mae(), UndefinedError);
}
