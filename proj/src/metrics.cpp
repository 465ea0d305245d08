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

#include "heightlens/metrics.hpp"

#include <cmath>
#include <string>

namespace heightlens::metrics {

namespace {

struct ResidualSums {
  size_t n = 0;
  double sum = 0.0;
  double abs_sum = 0.0;
  double sq_sum = 0.0;
};

ResidualSums residual_sums(const RealMap& pred, const RealMap& gt,
                           const Mask* valid, const char* what) {
  require_same_grid(pred, gt, what);
  if (valid) require_same_grid(pred, *valid, what);
  ResidualSums s;
  for (size_t i = 0; i < pred.pixels(); ++i) {
    if (valid && !valid->storage()[i]) continue;
    const double r = static_cast<double>(gt.storage()[i]) - pred.storage()[i];
    ++s.n;
    s.sum += r;
    s.abs_sum += std::abs(r);
    s.sq_sum += r * r;
  }
  if (s.n == 0) throw UndefinedError(std::string(what) + ": no valid pixels");
  return s;
}

}  // namespace

double mae(const RealMap& pred, const RealMap& gt, const Mask* valid) {
  const auto s = residual_sums(pred, gt, valid, "mae");
  return s.abs_sum / static_cast<double>(s.n);
}

double rmse(const RealMap& pred, const RealMap& gt, const Mask* valid) {
  const auto s = residual_sums(pred, gt, valid, "rmse");
  return std::sqrt(s.sq_sum / static_cast<double>(s.n));
}

double si_rmse(const RealMap& pred, const RealMap& gt, const Mask* valid) {
  require_same_grid(pred, gt, "si_rmse");
  if (valid) require_same_grid(pred, *valid, "si_rmse");
  // Shifting by the first residual keeps the two sums small, which makes the
  // subtraction exact for constant residual fields.
  double shift = 0.0;
  bool have_shift = false;
  size_t n = 0;
  double sum = 0.0, sq = 0.0;
  for (size_t i = 0; i < pred.pixels(); ++i) {
    if (valid && !valid->storage()[i]) continue;
    const double r = static_cast<double>(gt.storage()[i]) - pred.storage()[i];
    if (!have_shift) {
      shift = r;
      have_shift = true;
    }
    const double d = r - shift;
    ++n;
    sum += d;
    sq += d * d;
  }
  if (n == 0) throw UndefinedError("si_rmse: no valid pixels");
  const double dn = static_cast<double>(n);
  return std::max(0.0, sq / dn - (sum / dn) * (sum / dn));
}

double msge(const RealMap& pred, const RealMap& gt, int num_scales) {
  require_same_grid(pred, gt, "msge");
  if (num_scales < 1) throw DomainError("msge needs num_scales >= 1");
  const int div = 1 << (num_scales - 1);
  if (pred.rows() % div != 0 || pred.cols() % div != 0) {
    throw ShapeError("msge with " + std::to_string(num_scales) +
                     " scales needs height and width divisible by " +
                     std::to_string(div));
  }
  int rows = pred.rows(), cols = pred.cols();
  std::vector<double> r(pred.pixels());
  for (size_t i = 0; i < r.size(); ++i) {
    r[i] = static_cast<double>(gt.storage()[i]) - pred.storage()[i];
  }
  double total = 0.0;
  size_t count = 0;
  for (int k = 0; k < num_scales; ++k) {
    for (int y = 0; y < rows; ++y) {
      for (int x = 0; x < cols; ++x) {
        const double v = r[static_cast<size_t>(y) * cols + x];
        if (x + 1 < cols) total += std::abs(r[static_cast<size_t>(y) * cols + x + 1] - v);
        if (y + 1 < rows) total += std::abs(r[static_cast<size_t>(y + 1) * cols + x] - v);
      }
    }
    count += static_cast<size_t>(rows) * cols;
    if (k + 1 == num_scales) break;
    const int nr = rows / 2, nc = cols / 2;
    std::vector<double> next(static_cast<size_t>(nr) * nc);
    for (int y = 0; y < nr; ++y) {
      for (int x = 0; x < nc; ++x) {
        const size_t a = static_cast<size_t>(2 * y) * cols + 2 * x;
        next[static_cast<size_t>(y) * nc + x] =
            0.25 * (r[a] + r[a + 1] + r[a + cols] + r[a + cols + 1]);
      }
    }
    r = std::move(next);
    rows = nr;
    cols = nc;
  }
  return total / static_cast<double>(count);
}

Iou iou(const Mask& pred, const Mask& gt) {
  IouAccumulator acc;
  acc.add(pred, gt);
  return acc.value();
}

double miou(std::span<const Iou> values) {
  if (values.empty()) throw UndefinedError("miou of an empty list");
  double s = 0.0;
  for (const Iou& v : values) s += v.value;
  return s / static_cast<double>(values.size());
}

void IouAccumulator::add(const Mask& pred, const Mask& gt) {
  require_same_grid(pred, gt, "iou");
  for (size_t i = 0; i < pred.pixels(); ++i) {
    const bool p = pred.storage()[i] != 0, g = gt.storage()[i] != 0;
    intersection += (p && g) ? 1 : 0;
    unite += (p || g) ? 1 : 0;
  }
}

Iou IouAccumulator::value() const {
  if (unite == 0) return {1.0, true};
  return {static_cast<double>(intersection) / static_cast<double>(unite), false};
}

void HeightEvaluator::add(const RealMap& pred, const RealMap& gt) {
  const auto s = residual_sums(pred, gt, nullptr, "evaluate");
  ++images_;
  pixels_ += s.n;
  abs_sum_ += s.abs_sum;
  sq_sum_ += s.sq_sum;
  si_sum_ += metrics::si_rmse(pred, gt);
  msge_sum_ += metrics::msge(pred, gt, msge_scales_);
}

double HeightEvaluator::mae() const {
  if (pixels_ == 0) throw UndefinedError("no images evaluated");
  return abs_sum_ / static_cast<double>(pixels_);
}
double HeightEvaluator::rmse() const {
  if (pixels_ == 0) throw UndefinedError("no images evaluated");
  return std::sqrt(sq_sum_ / static_cast<double>(pixels_));
}
double HeightEvaluator::si_rmse() const {
  if (images_ == 0) throw UndefinedError("no images evaluated");
  return si_sum_ / static_cast<double>(images_);
}
double HeightEvaluator::msge() const {
  if (images_ == 0) throw UndefinedError("no images evaluated");
  return msge_sum_ / static_cast<double>(images_);
}

}  // namespace heightlens::metrics
