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

#ifndef HEIGHTLENS_METRICS_HPP_
#define HEIGHTLENS_METRICS_HPP_

#include <span>
#include <vector>

#include "heightlens/raster.hpp"

namespace heightlens::metrics {

// Height-error metrics. `valid`, when given, selects the pixels that count;
// all accumulation is in double precision in row-major order.
double mae(const RealMap& pred, const RealMap& gt, const Mask* valid = nullptr);
double rmse(const RealMap& pred, const RealMap& gt, const Mask* valid = nullptr);

// (1/n) sum R^2 - (1/n^2) (sum R)^2 with R = gt - pred: the population variance
// of the residuals, in squared meters. No logarithm and no square root.
double si_rmse(const RealMap& pred, const RealMap& gt,
               const Mask* valid = nullptr);

// Multi-scale gradient error. Scale 1 is the residual itself; each further
// scale halves it with 2x2 average pooling. Forward differences, so the last
// column (x) and last row (y) contribute nothing. The absolute gradients of
// all scales are summed and divided by the total pixel count over scales.
double msge(const RealMap& pred, const RealMap& gt, int num_scales = 4);

struct Iou {
  double value = 0.0;
  bool empty_union = false;  // both masks empty; value is then 1.0
};

Iou iou(const Mask& pred, const Mask& gt);
double miou(std::span<const Iou> values);

// Dataset-level summary. MAE and RMSE pool every pixel of every image;
// SI-RMSE and MSGE are per-image statistics averaged over images.
class HeightEvaluator {
 public:
  explicit HeightEvaluator(int msge_scales = 4) : msge_scales_(msge_scales) {}
  void add(const RealMap& pred, const RealMap& gt);

  size_t images() const { return images_; }
  double mae() const;
  double rmse() const;
  double si_rmse() const;
  double msge() const;

 private:
  int msge_scales_;
  size_t images_ = 0;
  size_t pixels_ = 0;
  double abs_sum_ = 0.0;
  double sq_sum_ = 0.0;
  double si_sum_ = 0.0;
  double msge_sum_ = 0.0;
};

// Accumulates intersections and unions over a dataset for one class.
struct IouAccumulator {
  size_t intersection = 0;
  size_t unite = 0;
  void add(const Mask& pred, const Mask& gt);
  Iou value() const;
};

}  // namespace heightlens::metrics

#endif  // HEIGHTLENS_METRICS_HPP_
