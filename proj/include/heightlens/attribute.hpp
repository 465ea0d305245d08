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

#ifndef HEIGHTLENS_ATTRIBUTE_HPP_
#define HEIGHTLENS_ATTRIBUTE_HPP_

#include <functional>
#include <optional>
#include <vector>

#include "heightlens/io.hpp"
#include "heightlens/nn/ops.hpp"
#include "heightlens/raster.hpp"
#include "heightlens/scenegen.hpp"
#include "heightlens/toymodel.hpp"

namespace heightlens::attribute {

// n x n window with top-left column px and row py; value is the summed
// predicted height inside it.
struct LocalTarget {
  int px = 0;
  int py = 0;
  int n = 16;
  double value = 0.0;
};

LocalTarget local_target(const RealMap& height_pred, int px, int py, int n);

// Evaluates the window target on a batch of inputs [B, H, W, 3]: fills the
// per-sample target values and their gradients with respect to the inputs.
using TargetFn =
    std::function<void(const nn::Tensor<double>& inputs, std::vector<double>& values, nn::Tensor<double>& grads)>;

// Target function of a height network for the window of `t`; the network is
// evaluated in its own scalar type.
template <typename T>
TargetFn network_target(const toymodel::Network<T>& net, const LocalTarget& t) {
  return [&net, t](const nn::Tensor<double>& inputs, std::vector<double>& values, nn::Tensor<double>& grads) {
    nn::Graph<T> g;
    nn::Var<T> x = g.input(inputs.template cast<T>(), true);
    nn::Var<T> h = net.forward(g, x, false).height;
    nn::Var<T> d = nn::window_sum(h, t.py, t.px, t.n);
    values.assign(d.value().data.begin(), d.value().data.end());
    g.backward(nn::sum(d));
    grads = g.grad(x).template cast<double>();
  };
}

struct AttributionMap {
  Raster<double> ig;  // H x W x 3
  LocalTarget target;
  int steps = 0;
  double target_input = 0.0;     // D(x)
  double target_baseline = 0.0;  // D(x') for the black image
  double ig_sum = 0.0;
  double completeness_gap = 0.0;  // |sum IG - (D(x) - D(x'))|

  // Per-pixel sum of |IG| over channels.
  RealMap magnitude() const;
};

// Right-endpoint Riemann sum with alpha = k/m, k = 1..m, from the all-zero
// baseline. Path points are evaluated `batch` at a time.
AttributionMap integrated_gradients(const TargetFn& f, const Image& image, const LocalTarget& target,
                                    int m, int batch = 10);

AttributionMap integrated_gradients(const toymodel::Net& net, const Image& image, LocalTarget target,
                                    int m, int batch = 10);

// Fraction of total |IG| mass inside the object mask dilated by `radius`
// pixels (Euclidean disk); nullopt when the attribution is all zero.
std::optional<double> attribution_compactness(const AttributionMap& map, const Mask& object_mask,
                                              int radius = 4);

Mask dilate(const Mask& mask, int radius);

// Connected instances of `class_index` in a scene with an n x n window
// centered on each (clamped to the image). Instances smaller than
// `min_area` pixels are skipped.
struct ObjectTarget {
  LocalTarget window;
  Mask mask;
};
std::vector<ObjectTarget> object_targets(const scenegen::ScenePatch& scene, int class_index, int n,
                                         size_t min_area = 20);

io::Json report_body(const AttributionMap& map, std::optional<double> compactness);

}  // namespace heightlens::attribute

#endif  // HEIGHTLENS_ATTRIBUTE_HPP_
