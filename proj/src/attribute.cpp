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

#include "heightlens/attribute.hpp"

#include <algorithm>
#include <cmath>

namespace heightlens::attribute {

LocalTarget local_target(const RealMap& height_pred, int px, int py, int n) {
  if (n < 1 || px < 0 || py < 0 || px + n > height_pred.cols() || py + n > height_pred.rows()) {
    throw PlacementError("local target window outside the image");
  }
  LocalTarget t{px, py, n, 0.0};
  for (int r = py; r < py + n; ++r)
    for (int c = px; c < px + n; ++c) t.value += height_pred(r, c);
  return t;
}

RealMap AttributionMap::magnitude() const {
  RealMap m(ig.rows(), ig.cols());
  for (int r = 0; r < ig.rows(); ++r) {
    for (int c = 0; c < ig.cols(); ++c) {
      double s = 0.0;
      for (int ch = 0; ch < ig.channels(); ++ch) s += std::abs(ig(r, c, ch));
      m(r, c) = static_cast<float>(s);
    }
  }
  return m;
}

AttributionMap integrated_gradients(const TargetFn& f, const Image& image, const LocalTarget& target,
                                    int m, int batch) {
  if (m <= 0) throw DomainError("integrated_gradients: m must be >= 1");
  if (batch < 1) batch = 1;
  const int H = image.rows(), W = image.cols(), C = image.channels();
  if (target.n < 1 || target.px < 0 || target.py < 0 || target.px + target.n > W || target.py + target.n > H) {
    throw PlacementError("local target window outside the image");
  }
  const size_t per = image.size();
  std::vector<double> x(image.storage().begin(), image.storage().end());
  std::vector<double> grad_sum(per, 0.0);

  AttributionMap out;
  out.target = target;
  out.steps = m;

  std::vector<double> values;
  nn::Tensor<double> grads;
  {
    // D(x) and D(x') in one call
    nn::Tensor<double> ends({2, H, W, C});
    std::copy(x.begin(), x.end(), ends.data.begin());
    f(ends, values, grads);
    out.target_input = values[0];
    out.target_baseline = values[1];
  }
  for (int k0 = 1; k0 <= m; k0 += batch) {
    const int b = std::min(batch, m - k0 + 1);
    nn::Tensor<double> pts({b, H, W, C});
    for (int j = 0; j < b; ++j) {
      const double alpha = static_cast<double>(k0 + j) / m;
      double* dst = pts.data.data() + static_cast<size_t>(j) * per;
      for (size_t i = 0; i < per; ++i) dst[i] = alpha * x[i];
    }
    f(pts, values, grads);
    for (int j = 0; j < b; ++j) {
      const double* g = grads.data.data() + static_cast<size_t>(j) * per;
      for (size_t i = 0; i < per; ++i) grad_sum[i] += g[i];
    }
  }
  out.ig = Raster<double>(H, W, C);
  double s = 0.0;
  for (size_t i = 0; i < per; ++i) {
    const double v = x[i] * grad_sum[i] / m;  // baseline is zero
    out.ig.storage()[i] = v;
    s += v;
  }
  out.ig_sum = s;
  out.completeness_gap = std::abs(s - (out.target_input - out.target_baseline));
  return out;
}

AttributionMap integrated_gradients(const toymodel::Net& net, const Image& image, LocalTarget target,
                                    int m, int batch) {
  return integrated_gradients(network_target(net, target), image, target, m, batch);
}

Mask dilate(const Mask& mask, int radius) {
  Mask out(mask.rows(), mask.cols());
  for (int r = 0; r < mask.rows(); ++r) {
    for (int c = 0; c < mask.cols(); ++c) {
      if (!mask(r, c)) continue;
      for (int dr = -radius; dr <= radius; ++dr) {
        for (int dc = -radius; dc <= radius; ++dc) {
          if (dr * dr + dc * dc > radius * radius || !out.in_bounds(r + dr, c + dc)) continue;
          out(r + dr, c + dc) = 1;
        }
      }
    }
  }
  return out;
}

std::optional<double> attribution_compactness(const AttributionMap& map, const Mask& object_mask, int radius) {
  require_same_grid(map.ig, object_mask, "attribution_compactness");
  if (count_set(object_mask) == 0) throw DomainError("attribution_compactness: empty object mask");
  const Mask region = dilate(object_mask, radius);
  const RealMap mag = map.magnitude();
  double inside = 0.0, total = 0.0;
  for (size_t p = 0; p < mag.size(); ++p) {
    total += mag.storage()[p];
    if (region.storage()[p]) inside += mag.storage()[p];
  }
  if (total <= 0.0) return std::nullopt;
  return inside / total;
}

std::vector<ObjectTarget> object_targets(const scenegen::ScenePatch& scene, int class_index, int n,
                                         size_t min_area) {
  const LabelMap& sem = scene.semantic;
  const int R = sem.rows(), C = sem.cols();
  if (n > R || n > C) throw PlacementError("window larger than the scene");
  Raster<uint8_t> seen(R, C);
  std::vector<ObjectTarget> out;
  std::vector<std::pair<int, int>> stack, pixels;
  for (int r = 0; r < R; ++r) {
    for (int c = 0; c < C; ++c) {
      if (sem(r, c) != class_index || seen(r, c)) continue;
      pixels.clear();
      stack.assign(1, {r, c});
      seen(r, c) = 1;
      while (!stack.empty()) {
        auto [y, x] = stack.back();
        stack.pop_back();
        pixels.push_back({y, x});
        const int dy[4] = {-1, 1, 0, 0}, dx[4] = {0, 0, -1, 1};
        for (int k = 0; k < 4; ++k) {
          const int ny = y + dy[k], nx = x + dx[k];
          if (!sem.in_bounds(ny, nx) || sem(ny, nx) != class_index || seen(ny, nx)) continue;
          seen(ny, nx) = 1;
          stack.push_back({ny, nx});
        }
      }
      if (pixels.size() < min_area) continue;
      ObjectTarget t;
      t.mask = Mask(R, C);
      double sy = 0.0, sx = 0.0;
      for (auto [y, x] : pixels) {
        t.mask(y, x) = 1;
        sy += y;
        sx += x;
      }
      const int cy = static_cast<int>(std::lround(sy / static_cast<double>(pixels.size())));
      const int cx = static_cast<int>(std::lround(sx / static_cast<double>(pixels.size())));
      t.window.n = n;
      t.window.py = std::clamp(cy - n / 2, 0, R - n);
      t.window.px = std::clamp(cx - n / 2, 0, C - n);
      out.push_back(std::move(t));
    }
  }
  return out;
}

io::Json report_body(const AttributionMap& map, std::optional<double> compactness) {
  return {{"target", {{"px", map.target.px}, {"py", map.target.py}, {"n", map.target.n},
                      {"value", map.target_input}}},
          {"steps", map.steps},
          {"baseline_kind", "black"},
          {"target_baseline", map.target_baseline},
          {"ig_sum", map.ig_sum},
          {"completeness_gap", map.completeness_gap},
          {"compactness", compactness ? io::Json(*compactness) : io::Json(nullptr)}};
}

}  // namespace heightlens::attribute
