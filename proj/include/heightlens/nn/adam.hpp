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

#ifndef HEIGHTLENS_NN_ADAM_HPP_
#define HEIGHTLENS_NN_ADAM_HPP_

#include <cmath>
#include <map>
#include <numbers>
#include <string>

#include "heightlens/nn/graph.hpp"

namespace heightlens::nn {

struct AdamConfig {
  double learning_rate = 2e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled
  double clip_norm = 5.0;     // global gradient norm; <= 0 disables
};

// Cosine decay from `base` to `base * floor_ratio` over `total` steps.
inline double cosine_lr(double base, long step, long total, double floor_ratio = 0.02) {
  if (total <= 1) return base;
  const double t = std::min(1.0, static_cast<double>(step) / static_cast<double>(total - 1));
  const double f = floor_ratio + (1.0 - floor_ratio) * 0.5 * (1.0 + std::cos(std::numbers::pi * t));
  return base * f;
}

template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Applies one update at learning rate `lr` and returns the gradient norm
  // before clipping.
  double step(ParamStore<T>& params, double lr) {
    ++t_;
    double sq = 0.0;
    for (auto& [name, p] : params) {
      for (T g : p.grad.data) sq += static_cast<double>(g) * g;
    }
    const double norm = std::sqrt(sq);
    const double clip =
        (config_.clip_norm > 0.0 && norm > config_.clip_norm) ? config_.clip_norm / norm : 1.0;
    const double b1 = config_.beta1, b2 = config_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      State& s = state_[name];
      if (s.m.size() != p.value.size()) {
        s.m.assign(p.value.size(), 0.0);
        s.v.assign(p.value.size(), 0.0);
      }
      for (size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad.data[i]) * clip;
        s.m[i] = b1 * s.m[i] + (1.0 - b1) * g;
        s.v[i] = b2 * s.v[i] + (1.0 - b2) * g * g;
        const double mh = s.m[i] / c1;
        const double vh = s.v[i] / c2;
        double w = p.value.data[i];
        w -= lr * (mh / (std::sqrt(vh) + config_.eps) + config_.weight_decay * w);
        p.value.data[i] = static_cast<T>(w);
      }
    }
    return norm;
  }

  long steps() const { return t_; }

 private:
  struct State {
    std::vector<double> m, v;
  };
  AdamConfig config_;
  long t_ = 0;
  std::map<std::string, State> state_;
};

}  // namespace heightlens::nn

#endif  // HEIGHTLENS_NN_ADAM_HPP_
