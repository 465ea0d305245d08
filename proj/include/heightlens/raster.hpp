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

#ifndef HEIGHTLENS_RASTER_HPP_
#define HEIGHTLENS_RASTER_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "heightlens/common.hpp"

namespace heightlens {

// Dense row-major H x W x C grid. Channels are interleaved (HWC), which is
// also the layout the network uses, so images can be copied into tensors
// without reordering.
template <typename T>
class Raster {
 public:
  using value_type = T;

  Raster() = default;
  Raster(int rows, int cols, int channels = 1, T fill = T{})
      : rows_(rows),
        cols_(cols),
        channels_(channels),
        data_(static_cast<size_t>(rows) * cols * channels, fill) {
    if (rows < 0 || cols < 0 || channels < 1) {
      throw ShapeError("raster dimensions must be nonnegative");
    }
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int channels() const { return channels_; }
  size_t size() const { return data_.size(); }
  size_t pixels() const { return static_cast<size_t>(rows_) * cols_; }
  bool empty() const { return data_.empty(); }

  T& operator()(int r, int c, int ch = 0) {
    return data_[(static_cast<size_t>(r) * cols_ + c) * channels_ + ch];
  }
  const T& operator()(int r, int c, int ch = 0) const {
    return data_[(static_cast<size_t>(r) * cols_ + c) * channels_ + ch];
  }

  bool in_bounds(int r, int c) const {
    return r >= 0 && r < rows_ && c >= 0 && c < cols_;
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <typename U>
  bool same_grid(const Raster<U>& other) const {
    return rows_ == other.rows() && cols_ == other.cols();
  }

  bool operator==(const Raster& other) const = default;

 private:
  int rows_ = 0;
  int cols_ = 0;
  int channels_ = 1;
  std::vector<T> data_;
};

using Image = Raster<float>;       // 3 channels, values in [0, 1]
using RealMap = Raster<float>;     // 1 channel
using LabelMap = Raster<uint8_t>;  // class indices
using Mask = Raster<uint8_t>;      // 0 / 1

template <typename T, typename U>
void require_same_grid(const Raster<T>& a, const Raster<U>& b,
                       const std::string& what) {
  if (!a.same_grid(b)) {
    throw ShapeError(what + ": grid mismatch " + std::to_string(a.rows()) +
                     "x" + std::to_string(a.cols()) + " vs " +
                     std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline size_t count_set(const Mask& m) {
  return static_cast<size_t>(
      std::count_if(m.storage().begin(), m.storage().end(),
                    [](uint8_t v) { return v != 0; }));
}

}  // namespace heightlens

#endif  // HEIGHTLENS_RASTER_HPP_
