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

#ifndef HEIGHTLENS_NN_TENSOR_HPP_
#define HEIGHTLENS_NN_TENSOR_HPP_

#include <algorithm>
#include <cstddef>
#include <functional>
#include <new>
#include <numeric>
#include <string>
#include <vector>

#include "heightlens/common.hpp"

namespace heightlens::nn {

// 64-byte aligned storage. Eigen peels unaligned heads off vectorized
// reductions, so results would otherwise depend on where malloc put a buffer.
template <typename T>
struct AlignedAllocator {
  using value_type = T;
  static constexpr std::align_val_t kAlign{64};
  AlignedAllocator() = default;
  template <typename U>
  AlignedAllocator(const AlignedAllocator<U>&) {}
  T* allocate(size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), kAlign)); }
  void deallocate(T* p, size_t) { ::operator delete(p, kAlign); }
  template <typename U>
  bool operator==(const AlignedAllocator<U>&) const { return true; }
};

template <typename T>
using AlignedVector = std::vector<T, AlignedAllocator<T>>;

// Dense row-major tensor. Activations are NHWC: [batch, rows, cols, channels].
template <typename T>
struct Tensor {
  std::vector<int> shape;
  AlignedVector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s, T fill = T(0))
      : shape(std::move(s)), data(count(shape), fill) {}
  Tensor(std::vector<int> s, std::vector<T> values)
      : shape(std::move(s)), data(values.begin(), values.end()) {
    if (data.size() != count(shape)) throw ShapeError("tensor size mismatch");
  }

  static size_t count(const std::vector<int>& s) {
    return std::accumulate(s.begin(), s.end(), size_t{1},
                           [](size_t a, int b) { return a * static_cast<size_t>(b); });
  }

  size_t size() const { return data.size(); }
  int rank() const { return static_cast<int>(shape.size()); }
  int dim(int i) const { return shape[static_cast<size_t>(i < 0 ? rank() + i : i)]; }
  // Product of all dimensions but the last.
  size_t rows() const { return shape.empty() ? 1 : size() / shape.back(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& operator[](size_t i) { return data[i]; }
  const T& operator[](size_t i) const { return data[i]; }

  template <typename U>
  Tensor<U> cast() const {
    Tensor<U> out;
    out.shape = shape;
    out.data.assign(data.begin(), data.end());
    return out;
  }
};

inline std::string shape_string(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    out += (i ? "," : "") + std::to_string(s[i]);
  }
  return out + "]";
}

template <typename T, typename U>
void require_same_shape(const Tensor<T>& a, const Tensor<U>& b,
                        const char* op) {
  if (a.shape != b.shape) {
    throw ShapeError(std::string(op) + ": shape " + shape_string(a.shape) +
                     " vs " + shape_string(b.shape));
  }
}

}  // namespace heightlens::nn

#endif  // HEIGHTLENS_NN_TENSOR_HPP_
