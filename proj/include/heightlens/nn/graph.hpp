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

#ifndef HEIGHTLENS_NN_GRAPH_HPP_
#define HEIGHTLENS_NN_GRAPH_HPP_

#include <deque>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "heightlens/nn/tensor.hpp"

namespace heightlens::nn {

template <typename T>
struct Parameter {
  Tensor<T> value;
  Tensor<T> grad;

  void zero_grad() {
    if (grad.shape != value.shape) grad = Tensor<T>(value.shape);
    std::fill(grad.data.begin(), grad.data.end(), T(0));
  }
};

// Named parameters in a fixed (lexicographic) order, which is also the order
// the optimizer and checkpoint writer visit them.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(const std::string& name, Tensor<T> value) {
    Parameter<T>& p = params_[name];
    p.value = std::move(value);
    p.zero_grad();
    return p;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  Parameter<T>& at(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("missing parameter '" + name + "'");
    return it->second;
  }
  const Parameter<T>& at(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw Error("missing parameter '" + name + "'");
    return it->second;
  }
  void erase(const std::string& name) { params_.erase(name); }
  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }
  size_t size() const { return params_.size(); }

  size_t scalar_count() const {
    size_t n = 0;
    for (const auto& [name, p] : params_) n += p.value.size();
    return n;
  }
  void zero_grad() {
    for (auto& [name, p] : params_) p.zero_grad();
  }

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& [name, p] : params_) out.add(name, p.value.template cast<U>());
    return out;
  }

 private:
  std::map<std::string, Parameter<T>> params_;
};

template <typename T>
class Graph;

// Handle to a node of a Graph.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  int id = -1;

  const Tensor<T>& value() const { return graph->value(*this); }
  const std::vector<int>& shape() const { return value().shape; }
  int dim(int i) const { return value().dim(i); }
  bool needs_grad() const { return graph->needs_grad(*this); }
};

// Reverse-mode tape. Nodes are appended in evaluation order; backward()
// walks them in reverse and calls each node's pullback once its output
// gradient is complete.
template <typename T>
class Graph {
 public:
  using Pullback = std::function<void(const Tensor<T>& grad_out)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false); }

  // Non-trainable view of an existing tensor (no copy). Used to run a model
  // whose weights stay fixed.
  Var<T> reference(const Tensor<T>& value) {
    Node& n = nodes_.emplace_back();
    n.ref = &value;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  Var<T> input(Tensor<T> value, bool needs_grad) {
    return push(std::move(value), needs_grad && grad_enabled_);
  }

  // Parameter leaf. The value is referenced, not copied; its gradient is
  // accumulated into p.grad during backward().
  Var<T> param(Parameter<T>& p) {
    Node& n = nodes_.emplace_back();
    n.ref = &p.value;
    n.needs_grad = grad_enabled_;
    n.param = &p;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  // Appends the result of an operation. `pullback` receives the gradient
  // with respect to this node's value and must accumulate into its inputs
  // via accumulate().
  Var<T> op(Tensor<T> value, bool needs_grad, Pullback pullback) {
    Var<T> v = push(std::move(value), needs_grad && grad_enabled_);
    if (nodes_.back().needs_grad) nodes_.back().pullback = std::move(pullback);
    return v;
  }

  const Tensor<T>& value(Var<T> v) const {
    const Node& n = nodes_[static_cast<size_t>(v.id)];
    return n.ref ? *n.ref : n.own;
  }
  bool needs_grad(Var<T> v) const {
    return nodes_[static_cast<size_t>(v.id)].needs_grad;
  }

  // Gradient buffer of a node, allocated on first use.
  Tensor<T>& grad(Var<T> v) {
    Node& n = nodes_[static_cast<size_t>(v.id)];
    Tensor<T>& g = n.param ? n.param->grad : n.grad;
    const Tensor<T>& val = n.ref ? *n.ref : n.own;
    if (g.shape != val.shape) g = Tensor<T>(val.shape);
    n.touched = true;
    return g;
  }

  void accumulate(Var<T> v, const Tensor<T>& delta) {
    if (!needs_grad(v)) return;
    Tensor<T>& g = grad(v);
    require_same_shape(g, delta, "accumulate");
    for (size_t i = 0; i < g.size(); ++i) g.data[i] += delta.data[i];
  }

  // Seeds d(loss)/d(loss) = seed and propagates. `loss` must be a scalar
  // unless an explicit seed tensor is given.
  void backward(Var<T> loss) {
    if (value(loss).size() != 1) throw ShapeError("backward needs a scalar");
    Tensor<T> seed(value(loss).shape, T(1));
    backward(loss, seed);
  }

  void backward(Var<T> out, const Tensor<T>& seed) {
    if (!needs_grad(out)) return;
    accumulate(out, seed);
    for (int i = out.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<size_t>(i)];
      if (!n.touched || !n.pullback) continue;
      n.pullback(n.grad);
      // Intermediate gradients are no longer needed once propagated.
      n.grad = Tensor<T>();
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> own;
    const Tensor<T>* ref = nullptr;
    Tensor<T> grad;
    Parameter<T>* param = nullptr;
    Pullback pullback;
    bool needs_grad = false;
    bool touched = false;
  };

  Var<T> push(Tensor<T> value, bool needs_grad) {
    Node& n = nodes_.emplace_back();
    n.own = std::move(value);
    n.needs_grad = needs_grad;
    return {this, static_cast<int>(nodes_.size()) - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
};

}  // namespace heightlens::nn

#endif  // HEIGHTLENS_NN_GRAPH_HPP_
