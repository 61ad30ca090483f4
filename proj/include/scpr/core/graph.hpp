#pragma once
// Reverse-mode differentiation over whole tensors.
//
// A Graph records one forward pass. Every operation appends a node holding its
// value and, when any input needs a gradient, a closure that propagates the
// node's gradient to its inputs. Nodes are never mutated after creation.
// Parameter leaves accumulate straight into Parameter::grad.

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "scpr/core/tensor.hpp"

namespace scpr {

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  bool trainable = true;

  Tensor<T>& ensure_grad() {
    if (grad.shape() != value.shape()) grad = Tensor<T>(value.shape());
    return grad;
  }
  void zero_grad() {
    if (!grad.empty()) grad.fill(T{0});
  }
};

/// Owns the parameters of a model. Names are unique and insertion order is
/// the canonical order used by checkpoints and optimizers.
template <typename T>
class ParameterSet {
 public:
  Parameter<T>& add(std::string name, Tensor<T> init, bool trainable = true) {
    if (index_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter<T>>();
    p->name = name;
    p->value = std::move(init);
    p->trainable = trainable;
    index_.emplace(std::move(name), params_.size());
    params_.push_back(std::move(p));
    return *params_.back();
  }

  Parameter<T>* find(std::string_view name) {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  const Parameter<T>* find(std::string_view name) const {
    auto it = index_.find(std::string(name));
    return it == index_.end() ? nullptr : params_[it->second].get();
  }
  Parameter<T>& at(std::string_view name) {
    if (auto* p = find(name)) return *p;
    throw ConfigError("unknown parameter '" + std::string(name) + "'");
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t element_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

template <typename T>
class Graph;

/// Handle to a node of a Graph.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::uint32_t id) : graph_(graph), id_(id) {}

  bool valid() const noexcept { return graph_ != nullptr; }
  Graph<T>& graph() const noexcept { return *graph_; }
  std::uint32_t id() const noexcept { return id_; }

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  Graph<T>* graph_ = nullptr;
  std::uint32_t id_ = 0;
};

template <typename T>
class Graph {
 public:
  using Backward = std::function<void(Graph&)>;

  /// A graph built with tracking disabled records values only.
  explicit Graph(bool track_gradients = true) : tracking_(track_gradients) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool tracking() const noexcept { return tracking_; }

  Var<T> constant(Tensor<T> value) {
    nodes_.push_back(Node{std::move(value), {}, nullptr, false, {}});
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  /// Leaf bound to a parameter. Repeated calls return the same node.
  Var<T> parameter(Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
    nodes_.push_back(Node{{}, {}, &p, tracking_ && p.trainable, {}});
    const auto id = static_cast<std::uint32_t>(nodes_.size() - 1);
    param_nodes_.emplace(&p, id);
    return Var<T>(this, id);
  }

  /// Appends an operation result. The closure is kept only when one of the
  /// inputs needs a gradient.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, Backward backward) {
    bool needs = false;
    if (tracking_)
      for (const auto& in : inputs) needs = needs || requires_grad(in);
    nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(backward) : Backward{}});
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  Var<T> record(Tensor<T> value, const std::vector<Var<T>>& inputs, Backward backward) {
    bool needs = false;
    if (tracking_)
      for (const auto& in : inputs) needs = needs || requires_grad(in);
    nodes_.push_back(Node{std::move(value), {}, nullptr, needs, needs ? std::move(backward) : Backward{}});
    return Var<T>(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  const Tensor<T>& value(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return n.param ? n.param->value : n.value;
  }
  const Tensor<T>& value(Var<T> v) const { return value(v.id()); }

  bool requires_grad(Var<T> v) const { return nodes_[v.id()].requires_grad; }

  /// Gradient buffer of a node, zero-initialised on first access.
  Tensor<T>& grad(Var<T> v) { return grad(v.id()); }
  Tensor<T>& grad(std::uint32_t id) {
    Node& n = nodes_[id];
    if (n.param) return n.param->ensure_grad();
    if (n.grad.shape() != n.value.shape()) n.grad = Tensor<T>(n.value.shape());
    return n.grad;
  }

  bool has_grad(std::uint32_t id) const {
    const Node& n = nodes_[id];
    return !n.param && !n.grad.empty();
  }

  /// Propagates d(loss)/d(node) to every reachable parameter.
  void backward(Var<T> loss) {
    if (value(loss).size() != 1)
      throw DimensionError("backward requires a scalar loss, got shape " +
                           shape_string(value(loss).shape()));
    if (!requires_grad(loss)) return;
    grad(loss)[0] = T{1};
    for (std::int64_t id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[static_cast<std::size_t>(id)];
      if (n.backward && has_grad(static_cast<std::uint32_t>(id))) n.backward(*this);
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }
  /// Id the next recorded node will receive.
  std::uint32_t next_id() const noexcept { return static_cast<std::uint32_t>(nodes_.size()); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Parameter<T>* param;
    bool requires_grad;
    Backward backward;
  };

  bool tracking_;
  std::vector<Node> nodes_;
  std::unordered_map<const Parameter<T>*, std::uint32_t> param_nodes_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

}  // namespace scpr
