#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "aupipe/errors.hpp"

namespace aupipe {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << ']';
  return os.str();
}

template <typename Real>
class BasicTensor;

namespace detail {

// One recorded operation. `backward` receives the gradient flowing into the
// node's output and one span per parent; spans of untracked parents are empty.
template <typename Real>
struct GraphNode {
  std::string_view op;
  std::vector<std::size_t> parents;  // npos for untracked inputs
  std::size_t size = 0;
  std::function<void(std::span<const Real>, std::span<std::span<Real>>)> backward;
  std::vector<Real> grad;
  std::shared_ptr<std::vector<Real>> leaf_grad;  // set for requires_grad leaves
};

template <typename Real>
class GraphState {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  std::size_t add_leaf(const std::shared_ptr<std::vector<Real>>& grad, std::size_t size) {
    auto it = leaf_index_.find(grad.get());
    if (it != leaf_index_.end()) return it->second;
    GraphNode<Real> node;
    node.op = "leaf";
    node.size = size;
    node.leaf_grad = grad;
    nodes_.push_back(std::move(node));
    leaf_index_.emplace(grad.get(), nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  std::size_t add_node(GraphNode<Real> node) {
    nodes_.push_back(std::move(node));
    return nodes_.size() - 1;
  }

  bool consumed() const { return consumed_; }
  std::size_t node_count() const { return nodes_.size(); }
  std::string_view op_of(std::size_t id) const { return nodes_.at(id).op; }
  const std::vector<std::size_t>& parents_of(std::size_t id) const { return nodes_.at(id).parents; }

  // Reverse sweep from `root` over the tape. Node ids are creation order, so
  // every parent id is smaller than its child's and a descending scan is a
  // valid reverse topological order. Returns the number of nodes visited.
  std::size_t run_backward(std::size_t root) {
    if (consumed_) throw Error("backward: graph already consumed");
    consumed_ = true;
    auto& top = nodes_.at(root);
    top.grad.assign(top.size, Real(1));
    std::size_t visited = 0;
    std::vector<std::span<Real>> spans;
    for (std::size_t id = root + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.grad.empty()) continue;
      ++visited;
      if (node.leaf_grad) {
        auto& dst = *node.leaf_grad;
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += node.grad[i];
      } else if (node.backward) {
        spans.assign(node.parents.size(), std::span<Real>{});
        for (std::size_t p = 0; p < node.parents.size(); ++p) {
          std::size_t pid = node.parents[p];
          if (pid == npos) continue;
          auto& parent = nodes_[pid];
          if (parent.grad.empty()) parent.grad.assign(parent.size, Real(0));
          spans[p] = std::span<Real>(parent.grad);
        }
        node.backward(std::span<const Real>(node.grad), std::span<std::span<Real>>(spans));
      }
      // Gradients of interior nodes are dead once propagated.
      std::vector<Real>().swap(node.grad);
      node.backward = nullptr;
    }
    nodes_.clear();
    leaf_index_.clear();
    return visited;
  }

 private:
  std::vector<GraphNode<Real>> nodes_;
  std::unordered_map<const void*, std::size_t> leaf_index_;
  bool consumed_ = false;
};

template <typename Real>
inline thread_local std::shared_ptr<GraphState<Real>> active_graph;

}  // namespace detail

/// Records every operation executed on this thread while alive. Graphs are
/// confined to the thread that created them; nested tapes shadow outer ones.
template <typename Real>
class BasicGradTape {
 public:
  BasicGradTape() : state_(std::make_shared<detail::GraphState<Real>>()), previous_(detail::active_graph<Real>) {
    detail::active_graph<Real> = state_;
  }
  ~BasicGradTape() { detail::active_graph<Real> = std::move(previous_); }
  BasicGradTape(const BasicGradTape&) = delete;
  BasicGradTape& operator=(const BasicGradTape&) = delete;

  std::size_t node_count() const { return state_->node_count(); }

  template <typename>
  friend class BasicTensor;
  std::shared_ptr<detail::GraphState<Real>> state_;
  std::shared_ptr<detail::GraphState<Real>> previous_;
};

/// Suspends recording on this thread (finite-difference probes, inference).
template <typename Real>
class BasicNoGrad {
 public:
  BasicNoGrad() : previous_(detail::active_graph<Real>) { detail::active_graph<Real> = nullptr; }
  ~BasicNoGrad() { detail::active_graph<Real> = std::move(previous_); }
  BasicNoGrad(const BasicNoGrad&) = delete;
  BasicNoGrad& operator=(const BasicNoGrad&) = delete;

 private:
  std::shared_ptr<detail::GraphState<Real>> previous_;
};

/// Dense row-major array. Values are immutable once built and shared between
/// copies; the gradient buffer (when requires_grad is set) is shared as well,
/// so a copy of a parameter sees gradients accumulated through the original.
template <typename Real>
class BasicTensor {
 public:
  using value_type = Real;

  BasicTensor() : BasicTensor(Shape{}, std::vector<Real>{Real(0)}) {}

  BasicTensor(Shape shape, std::vector<Real> values) : shape_(std::move(shape)) {
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape_));
    if (values.size() != shape_numel(shape_))
      throw ShapeError("tensor data length " + std::to_string(values.size()) + " does not match shape " +
                       shape_str(shape_));
    data_ = std::make_shared<const std::vector<Real>>(std::move(values));
  }

  static BasicTensor zeros(Shape shape) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<Real>(n, Real(0)));
  }
  static BasicTensor full(Shape shape, Real value) {
    auto n = shape_numel(shape);
    return BasicTensor(std::move(shape), std::vector<Real>(n, value));
  }
  static BasicTensor scalar(Real value) { return BasicTensor(Shape{}, std::vector<Real>{value}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_->size(); }

  std::span<const Real> data() const { return std::span<const Real>(*data_); }
  const std::vector<Real>& values() const { return *data_; }
  const std::shared_ptr<const std::vector<Real>>& storage() const { return data_; }
  Real operator[](std::size_t i) const { return (*data_)[i]; }
  Real item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
    return (*data_)[0];
  }

  bool requires_grad() const { return static_cast<bool>(grad_); }
  BasicTensor& set_requires_grad(bool on = true) {
    if (on && !grad_) grad_ = std::make_shared<std::vector<Real>>(size(), Real(0));
    if (!on) grad_.reset();
    return *this;
  }
  bool has_grad() const { return static_cast<bool>(grad_); }
  std::span<const Real> grad() const {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return std::span<const Real>(*grad_);
  }
  std::span<Real> mutable_grad() {
    if (!grad_) throw Error("tensor has no gradient buffer");
    return std::span<Real>(*grad_);
  }
  void zero_grad() {
    if (grad_) std::fill(grad_->begin(), grad_->end(), Real(0));
  }

  /// Same values, no graph node and no gradient buffer.
  BasicTensor detach() const {
    BasicTensor out = *this;
    out.grad_.reset();
    out.graph_.reset();
    out.node_ = npos;
    return out;
  }
  /// Same values with a new zeroed gradient buffer not shared with this one.
  BasicTensor with_fresh_grad() const {
    BasicTensor out = detach();
    out.grad_ = std::make_shared<std::vector<Real>>(size(), Real(0));
    return out;
  }
  /// Replaces the values, keeping the gradient buffer (optimizer updates).
  BasicTensor with_values(std::vector<Real> values) const {
    BasicTensor out(shape_, std::move(values));
    out.grad_ = grad_;
    return out;
  }

  std::optional<std::size_t> node_id() const {
    if (node_ == npos) return std::nullopt;
    return node_;
  }

  template <typename Other>
  BasicTensor<Other> cast() const {
    std::vector<Other> v(data_->begin(), data_->end());
    return BasicTensor<Other>(shape_, std::move(v));
  }

  // -- graph plumbing used by op implementations -------------------------

  using BackwardFn = std::function<void(std::span<const Real>, std::span<std::span<Real>>)>;

  /// Builds an op result. When a tape is active and any input is tracked the
  /// op is recorded with `backward`; otherwise it is a plain value.
  static BasicTensor make_result(std::string_view op, Shape shape, std::vector<Real> values,
                                 std::initializer_list<const BasicTensor*> inputs, BackwardFn backward) {
    return make_result(op, std::move(shape), std::move(values), std::vector<const BasicTensor*>(inputs),
                       std::move(backward));
  }

  static BasicTensor make_result(std::string_view op, Shape shape, std::vector<Real> values,
                                 const std::vector<const BasicTensor*>& inputs, BackwardFn backward) {
    return attach(op, BasicTensor(std::move(shape), std::move(values)), inputs, std::move(backward));
  }

  /// Result viewing existing storage under a new shape of equal size.
  static BasicTensor make_view(std::string_view op, Shape shape, const BasicTensor& source, BackwardFn backward) {
    BasicTensor out;
    out.shape_ = std::move(shape);
    out.data_ = source.data_;
    return attach(op, std::move(out), {&source}, std::move(backward));
  }

 private:
  static BasicTensor attach(std::string_view op, BasicTensor out, const std::vector<const BasicTensor*>& inputs,
                            BackwardFn backward) {
    const auto& graph = detail::active_graph<Real>;
    if (!graph || graph->consumed()) return out;
    std::vector<std::size_t> parents;
    parents.reserve(inputs.size());
    bool any = false;
    for (const auto* in : inputs) {
      std::size_t pid = in->track_in(*graph);
      any = any || pid != npos;
      parents.push_back(pid);
    }
    if (!any) return out;
    detail::GraphNode<Real> node;
    node.op = op;
    node.parents = std::move(parents);
    node.size = out.size();
    node.backward = std::move(backward);
    out.node_ = graph->add_node(std::move(node));
    out.graph_ = graph;
    return out;
  }

  template <typename>
  friend class BasicTensor;
  template <typename R>
  friend std::size_t backward(const BasicTensor<R>& loss);

  static constexpr std::size_t npos = detail::GraphState<Real>::npos;

  std::size_t track_in(detail::GraphState<Real>& graph) const {
    if (graph_ && graph_.get() == &graph && node_ != npos) return node_;
    if (grad_) return graph.add_leaf(grad_, size());
    return npos;
  }

  template <typename R>
  friend class BasicGradTape;

  Shape shape_;
  std::shared_ptr<const std::vector<Real>> data_;
  std::shared_ptr<std::vector<Real>> grad_;
  std::shared_ptr<detail::GraphState<Real>> graph_;
  std::size_t node_ = npos;
};

/// Runs reverse-mode differentiation from a scalar loss, accumulating into
/// the gradient buffers of every requires_grad tensor that fed it. The graph
/// is released afterwards; a second call on the same graph throws.
/// Returns the number of graph nodes visited.
template <typename Real>
std::size_t backward(const BasicTensor<Real>& loss) {
  if (loss.size() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  if (!loss.graph_ || loss.node_ == BasicTensor<Real>::npos)
    throw Error("backward: loss is not attached to a computation graph");
  return loss.graph_->run_backward(loss.node_);
}

using Tensor = BasicTensor<double>;
using GradTape = BasicGradTape<double>;
using NoGrad = BasicNoGrad<double>;

}  // namespace aupipe
