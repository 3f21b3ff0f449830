#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <initializer_list>
#include <string>
#include <vector>

#include "hfc/tensor.hpp"

namespace hfc {

class Graph;

/// Handle to a node of a computation record.
class Var {
 public:
  Var() = default;
  Var(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph& graph() const;
  std::size_t id() const noexcept { return id_; }
  bool valid() const noexcept { return graph_ != nullptr; }

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  /// Accumulated gradient after `Graph::backward`; zeros when unreachable.
  Tensor grad() const;

 private:
  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Dynamic reverse-mode computation record.
///
/// Nodes are appended in evaluation order, so creation order is a valid
/// topological order. A record is built for one step and then discarded.
/// In inference mode no parents or backward rules are kept.
class Graph {
 public:
  enum class Mode { record, inference };

  /// Propagates `grad_out` (same shape as the node value) into the parents.
  using BackwardFn = std::function<void(Graph&, const Tensor& grad_out)>;

  explicit Graph(Mode mode = Mode::record) : mode_(mode) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const noexcept { return mode_ == Mode::record; }

  /// Leaf that never receives a gradient.
  Var constant(Tensor value);
  /// Leaf whose gradient is accumulated by `backward`.
  Var parameter(Tensor value);

  /// Appends an op result. Parents that do not require a gradient are
  /// skipped at backward time.
  Var emplace(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward);
  Var emplace(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn backward);

  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }
  const char* op(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }
  bool requires_grad(Var v) const { return requires_grad(v.id()); }
  Tensor grad(std::size_t id) const;

  /// Adds `delta` into the gradient buffer of node `id` when it requires one.
  void accumulate(std::size_t id, const Tensor& delta);
  /// Direct access to a gradient buffer, allocated zeroed on first use.
  Tensor& grad_buffer(std::size_t id);

  /// Reverse accumulation from a scalar loss.
  void backward(Var loss);

  std::size_t size() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    const char* op = "leaf";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  Var push(Node node);

  Mode mode_;
  std::deque<Node> nodes_;  // stable references across appends
};

namespace testing {

/// Scales the incoming gradient of every node created by `op` during
/// backward. Used by fixtures that verify the gradient checker flags a
/// broken rule. Passing an empty name clears the fault.
void inject_backward_fault(std::string op, double scale = 1.5);
void clear_backward_fault();

}  // namespace testing

}  // namespace hfc
