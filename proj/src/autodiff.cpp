#include "hfc/autodiff.hpp"

#include <cstring>
#include <mutex>

namespace hfc {

namespace {

struct BackwardFault {
  std::mutex mutex;
  std::string op;
  double scale = 1.0;
};

BackwardFault& fault() {
  static BackwardFault instance;
  return instance;
}

}  // namespace

namespace testing {

void inject_backward_fault(std::string op, double scale) {
  std::lock_guard lock(fault().mutex);
  fault().op = std::move(op);
  fault().scale = scale;
}

void clear_backward_fault() { inject_backward_fault({}, 1.0); }

}  // namespace testing

Graph& Var::graph() const {
  if (!graph_) throw std::logic_error("use of an unbound Var");
  return *graph_;
}

const Tensor& Var::value() const { return graph().value(id_); }

Tensor Var::grad() const { return graph().grad(id_); }

Var Graph::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Graph::constant(Tensor value) {
  Node node;
  node.value = std::move(value);
  return push(std::move(node));
}

Var Graph::parameter(Tensor value) {
  Node node;
  node.op = "parameter";
  node.value = std::move(value);
  node.requires_grad = recording();
  return push(std::move(node));
}

Var Graph::emplace(const char* op, Tensor value, std::initializer_list<Var> parents, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  if (recording()) {
    for (const Var& p : parents) {
      if (&p.graph() != this) throw std::logic_error(std::string("op '") + op + "' mixes computation records");
      node.parents.push_back(p.id());
      node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  return push(std::move(node));
}

Var Graph::emplace(const char* op, Tensor value, const std::vector<Var>& parents, BackwardFn backward) {
  Node node;
  node.op = op;
  node.value = std::move(value);
  if (recording()) {
    for (const Var& p : parents) {
      if (&p.graph() != this) throw std::logic_error(std::string("op '") + op + "' mixes computation records");
      node.parents.push_back(p.id());
      node.requires_grad = node.requires_grad || nodes_[p.id()].requires_grad;
    }
    if (node.requires_grad) node.backward = std::move(backward);
  }
  return push(std::move(node));
}

Tensor Graph::grad(std::size_t id) const {
  const Node& node = nodes_.at(id);
  if (node.grad.empty() && !node.value.empty()) return Tensor(node.value.shape(), 0.0);
  return node.grad;
}

Tensor& Graph::grad_buffer(std::size_t id) {
  Node& node = nodes_.at(id);
  if (node.grad.empty()) node.grad = Tensor(node.value.shape(), 0.0);
  return node.grad;
}

void Graph::accumulate(std::size_t id, const Tensor& delta) {
  if (!nodes_.at(id).requires_grad) return;
  Tensor& g = grad_buffer(id);
  if (!g.same_shape(delta)) {
    throw ShapeError(std::string("gradient for '") + nodes_[id].op + "' has shape " + to_string(delta.shape()) +
                     ", expected " + to_string(g.shape()));
  }
  auto dst = g.data();
  auto src = delta.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::backward(Var loss) {
  if (&loss.graph() != this) throw std::logic_error("backward on a Var from another record");
  if (!recording()) throw std::logic_error("backward on an inference-mode record");
  const Node& root = nodes_.at(loss.id());
  if (root.value.size() != 1) {
    throw ShapeError("backward needs a scalar loss, got shape " + to_string(root.value.shape()));
  }
  if (!root.requires_grad) return;

  std::string faulty_op;
  double fault_scale = 1.0;
  {
    std::lock_guard lock(fault().mutex);
    faulty_op = fault().op;
    fault_scale = fault().scale;
  }

  grad_buffer(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.backward || node.grad.empty()) continue;
    if (!faulty_op.empty() && faulty_op == node.op) {
      Tensor scaled = node.grad;
      for (double& v : scaled.data()) v *= fault_scale;
      node.backward(*this, scaled);
    } else {
      // Rules only write to parents, which precede this node.
      node.backward(*this, node.grad);
    }
  }
}

}  // namespace hfc
