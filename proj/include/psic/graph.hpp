#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "psic/tensor.hpp"

namespace psic {

template <typename T>
class Graph;

// Handle to a node on a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }
};

// Tape-based reverse-mode autodiff. Nodes are appended in execution order,
// which is a topological order by construction; backward() walks it in
// reverse and touches every node that received gradient exactly once.
template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  struct Node {
    std::string op;
    std::vector<std::size_t> inputs;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
    Tensor<T>* sink = nullptr;
  };

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value);
  Var<T> leaf(Tensor<T> value, bool requires_grad = true);
  // Leaf whose gradient is added into *grad_sink during backward.
  Var<T> parameter(const Tensor<T>& value, Tensor<T>* grad_sink);

  // Appends an op node. requires_grad is inherited from the inputs; the
  // backward closure runs only when it is set.
  Var<T> record(std::string op, const std::vector<Var<T>>& inputs, Tensor<T> value,
                BackwardFn backward);

  void backward(Var<T> loss);

  std::size_t size() const { return nodes_.size(); }
  const Node& node(std::size_t id) const { return nodes_.at(id); }
  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

  // Gradient accumulator of a node, zero-allocated on first use. Backward
  // closures add into the buffers of their inputs through this.
  Tensor<T>& grad_buffer(std::size_t id);
  // Gradient after backward(); empty tensor when the node got none.
  const Tensor<T>& grad(Var<T> v) const { return nodes_.at(v.id).grad; }
  const Tensor<T>& grad_of(std::size_t id) const { return nodes_.at(id).grad; }

  // Node ids visited by the last backward(), in visit order.
  const std::vector<std::size_t>& last_backward_order() const { return visit_order_; }

 private:
  Var<T> push(Node n);

  std::vector<Node> nodes_;
  std::vector<std::size_t> visit_order_;
};

template <typename T>
const Tensor<T>& Var<T>::value() const {
  return graph->value(id);
}

}  // namespace psic
