#include "psic/graph.hpp"

#include "psic/errors.hpp"

namespace psic {

template <typename T>
Var<T> Graph<T>::push(Node n) {
  nodes_.push_back(std::move(n));
  return Var<T>{this, nodes_.size() - 1};
}

template <typename T>
Var<T> Graph<T>::constant(Tensor<T> value) {
  Node n;
  n.op = "constant";
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "leaf";
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::parameter(const Tensor<T>& value, Tensor<T>* grad_sink) {
  Node n;
  n.op = "parameter";
  n.value = value;
  n.requires_grad = true;
  n.sink = grad_sink;
  return push(std::move(n));
}

template <typename T>
Var<T> Graph<T>::record(std::string op, const std::vector<Var<T>>& inputs, Tensor<T> value,
                        BackwardFn backward) {
  Node n;
  n.op = std::move(op);
  n.value = std::move(value);
  n.inputs.reserve(inputs.size());
  for (const auto& v : inputs) {
    if (v.graph != this) throw UsageError("op '" + n.op + "' mixes nodes from different graphs");
    n.inputs.push_back(v.id);
    n.requires_grad = n.requires_grad || nodes_[v.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  if (!n.value.all_finite()) {
    throw NumericError("non-finite value produced by op '" + n.op + "'");
  }
  return push(std::move(n));
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(std::size_t id) {
  auto& n = nodes_.at(id);
  if (n.grad.numel() != n.value.numel()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (loss.graph != this) throw UsageError("loss node belongs to a different graph");
  auto& ln = nodes_.at(loss.id);
  if (ln.value.numel() != 1) {
    throw UsageError("backward() needs a scalar loss, got shape " + shape_str(ln.value.shape()));
  }
  for (auto& n : nodes_) n.grad = Tensor<T>();
  visit_order_.clear();
  grad_buffer(loss.id)[0] = T{1};

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    auto& n = nodes_[i];
    if (!n.requires_grad || n.grad.empty()) continue;
    visit_order_.push_back(i);
    if (n.backward) n.backward(*this, i);
    if (n.sink) {
      auto& s = *n.sink;
      if (s.numel() != n.grad.numel()) s = Tensor<T>(n.value.shape());
      for (std::size_t j = 0; j < s.numel(); ++j) s[j] += n.grad[j];
    }
  }
}

template class Graph<float>;
template class Graph<double>;

}  // namespace psic
