#pragma once

#include <cstddef>
#include <map>
#include <string>
#include <vector>

#include "psic/graph.hpp"
#include "psic/rng.hpp"

namespace psic {

// Named parameter tensors with matching gradient accumulators. Iteration
// order is insertion order, which fixes checkpoint layout and optimizer
// traversal.
template <typename T>
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
  };

  Tensor<T>& add(const std::string& name, Tensor<T> init);
  // Symmetric uniform fan-in init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
  // drawn from a stream keyed by the parameter name so shared parameters get
  // identical values across model variants.
  Tensor<T>& add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                         std::uint64_t seed);
  Tensor<T>& add_zeros(const std::string& name, Shape shape) { return add(name, Tensor<T>(shape)); }
  Tensor<T>& add_constant(const std::string& name, Shape shape, T v) {
    return add(name, Tensor<T>(shape, v));
  }

  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  Entry& entry(const std::string& name);
  const Entry& entry(const std::string& name) const;
  Tensor<T>& value(const std::string& name) { return entry(name).value; }
  const Tensor<T>& value(const std::string& name) const { return entry(name).value; }

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }

  // Registers the parameter on g; its gradient lands in entry.grad.
  Var<T> bind(Graph<T>& g, const std::string& name);

  void zero_grad();
  std::size_t total_params() const;

  template <typename U>
  ParamStore<U> cast() const {
    ParamStore<U> out;
    for (const auto& e : entries_) out.add(e.name, e.value.template cast<U>());
    return out;
  }

 private:
  std::vector<Entry> entries_;
  std::map<std::string, std::size_t> index_;
};

// Per-graph view of a ParamStore: each parameter becomes one graph node on
// first use. With trainable=false parameters enter as constants and no
// gradient bookkeeping is recorded.
template <typename T>
class Binder {
 public:
  Binder(Graph<T>& g, ParamStore<T>& store, bool trainable = true)
      : graph_(g), store_(store), trainable_(trainable) {}

  Var<T> operator()(const std::string& name) {
    auto it = cache_.find(name);
    if (it != cache_.end()) return it->second;
    Var<T> v = trainable_ ? store_.bind(graph_, name) : graph_.constant(store_.value(name));
    cache_.emplace(name, v);
    return v;
  }

  bool has(const std::string& name) const { return store_.contains(name); }
  Graph<T>& graph() { return graph_; }
  ParamStore<T>& store() { return store_; }

 private:
  Graph<T>& graph_;
  ParamStore<T>& store_;
  bool trainable_;
  std::map<std::string, Var<T>> cache_;
};

}  // namespace psic
