#include "psic/params.hpp"

#include <cmath>

namespace psic {

template <typename T>
Tensor<T>& ParamStore<T>::add(const std::string& name, Tensor<T> init) {
  if (contains(name)) throw UsageError("duplicate parameter '" + name + "'");
  index_[name] = entries_.size();
  Tensor<T> grad(init.shape());
  entries_.push_back(Entry{name, std::move(init), std::move(grad)});
  return entries_.back().value;
}

template <typename T>
Tensor<T>& ParamStore<T>::add_uniform(const std::string& name, Shape shape, std::size_t fan_in,
                                      std::uint64_t seed) {
  RngStream rng(seed, "init/" + name);
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  Tensor<T> t(std::move(shape));
  for (auto& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return add(name, std::move(t));
}

template <typename T>
typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
const typename ParamStore<T>::Entry& ParamStore<T>::entry(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw ConfigError("unknown parameter '" + name + "'");
  return entries_[it->second];
}

template <typename T>
Var<T> ParamStore<T>::bind(Graph<T>& g, const std::string& name) {
  auto& e = entry(name);
  return g.parameter(e.value, &e.grad);
}

template <typename T>
void ParamStore<T>::zero_grad() {
  for (auto& e : entries_) e.grad.fill(T{0});
}

template <typename T>
std::size_t ParamStore<T>::total_params() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace psic
