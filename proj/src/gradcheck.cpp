#include "psic/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "psic/rng.hpp"

namespace psic {

Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>& f,
                                          const Tensor<double>& theta, double h) {
  if (!(h > 0.0)) throw DomainError("finite-difference step must be positive");
  Tensor<double> grad(theta.shape());
  Tensor<double> probe = theta;
  for (std::size_t i = 0; i < theta.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

GradCheckResult compare_gradients(const Tensor<double>& analytic, const Tensor<double>& numeric,
                                  double rel_tol, double abs_floor) {
  if (analytic.numel() != numeric.numel()) {
    throw DimensionError("gradient sizes differ: " + shape_str(analytic.shape()) + " vs " +
                         shape_str(numeric.shape()));
  }
  GradCheckResult r;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double abs_err = std::abs(a - n);
    // Entries whose disagreement is below the absolute floor count as exact.
    const double rel =
        abs_err <= abs_floor ? 0.0 : abs_err / std::max(std::abs(a), std::abs(n));
    r.max_abs_error = std::max(r.max_abs_error, abs_err);
    if (rel > r.max_rel_error) {
      r.max_rel_error = rel;
      r.worst_index = i;
    }
  }
  r.passed = r.max_rel_error < rel_tol;
  return r;
}

std::vector<ParamGradReport> check_param_gradients(
    ParamStore<double>& store, const std::function<Var<double>(Binder<double>&)>& loss,
    std::size_t coords_per_tensor, std::uint64_t seed, double h, double rel_tol,
    double abs_floor) {
  auto eval = [&]() {
    Graph<double> g;
    Binder<double> b(g, store, false);
    return loss(b).value().item();
  };
  store.zero_grad();
  {
    Graph<double> g;
    Binder<double> b(g, store, true);
    g.backward(loss(b));
  }
  std::vector<ParamGradReport> out;
  RngStream rng(seed, "gradcheck/coords");
  for (auto& e : store.entries()) {
    const std::size_t n = e.value.numel();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (coords_per_tensor > 0 && n > coords_per_tensor) {
      // Partial Fisher-Yates for a reproducible subset.
      for (std::size_t i = 0; i < coords_per_tensor; ++i) {
        std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
      }
      idx.resize(coords_per_tensor);
    }
    Tensor<double> analytic({idx.size()}), numeric({idx.size()});
    for (std::size_t j = 0; j < idx.size(); ++j) {
      const std::size_t i = idx[j];
      analytic[j] = e.grad[i];
      const double orig = e.value[i];
      e.value[i] = orig + h;
      const double up = eval();
      e.value[i] = orig - h;
      const double down = eval();
      e.value[i] = orig;
      numeric[j] = (up - down) / (2.0 * h);
    }
    out.push_back({e.name, idx.size(), compare_gradients(analytic, numeric, rel_tol, abs_floor)});
  }
  return out;
}

}  // namespace psic
