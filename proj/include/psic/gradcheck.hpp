#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psic/params.hpp"
#include "psic/tensor.hpp"

namespace psic {

// Central differences (f(θ + h e_i) − f(θ − h e_i)) / 2h for every
// coordinate of θ. f must be deterministic.
Tensor<double> finite_difference_gradient(const std::function<double(const Tensor<double>&)>& f,
                                          const Tensor<double>& theta, double h = 1e-5);

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  bool passed = false;
};

// Compares an analytic gradient against a numeric one. The relative error
// of each entry is |a − n| / max(|a|, |n|); entries that differ by no more
// than abs_floor are treated as agreeing.
GradCheckResult compare_gradients(const Tensor<double>& analytic, const Tensor<double>& numeric,
                                  double rel_tol = 1e-4, double abs_floor = 1e-7);

struct ParamGradReport {
  std::string name;
  std::size_t checked = 0;  // coordinates compared
  GradCheckResult result;
};

// Backward vs central differences for the parameters of a store. The loss
// is rebuilt from scratch for every probe, so it must be deterministic in
// the parameter values. Up to coords_per_tensor coordinates are checked per
// tensor (all of them when 0 or when the tensor is smaller).
std::vector<ParamGradReport> check_param_gradients(
    ParamStore<double>& store, const std::function<Var<double>(Binder<double>&)>& loss,
    std::size_t coords_per_tensor, std::uint64_t seed, double h = 1e-5, double rel_tol = 1e-4,
    double abs_floor = 1e-7);

}  // namespace psic
