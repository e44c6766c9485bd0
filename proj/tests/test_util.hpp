#pragma once

#include <functional>
#include <string>
#include <vector>

#include "psic/gradcheck_suite.hpp"
#include "psic/ops.hpp"
#include "psic/rng.hpp"

namespace psic::testing {

inline Tensor<double> random_tensor(Shape shape, RngStream& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

using psic::check_op_gradient;
using psic::OpBuilder;

}  // namespace psic::testing
