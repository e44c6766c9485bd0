#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "psic/gradcheck.hpp"
#include "psic/model.hpp"

namespace psic {

using OpBuilder = std::function<Var<double>(Graph<double>&, const std::vector<Var<double>>&)>;

// Runs op on leaf inputs, reduces the output with a fixed random projection
// and compares backward against central differences for every input entry.
GradCheckResult check_op_gradient(const OpBuilder& op, const std::vector<Tensor<double>>& inputs,
                                  std::uint64_t seed = 7, double h = 1e-5);

struct GradCheckEntry {
  std::string name;
  std::size_t checked = 0;  // coordinates compared
  GradCheckResult result;
  std::string worst;  // parameter holding the largest error, pipeline checks only
};

// Every core op on random inputs.
std::vector<GradCheckEntry> op_gradchecks(std::uint64_t seed);

// encoder → mask → link → decoder at `model` for the joint variant with each
// decoder kind. Parameters are jittered off their zero inits first so the
// prompt and FiLM paths carry gradient; links are noisy with fixed draws.
std::vector<GradCheckEntry> pipeline_gradchecks(const ModelConfig& model, std::uint64_t seed,
                                                std::size_t coords_per_tensor);

}  // namespace psic
