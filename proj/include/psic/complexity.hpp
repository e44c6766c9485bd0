#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "psic/model.hpp"

namespace psic {

// Exact per-layer accounting. MAC conventions: dense in·out per row (bias
// adds are free); conv C_out·C_in·k²·H'·W'; depthwise conv E·k·T; layer norm
// 2 per element (normalize, affine); FiLM 1 per modulated element plus 2 per
// channel for the gated scale and shift; attention scores and weighted sum
// S²·d each. Nonlinearities (the GELU·sigmoid gate included), softmax,
// positional and residual adds are not counted.
struct LayerCount {
  std::string name;
  std::uint64_t params = 0;
  std::uint64_t macs = 0;
};

struct ComponentCount {
  std::string name;
  std::vector<LayerCount> layers;
  double time_ms = 0.0;  // median single-sample forward time, 0 when not measured

  std::uint64_t params() const;
  std::uint64_t macs() const;
};

LayerCount dense_count(const std::string& name, std::size_t in, std::size_t out, std::size_t rows,
                       bool bias = true);
std::vector<LayerCount> dwcg_block_count(std::size_t tokens, std::size_t channels, std::size_t kernel,
                                         std::size_t expansion);
std::vector<LayerCount> mha_block_count(std::size_t tokens, std::size_t dim);

std::vector<LayerCount> encoder_count(const EncoderConfig& cfg);
std::vector<LayerCount> decoder_count(const DecoderConfig& cfg);

struct ComplexityReport {
  ModelConfig config;
  ComponentCount encoder_baseline;  // no prompting
  ComponentCount encoder_soft;      // soft prompts only
  ComponentCount encoder_soft_film; // soft prompts + FiLM
  ComponentCount decoder_attention;
  ComponentCount decoder_dwcg;

  // (soft+FiLM − baseline) / baseline encoder parameters.
  double prompt_overhead() const;
  double decoder_param_ratio() const;
  double decoder_mac_ratio() const;
};

// Counts the five table components for `cfg` (variant flags are overridden
// per component). With timing_runs > 0 each component's single-sample forward
// pass is timed that many times in float and the median recorded.
ComplexityReport count_params_macs(const ModelConfig& cfg, std::size_t timing_runs = 0);

}  // namespace psic
