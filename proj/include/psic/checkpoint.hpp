#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "psic/rng.hpp"
#include "psic/tensor.hpp"

namespace psic {

struct NamedTensor {
  std::string name;
  Tensor<float> value;
};

// On-disk training state. Layout: "PSCK", u32 version, length-prefixed config
// text, u32 count + parameter tensors, u32 count + optimizer tensors (each
// tensor: length-prefixed name, u32 rank, u32 dims, float32 payload), RNG
// state blob, u64 optimizer step, u64 epoch, f64 best validation NMSE, then a
// CRC32 of every preceding byte.
struct CheckpointData {
  std::string config_text;
  std::vector<NamedTensor> params;
  std::vector<NamedTensor> optimizer;
  RngStream::State rng;
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double best_val = 0.0;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& c);
CheckpointData decode_checkpoint(std::span<const std::uint8_t> bytes);

void write_checkpoint(const std::filesystem::path& path, const CheckpointData& c);
CheckpointData read_checkpoint(const std::filesystem::path& path);

}  // namespace psic
