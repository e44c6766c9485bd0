#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "psic/psi_data.hpp"
#include "psic/training.hpp"

namespace psic {

enum class Precision { kF32, kF64 };

std::string_view to_string(Precision p);
Precision parse_precision(std::string_view s);

struct EvalConfig {
  std::size_t trials = 100;
  std::size_t test_samples = 256;
  std::vector<double> snr_list{5.0, 10.0, 15.0, 20.0, 300.0};
  std::vector<double> rate_list{0.1, 0.3, 0.5, 0.7, 0.9};
  double rate = 0.5;  // rate for sweeps that hold it fixed
};

struct ExperimentConfig {
  std::size_t seeds = 5;
  std::vector<std::size_t> n_list{16, 64, 144};
  bool train_if_missing = true;
  bool plots = true;
};

// Everything a CLI invocation needs. Map size and bit depth live in
// [model] and are copied into the dataset settings.
struct RunConfig {
  std::uint64_t seed = 0;
  Precision precision = Precision::kF32;
  DatasetConfig data;
  ModelConfig model;
  std::string variant = "soft_film";
  TrainConfig train;
  LinkConfig link;
  EvalConfig eval;
  ExperimentConfig experiment;

  // Pushes shared fields (seed, map size, bits, snr range) into the
  // sub-configs and applies the variant flags.
  void sync();
  void validate() const;
};

// Parses "key = value" lines grouped under [section] headers. Unknown
// sections or keys and malformed values are configuration errors.
RunConfig parse_config(std::string_view text, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

// Canonical text form; parse_config(to_config_text(c)) reproduces c.
std::string to_config_text(const RunConfig& c);
std::uint64_t config_hash(const RunConfig& c);

}  // namespace psic
