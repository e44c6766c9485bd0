#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "psic/checkpoint.hpp"
#include "psic/model.hpp"

namespace psic {

enum class RateMode { kFixed, kUniform };
// kStep: one epoch is one mini-batch update. kPass: one epoch visits every
// training sample once.
enum class EpochMode { kStep, kPass };

std::string_view to_string(RateMode m);
RateMode parse_rate_mode(std::string_view s);
std::string_view to_string(EpochMode m);
EpochMode parse_epoch_mode(std::string_view s);

struct TrainConfig {
  std::size_t epochs = 2000;
  EpochMode epoch_mode = EpochMode::kStep;
  std::size_t batch_size = 64;
  double lr = 1e-4;
  double lr_floor = 0.0;
  std::vector<double> rates{0.1, 0.3, 0.5, 0.7, 0.9};
  RateMode rate_mode = RateMode::kFixed;
  double fixed_rate = 0.5;
  double snr_min_db = 5.0;
  double snr_max_db = 20.0;
  double rician_fraction = 0.5;  // share of Rician contexts
  double val_fraction = 0.1;
  std::size_t val_every = 100;  // epochs between validation passes; the last epoch always validates
  bool noiseless = false;       // zero the link noise (the context SNR is still sampled)
  std::uint64_t seed = 0;

  void validate() const;
};

// Scalar dB of the linear mean. Empty input is a usage error, negative
// values a domain error.
double nmse_db(const std::vector<double>& linear);

// floor + ½(lr₀ − floor)(1 + cos(π·epoch/E_max)).
double cosine_lr(double epoch, const TrainConfig& cfg);

template <typename T>
struct AdamState {
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
  std::uint64_t step = 0;
};

template <typename T>
AdamState<T> make_adam_state(const ParamStore<T>& params);

// Bias-corrected Adam update from the gradients held in params. The moment
// arithmetic runs in double and is stored back in T.
template <typename T>
void adam_step(ParamStore<T>& params, AdamState<T>& state, double lr);

// SNR uniform over the range, channel type by the Rician fraction, rate
// fixed or uniform over cfg.rates.
SideInfo sample_context(const TrainConfig& cfg, RngStream& rng);

// Index split fixed by seed: the first val_fraction of a seeded permutation
// (rounded down) validates, the rest trains.
struct DataSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> val;
};
DataSplit split_dataset(std::size_t n, double val_fraction, std::uint64_t seed);

struct TrainLogRow {
  std::size_t epoch = 0;
  std::uint64_t step = 0;
  double lr = 0.0;
  double train_nmse = 0.0;  // mean linear batch loss over the epoch
  double val_nmse = std::numeric_limits<double>::quiet_NaN();
};

template <typename T>
struct TrainState {
  Codec<T> codec;
  AdamState<T> opt;
  RngStream::State rng;
  std::size_t epoch = 0;  // epochs completed
  double best_val = std::numeric_limits<double>::infinity();
};

template <typename T>
TrainState<T> initial_state(const ModelConfig& model, const TrainConfig& cfg);

template <typename T>
struct TrainResult {
  TrainState<T> state;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  std::string divergence;
};

struct TrainHooks {
  std::function<void(const TrainLogRow&)> on_epoch;
  // Stop once this many epochs are complete (0: run to cfg.epochs). The lr
  // schedule still spans cfg.epochs, so a later resume continues it exactly.
  std::size_t stop_epoch = 0;
};

// Runs epochs state.epoch .. cfg.epochs. A non-finite loss or gradient stops
// training and returns the last finite state with diverged set.
template <typename T>
TrainResult<T> train(const std::vector<Sample>& dataset, const TrainConfig& cfg, const LinkConfig& link,
                     TrainState<T> state, const TrainHooks& hooks = {});

template <typename T>
TrainResult<T> train(const std::vector<Sample>& dataset, const ModelConfig& model, const TrainConfig& cfg,
                     const LinkConfig& link, const TrainHooks& hooks = {});

// Mean linear NMSE over the validation indices with contexts and link draws
// fixed by (seed, "val/<i>").
template <typename T>
double validation_nmse(Codec<T>& codec, const std::vector<Sample>& dataset,
                       const std::vector<std::size_t>& indices, const TrainConfig& cfg, const LinkConfig& link);

// Single-map inference: prompts, encode, mask, transmit, decode. Returns the
// [H×W] estimate in the normalized domain.
template <typename T>
Tensor<T> infer(const PsiMap& map, const SideInfo& side, Codec<T>& codec, const LinkConfig& link,
                RngStream& rng);

// Monte Carlo evaluation at one operating point. Trial t uses map
// t mod maps.size() and a link draw from (seed, "<label>/trial/<t>"), so the
// result does not depend on batching or thread count.
template <typename T>
std::vector<double> evaluate_trials(Codec<T>& codec, const std::vector<const PsiMap*>& maps,
                                    const SideInfo& side, const LinkConfig& link, std::size_t trials,
                                    std::uint64_t seed, std::string_view label, bool noiseless = false);

template <typename T>
CheckpointData to_checkpoint(const TrainState<T>& state, const std::string& config_text);

// Rebuilds a state for `model` from checkpoint tensors. Missing, extra or
// misshapen tensors are configuration errors.
template <typename T>
TrainState<T> from_checkpoint(const CheckpointData& data, const ModelConfig& model);

}  // namespace psic
