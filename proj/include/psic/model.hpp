#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "psic/decoder.hpp"
#include "psic/encoder.hpp"
#include "psic/psi_data.hpp"
#include "psic/rate_link.hpp"

namespace psic {

struct ModelConfig {
  unsigned bits = 4;
  EncoderConfig encoder;
  DecoderConfig decoder;
  SnrRange snr;

  std::size_t height() const { return encoder.height; }
  std::size_t width() const { return encoder.width; }
  std::size_t elements() const { return encoder.height * encoder.width; }
  std::size_t latent() const { return encoder.latent; }
  // Copies shared fields (map size, latent, prompt width) into the decoder.
  void sync();
  void validate() const;
};

// Named model variants used by the experiments.
//   soft_film  encoder soft prompts + FiLM (the full method)
//   soft_only  encoder soft prompts, no FiLM
//   no_prompt  unconditioned encoder
//   joint      soft_film plus FiLM on the decoder stack
ModelConfig apply_variant(ModelConfig cfg, std::string_view variant);

template <typename T>
struct Codec {
  ModelConfig config;
  ParamStore<T> params;
};

template <typename T>
Codec<T> init_codec(ModelConfig cfg, std::uint64_t seed);

// One mini-batch worth of inputs with all randomness already drawn.
template <typename T>
struct Batch {
  Tensor<T> input;   // [B×1×H×W] normalized phases
  Tensor<T> target;  // [B×H×W]
  std::vector<SideInfo> side;
  std::vector<RateMask> masks;
  std::vector<LinkDraw> links;

  std::size_t size() const { return side.size(); }
};

// Assembles a batch; link draws come from rng in sample order, using each
// sample's SNR and active count with the shape of `link`.
template <typename T>
Batch<T> make_batch(const std::vector<const PsiMap*>& maps, const std::vector<SideInfo>& side,
                    const ModelConfig& cfg, const LinkConfig& link, RngStream& rng);

template <typename T>
struct Forward {
  Var<T> z;
  Var<T> z_r;
  Var<T> z_tilde;
  Var<T> prediction;  // [B×H×W]
};

// Encoder → prefix mask → control link → decoder on one graph.
template <typename T>
Forward<T> forward(Binder<T>& b, const ModelConfig& cfg, const Batch<T>& batch,
                   const EncodeOptions<T>& opts = {});

// NMSE training objective of a batch through the full pipeline.
template <typename T>
Var<T> batch_loss(Binder<T>& b, const ModelConfig& cfg, const Batch<T>& batch);

// Per-sample NMSE ‖t − t̂‖²/‖t‖² of a prediction; NaN for zero-norm targets.
template <typename T>
std::vector<double> per_sample_nmse(const Tensor<T>& prediction, const Tensor<T>& target);

}  // namespace psic
