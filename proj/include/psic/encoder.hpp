#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "psic/params.hpp"
#include "psic/psi_data.hpp"

namespace psic {

// Conditioning triple for one sample.
struct SideInfo {
  double snr_db = 10.0;
  ChannelType chan_type = ChannelType::kRayleigh;
  double rate = 1.0;
};

struct SnrRange {
  double min_db = 5.0;
  double max_db = 20.0;
};

// [snr_norm, r, onehot_rayleigh, onehot_rician]. SNR outside the range is
// clamped with a warning; a rate outside (0, 1] is a domain error.
std::array<double, 4> encode_side_info(const SideInfo& s, const SnrRange& range);

template <typename T>
Tensor<T> context_batch(const std::vector<SideInfo>& side, const SnrRange& range);

struct EncoderConfig {
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t patch = 1;
  std::size_t stem_channels = 16;
  std::size_t dim = 32;
  std::size_t depth = 2;
  std::size_t heads = 4;
  std::size_t prompt_tokens = 4;
  std::size_t prompt_dim = 64;
  std::size_t latent = 16;
  bool film = true;
  bool soft_prompt = true;

  std::size_t tokens() const { return (height / patch) * (width / patch); }
  std::size_t head_dim() const { return dim / heads; }
  // Prompt tokens actually present in the sequence.
  std::size_t active_prompts() const { return soft_prompt ? prompt_tokens : 0; }
  bool uses_prompts() const { return film || soft_prompt; }
  void validate() const;
};

// Parameter names: backbone under "enc.", prompt machinery under "prompt.".
// Weights are fan-in uniform; FiLM projections, the FiLM gate weight and the
// soft-prompt projection start at zero so conditioning begins neutral.
template <typename T>
void init_encoder_params(ParamStore<T>& store, const EncoderConfig& cfg, std::uint64_t seed);

// Pre-norm transformer block parameters under `prefix` (shared by the
// attention decoder baseline).
template <typename T>
void init_mha_block_params(ParamStore<T>& store, const std::string& prefix, std::size_t dim,
                           std::uint64_t seed);

template <typename T>
struct PromptDescriptors {
  Var<T> p_f;
  Var<T> p_s;
};

template <typename T>
struct FilmInputs {
  std::vector<Var<T>> gamma;  // per modulated layer, [B×C_l]
  std::vector<Var<T>> beta;
  Var<T> gate;  // [B×1]
};

// ReLU MLP → p_f, GELU MLP → p_s; each is dense(4→d_p)+act, dense(d_p→d_p).
template <typename T>
PromptDescriptors<T> prompt_descriptors(Binder<T>& b, Var<T> ctx);

// g_f = sigmoid(p_f · w_f), plus per-layer gamma/beta projections of p_f.
template <typename T>
FilmInputs<T> film_inputs(Binder<T>& b, Var<T> p_f, std::optional<double> gate_override = {});

// S = Proj_s(p_s) reshaped to [B×P×d].
template <typename T>
Var<T> soft_prompt_tokens(Binder<T>& b, Var<T> p_s, std::size_t prompts, std::size_t dim);

// conv3×3 → FiLM₁ → GELU → conv(patch, stride patch) → FiLM₂ → GELU → tokens.
// x: [B×1×H×W] → [B×N×d]. Without film the FiLM steps are skipped.
template <typename T>
Var<T> embed_stem(Binder<T>& b, const EncoderConfig& cfg, Var<T> x, const FilmInputs<T>* film);

// Values observed while encoding; filled only when requested.
template <typename T>
struct EncoderTrace {
  std::vector<Shape> block_input_shapes;
  std::vector<Tensor<T>> block_queries;
  std::vector<Tensor<T>> block_keys;
  Tensor<T> gate;
};

// X + MHA(LN(X)), then X + FFN(LN(X)) with a 4d GELU FFN.
template <typename T>
Var<T> mha_block(Binder<T>& b, const std::string& prefix, Var<T> x, std::size_t heads,
                 EncoderTrace<T>* trace = nullptr);

template <typename T>
struct EncodeOptions {
  std::optional<double> gate_override;
  EncoderTrace<T>* trace = nullptr;
};

// x: [B×1×H×W], ctx: [B×4] → z: [B×D]. Returns the FiLM descriptor p_f via
// *p_f_out when asked (the joint-prompting decoder variant reuses it).
template <typename T>
Var<T> encode(Binder<T>& b, const EncoderConfig& cfg, Var<T> x, Var<T> ctx,
              const EncodeOptions<T>& opts = {}, Var<T>* p_f_out = nullptr);

}  // namespace psic
