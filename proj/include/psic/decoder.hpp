#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "psic/params.hpp"

namespace psic {

enum class DecoderKind { kDwcg, kAttention };

std::string_view to_string(DecoderKind k);
DecoderKind parse_decoder_kind(std::string_view s);

struct DecoderConfig {
  DecoderKind kind = DecoderKind::kDwcg;
  std::size_t height = 4;
  std::size_t width = 4;
  std::size_t latent = 16;
  std::size_t channels = 32;  // E
  std::size_t kernel = 7;     // k_dw
  std::size_t expansion = 2;  // η
  std::size_t blocks = 4;     // N_b
  std::size_t heads = 4;      // attention baseline only
  // Joint prompting ablation: FiLM on the expanded token sequence driven by
  // the encoder's FiLM descriptor. Off in the prompt-free decoder.
  bool film = false;
  std::size_t prompt_dim = 64;

  std::size_t tokens() const { return height * width; }
  void validate() const;
};

// Names under "dec."; joint-prompting projections under "prompt.dec.".
template <typename T>
void init_decoder_params(ParamStore<T>& store, const DecoderConfig& cfg, std::uint64_t seed);

// X + Contract(GELU(V) ⊙ σ(G)), [V, G] = Expand(DWConv(LN(X))). x: [B×T×E].
template <typename T>
Var<T> dwcg_block(Binder<T>& b, const std::string& prefix, Var<T> x);

// z̃: [B×D] → [B×H×W] in the normalized phase domain. p_f is consulted only
// when cfg.film is set.
template <typename T>
Var<T> decode(Binder<T>& b, const DecoderConfig& cfg, Var<T> z_tilde, const Var<T>* p_f = nullptr);

}  // namespace psic
