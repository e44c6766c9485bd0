#include "psic/decoder.hpp"

#include "psic/encoder.hpp"
#include "psic/errors.hpp"
#include "psic/ops.hpp"

namespace psic {

std::string_view to_string(DecoderKind k) { return k == DecoderKind::kDwcg ? "dwcg" : "attention"; }

DecoderKind parse_decoder_kind(std::string_view s) {
  if (s == "dwcg") return DecoderKind::kDwcg;
  if (s == "attention") return DecoderKind::kAttention;
  throw ConfigError("unknown decoder kind '" + std::string(s) + "'");
}

void DecoderConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("decoder: map dimensions must be positive");
  if (latent < 1 || channels < 1) throw ConfigError("decoder: latent and channel width must be positive");
  if (kernel % 2 == 0) throw ConfigError("decoder: depthwise kernel size must be odd");
  if (expansion < 1) throw ConfigError("decoder: expansion factor must be at least 1");
  if (kind == DecoderKind::kAttention && (heads == 0 || channels % heads != 0)) {
    throw ConfigError("decoder: width " + std::to_string(channels) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (film && prompt_dim < 1) throw ConfigError("decoder: prompt_dim must be positive");
}

template <typename T>
void init_decoder_params(ParamStore<T>& s, const DecoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t E = cfg.channels, hE = cfg.expansion * E, Tn = cfg.tokens();
  s.add_uniform("dec.expand.w", {cfg.latent, Tn * E}, cfg.latent, seed);
  s.add_zeros("dec.expand.b", {Tn * E});
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string p = "dec.block" + std::to_string(i) + ".";
    if (cfg.kind == DecoderKind::kAttention) {
      init_mha_block_params(s, p, E, seed);
      continue;
    }
    s.add_constant(p + "ln.g", {E}, T{1});
    s.add_zeros(p + "ln.b", {E});
    s.add_uniform(p + "dw.w", {E, cfg.kernel}, cfg.kernel, seed);
    s.add_zeros(p + "dw.b", {E});
    s.add_uniform(p + "pw1.w", {E, 2 * hE}, E, seed);
    s.add_zeros(p + "pw1.b", {2 * hE});
    s.add_uniform(p + "pw2.w", {hE, E}, hE, seed);
    s.add_zeros(p + "pw2.b", {E});
  }
  s.add_uniform("dec.head.w", {E, 1}, E, seed);
  s.add_zeros("dec.head.b", {1});
  if (cfg.film) {
    s.add_zeros("prompt.dec.gate.w", {cfg.prompt_dim, 1});
    for (const char* kind : {"gamma", "beta"}) {
      s.add_zeros(std::string("prompt.dec.") + kind + ".w", {cfg.prompt_dim, E});
      s.add_zeros(std::string("prompt.dec.") + kind + ".b", {E});
    }
  }
}

template <typename T>
Var<T> dwcg_block(Binder<T>& b, const std::string& p, Var<T> x) {
  auto h = layer_norm(x, b(p + "ln.g"), b(p + "ln.b"));
  h = depthwise_conv1d(h, b(p + "dw.w"), b(p + "dw.b"));
  h = dense(h, b(p + "pw1.w"), b(p + "pw1.b"));
  h = gated_activation(h);
  return add(x, dense(h, b(p + "pw2.w"), b(p + "pw2.b")));
}

template <typename T>
Var<T> decode(Binder<T>& b, const DecoderConfig& cfg, Var<T> z, const Var<T>* p_f) {
  cfg.validate();
  const auto& zs = z.shape();
  if (zs.size() != 2 || zs[1] != cfg.latent) {
    throw ConfigError("decoder expects [B×" + std::to_string(cfg.latent) + "] latents, got " +
                      shape_str(zs));
  }
  if (b.store().value("dec.expand.w").dim(1) != cfg.tokens() * cfg.channels) {
    throw ConfigError("decoder parameters do not match the configured map size");
  }
  const std::size_t B = zs[0], Tn = cfg.tokens(), E = cfg.channels;
  auto x = reshape(dense(z, b("dec.expand.w"), b("dec.expand.b")), {B, Tn, E});
  if (cfg.film) {
    if (!p_f) throw UsageError("joint-prompting decoder needs the FiLM descriptor");
    auto gate = activation(dense(*p_f, b("prompt.dec.gate.w")), ActivationKind::kSigmoid);
    auto gamma = dense(*p_f, b("prompt.dec.gamma.w"), b("prompt.dec.gamma.b"));
    auto beta = dense(*p_f, b("prompt.dec.beta.w"), b("prompt.dec.beta.b"));
    x = film_tokens(x, gamma, beta, gate);
  }
  for (std::size_t i = 0; i < cfg.blocks; ++i) {
    const std::string p = "dec.block" + std::to_string(i) + ".";
    x = cfg.kind == DecoderKind::kDwcg ? dwcg_block(b, p, x) : mha_block(b, p, x, cfg.heads);
  }
  auto y = dense(x, b("dec.head.w"), b("dec.head.b"));
  return reshape(y, {B, cfg.height, cfg.width});
}

#define PSIC_INSTANTIATE_DECODER(T)                                                        \
  template void init_decoder_params(ParamStore<T>&, const DecoderConfig&, std::uint64_t);  \
  template Var<T> dwcg_block(Binder<T>&, const std::string&, Var<T>);                      \
  template Var<T> decode(Binder<T>&, const DecoderConfig&, Var<T>, const Var<T>*);

PSIC_INSTANTIATE_DECODER(float)
PSIC_INSTANTIATE_DECODER(double)

}  // namespace psic
