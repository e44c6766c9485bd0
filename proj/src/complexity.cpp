#include "psic/complexity.hpp"

#include <algorithm>
#include <chrono>

#include "psic/errors.hpp"

namespace psic {

std::uint64_t ComponentCount::params() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.params;
  return n;
}

std::uint64_t ComponentCount::macs() const {
  std::uint64_t n = 0;
  for (const auto& l : layers) n += l.macs;
  return n;
}

LayerCount dense_count(const std::string& name, std::size_t in, std::size_t out, std::size_t rows, bool bias) {
  return {name, std::uint64_t(in) * out + (bias ? out : 0), std::uint64_t(rows) * in * out};
}

std::vector<LayerCount> dwcg_block_count(std::size_t T, std::size_t E, std::size_t k, std::size_t eta) {
  const std::uint64_t hE = eta * E;
  return {
      {"ln", 2 * E, 2ull * T * E},
      {"dwconv", std::uint64_t(E) * k + E, std::uint64_t(E) * k * T},
      dense_count("expand", E, 2 * hE, T),
      dense_count("contract", hE, E, T),
  };
}

std::vector<LayerCount> mha_block_count(std::size_t S, std::size_t d) {
  const std::uint64_t s = S, dd = d;
  return {
      {"ln1", 2 * dd, 2 * s * dd},
      dense_count("qkv", d, 3 * d, S),
      {"scores", 0, s * s * dd},
      {"weighted_sum", 0, s * s * dd},
      dense_count("out_proj", d, d, S),
      {"ln2", 2 * dd, 2 * s * dd},
      dense_count("ffn1", d, 4 * d, S),
      dense_count("ffn2", 4 * d, d, S),
  };
}

namespace {

void append(std::vector<LayerCount>& out, const std::string& prefix, const std::vector<LayerCount>& ls) {
  for (auto l : ls) {
    l.name = prefix + l.name;
    out.push_back(std::move(l));
  }
}

LayerCount film_apply(const std::string& name, std::size_t channels, std::size_t positions) {
  return {name, 0, std::uint64_t(channels) * positions + 2ull * channels};
}

}  // namespace

std::vector<LayerCount> encoder_count(const EncoderConfig& cfg) {
  cfg.validate();
  const std::size_t H = cfg.height, W = cfg.width, N = cfg.tokens(), d = cfg.dim, C1 = cfg.stem_channels,
                    dp = cfg.prompt_dim, p = cfg.patch;
  std::vector<LayerCount> out;
  if (cfg.film) {
    out.push_back(dense_count("prompt_f.l1", 4, dp, 1));
    out.push_back(dense_count("prompt_f.l2", dp, dp, 1));
    out.push_back(dense_count("film.gate", dp, 1, 1, false));
    out.push_back(dense_count("film1.gamma", dp, C1, 1));
    out.push_back(dense_count("film1.beta", dp, C1, 1));
    out.push_back(dense_count("film2.gamma", dp, d, 1));
    out.push_back(dense_count("film2.beta", dp, d, 1));
  }
  if (cfg.soft_prompt) {
    out.push_back(dense_count("prompt_s.l1", 4, dp, 1));
    out.push_back(dense_count("prompt_s.l2", dp, dp, 1));
    out.push_back(dense_count("soft_proj", dp, cfg.prompt_tokens * d, 1));
  }
  out.push_back({"stem1", std::uint64_t(C1) * 9 + C1, std::uint64_t(C1) * 9 * H * W});
  if (cfg.film) out.push_back(film_apply("film1.apply", C1, H * W));
  out.push_back({"stem2", std::uint64_t(d) * C1 * p * p + d, std::uint64_t(d) * C1 * p * p * N});
  if (cfg.film) out.push_back(film_apply("film2.apply", d, N));
  out.push_back({"pos", std::uint64_t(N) * d, 0});
  const std::size_t S = N + cfg.active_prompts();
  for (std::size_t l = 0; l < cfg.depth; ++l) append(out, "block" + std::to_string(l) + ".", mha_block_count(S, d));
  out.push_back(dense_count("head", N * d, cfg.latent, 1));
  return out;
}

std::vector<LayerCount> decoder_count(const DecoderConfig& cfg) {
  cfg.validate();
  const std::size_t T = cfg.tokens(), E = cfg.channels;
  std::vector<LayerCount> out;
  out.push_back(dense_count("expand", cfg.latent, T * E, 1));
  if (cfg.film) {
    out.push_back(dense_count("film.gate", cfg.prompt_dim, 1, 1, false));
    out.push_back(dense_count("film.gamma", cfg.prompt_dim, E, 1));
    out.push_back(dense_count("film.beta", cfg.prompt_dim, E, 1));
    out.push_back(film_apply("film.apply", E, T));
  }
  for (std::size_t b = 0; b < cfg.blocks; ++b) {
    append(out, "block" + std::to_string(b) + ".",
           cfg.kind == DecoderKind::kDwcg ? dwcg_block_count(T, E, cfg.kernel, cfg.expansion)
                                          : mha_block_count(T, E));
  }
  out.push_back(dense_count("head", E, 1, T));
  return out;
}

double ComplexityReport::prompt_overhead() const {
  return double(encoder_soft_film.params()) / double(encoder_baseline.params()) - 1.0;
}

double ComplexityReport::decoder_param_ratio() const {
  return double(decoder_dwcg.params()) / double(decoder_attention.params());
}

double ComplexityReport::decoder_mac_ratio() const {
  return double(decoder_dwcg.macs()) / double(decoder_attention.macs());
}

namespace {

template <typename Fn>
double median_ms(std::size_t runs, Fn&& fn) {
  std::vector<double> ms;
  fn();  // warm-up
  for (std::size_t i = 0; i < runs; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::nth_element(ms.begin(), ms.begin() + ms.size() / 2, ms.end());
  return ms[ms.size() / 2];
}

double time_encoder(const EncoderConfig& cfg, std::size_t runs) {
  ParamStore<float> store;
  init_encoder_params(store, cfg, 1);
  const Tensor<float> x({1, 1, cfg.height, cfg.width}, 0.25f);
  const auto ctx = context_batch<float>({SideInfo{12.0, ChannelType::kRician, 0.5}}, SnrRange{});
  return median_ms(runs, [&] {
    Graph<float> g;
    Binder<float> b(g, store, false);
    encode(b, cfg, g.constant(x), g.constant(ctx));
  });
}

double time_decoder(const DecoderConfig& cfg, std::size_t runs) {
  ParamStore<float> store;
  init_decoder_params(store, cfg, 1);
  const Tensor<float> z({1, cfg.latent}, 0.25f);
  const Tensor<float> pf({1, cfg.prompt_dim}, 0.1f);
  return median_ms(runs, [&] {
    Graph<float> g;
    Binder<float> b(g, store, false);
    auto p = g.constant(pf);
    decode(b, cfg, g.constant(z), cfg.film ? &p : nullptr);
  });
}

}  // namespace

ComplexityReport count_params_macs(const ModelConfig& base, std::size_t timing_runs) {
  ComplexityReport r;
  r.config = base;
  r.config.sync();
  r.config.validate();
  auto enc = [&](const std::string& name, std::string_view variant) {
    const auto cfg = apply_variant(r.config, variant).encoder;
    ComponentCount c{name, encoder_count(cfg)};
    if (timing_runs) c.time_ms = time_encoder(cfg, timing_runs);
    return c;
  };
  auto dec = [&](const std::string& name, DecoderKind kind) {
    auto cfg = r.config.decoder;
    cfg.kind = kind;
    cfg.film = false;
    ComponentCount c{name, decoder_count(cfg)};
    if (timing_runs) c.time_ms = time_decoder(cfg, timing_runs);
    return c;
  };
  r.encoder_baseline = enc("encoder_baseline", "no_prompt");
  r.encoder_soft = enc("encoder_soft", "soft_only");
  r.encoder_soft_film = enc("encoder_soft_film", "soft_film");
  r.decoder_attention = dec("decoder_attention", DecoderKind::kAttention);
  r.decoder_dwcg = dec("decoder_dwcg", DecoderKind::kDwcg);
  return r;
}

}  // namespace psic
