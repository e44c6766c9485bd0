#include "psic/encoder.hpp"

#include <algorithm>
#include <cmath>

#include "psic/errors.hpp"
#include "psic/log.hpp"
#include "psic/ops.hpp"

namespace psic {

std::array<double, 4> encode_side_info(const SideInfo& s, const SnrRange& range) {
  if (!(s.rate > 0.0 && s.rate <= 1.0)) {
    throw DomainError("side info rate must lie in (0, 1], got " + std::to_string(s.rate));
  }
  if (!(range.max_db > range.min_db)) throw ConfigError("SNR range must have max > min");
  double snr = s.snr_db;
  if (snr < range.min_db || snr > range.max_db) {
    warn("SNR " + std::to_string(snr) + " dB outside conditioning range [" +
         std::to_string(range.min_db) + ", " + std::to_string(range.max_db) + "], clamped");
    snr = std::clamp(snr, range.min_db, range.max_db);
  }
  const double norm = (snr - range.min_db) / (range.max_db - range.min_db);
  const bool rayleigh = s.chan_type == ChannelType::kRayleigh;
  return {norm, s.rate, rayleigh ? 1.0 : 0.0, rayleigh ? 0.0 : 1.0};
}

template <typename T>
Tensor<T> context_batch(const std::vector<SideInfo>& side, const SnrRange& range) {
  Tensor<T> ctx({side.size(), 4});
  for (std::size_t n = 0; n < side.size(); ++n) {
    const auto c = encode_side_info(side[n], range);
    for (std::size_t i = 0; i < 4; ++i) ctx[n * 4 + i] = static_cast<T>(c[i]);
  }
  return ctx;
}

void EncoderConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("encoder: map dimensions must be positive");
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("encoder: " + std::to_string(height) + "x" + std::to_string(width) +
                      " map is not divisible by patch size " + std::to_string(patch));
  }
  if (dim == 0 || heads == 0 || dim % heads != 0) {
    throw ConfigError("encoder: width " + std::to_string(dim) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (depth < 1) throw ConfigError("encoder: depth must be at least 1");
  if (latent < 1) throw ConfigError("encoder: latent dimension must be at least 1");
  if (stem_channels < 1) throw ConfigError("encoder: stem channels must be positive");
  if (soft_prompt && (prompt_tokens < 1 || prompt_tokens > 8)) {
    throw ConfigError("encoder: prompt token count must be in 1..8");
  }
  if (uses_prompts() && prompt_dim < 1) throw ConfigError("encoder: prompt_dim must be positive");
}

template <typename T>
void init_mha_block_params(ParamStore<T>& s, const std::string& p, std::size_t d,
                           std::uint64_t seed) {
  s.add_constant(p + "ln1.g", {d}, T{1});
  s.add_zeros(p + "ln1.b", {d});
  for (const char* w : {"q", "k", "v", "o"}) {
    s.add_uniform(p + "w" + w, {d, d}, d, seed);
    s.add_zeros(p + "b" + w, {d});
  }
  s.add_constant(p + "ln2.g", {d}, T{1});
  s.add_zeros(p + "ln2.b", {d});
  s.add_uniform(p + "ff1.w", {d, 4 * d}, d, seed);
  s.add_zeros(p + "ff1.b", {4 * d});
  s.add_uniform(p + "ff2.w", {4 * d, d}, 4 * d, seed);
  s.add_zeros(p + "ff2.b", {d});
}

namespace {

template <typename T>
void init_mlp(ParamStore<T>& s, const std::string& p, std::size_t in, std::size_t width,
              std::uint64_t seed) {
  s.add_uniform(p + "l1.w", {in, width}, in, seed);
  s.add_zeros(p + "l1.b", {width});
  s.add_uniform(p + "l2.w", {width, width}, width, seed);
  s.add_zeros(p + "l2.b", {width});
}

template <typename T>
Var<T> mlp(Binder<T>& b, const std::string& p, Var<T> x, ActivationKind act) {
  auto h = activation(dense(x, b(p + "l1.w"), b(p + "l1.b")), act);
  return dense(h, b(p + "l2.w"), b(p + "l2.b"));
}

}  // namespace

template <typename T>
void init_encoder_params(ParamStore<T>& s, const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t c1 = cfg.stem_channels, d = cfg.dim, p = cfg.patch, dp = cfg.prompt_dim;
  s.add_uniform("enc.stem1.w", {c1, 1, 3, 3}, 9, seed);
  s.add_zeros("enc.stem1.b", {c1});
  s.add_uniform("enc.stem2.w", {d, c1, p, p}, c1 * p * p, seed);
  s.add_zeros("enc.stem2.b", {d});
  s.add_uniform("enc.pos", {cfg.tokens(), d}, d, seed);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    init_mha_block_params(s, "enc.block" + std::to_string(l) + ".", d, seed);
  }
  s.add_uniform("enc.head.w", {cfg.tokens() * d, cfg.latent}, cfg.tokens() * d, seed);
  s.add_zeros("enc.head.b", {cfg.latent});

  if (cfg.film) {
    init_mlp(s, "prompt.f.", 4, dp, seed);
    s.add_zeros("prompt.film.gate.w", {dp, 1});
    const std::size_t widths[2] = {c1, d};
    for (int l = 0; l < 2; ++l) {
      for (const char* kind : {"gamma", "beta"}) {
        const std::string n = std::string("prompt.film.") + kind + std::to_string(l + 1);
        s.add_zeros(n + ".w", {dp, widths[l]});
        s.add_zeros(n + ".b", {widths[l]});
      }
    }
  }
  if (cfg.soft_prompt) {
    init_mlp(s, "prompt.s.", 4, dp, seed);
    s.add_zeros("prompt.soft.w", {dp, cfg.prompt_tokens * d});
    s.add_zeros("prompt.soft.b", {cfg.prompt_tokens * d});
  }
}

template <typename T>
PromptDescriptors<T> prompt_descriptors(Binder<T>& b, Var<T> ctx) {
  PromptDescriptors<T> out{};
  if (b.has("prompt.f.l1.w")) out.p_f = mlp(b, "prompt.f.", ctx, ActivationKind::kRelu);
  if (b.has("prompt.s.l1.w")) out.p_s = mlp(b, "prompt.s.", ctx, ActivationKind::kGelu);
  return out;
}

template <typename T>
FilmInputs<T> film_inputs(Binder<T>& b, Var<T> p_f, std::optional<double> gate_override) {
  FilmInputs<T> f;
  const std::size_t B = p_f.shape().at(0);
  if (gate_override) {
    f.gate = b.graph().constant(Tensor<T>({B, 1}, static_cast<T>(*gate_override)));
  } else {
    f.gate = activation(dense(p_f, b("prompt.film.gate.w")), ActivationKind::kSigmoid);
  }
  for (int l = 1; l <= 2; ++l) {
    const std::string g = "prompt.film.gamma" + std::to_string(l);
    const std::string be = "prompt.film.beta" + std::to_string(l);
    f.gamma.push_back(dense(p_f, b(g + ".w"), b(g + ".b")));
    f.beta.push_back(dense(p_f, b(be + ".w"), b(be + ".b")));
  }
  return f;
}

template <typename T>
Var<T> soft_prompt_tokens(Binder<T>& b, Var<T> p_s, std::size_t prompts, std::size_t dim) {
  const std::size_t B = p_s.shape().at(0);
  auto s = dense(p_s, b("prompt.soft.w"), b("prompt.soft.b"));
  if (s.shape().back() != prompts * dim) {
    throw ConfigError("soft prompt projection yields " + std::to_string(s.shape().back()) +
                      " values, expected " + std::to_string(prompts * dim));
  }
  return reshape(s, {B, prompts, dim});
}

template <typename T>
Var<T> embed_stem(Binder<T>& b, const EncoderConfig& cfg, Var<T> x, const FilmInputs<T>* film) {
  const auto& xs = x.shape();
  if (xs.size() != 4 || xs[1] != 1 || xs[2] != cfg.height || xs[3] != cfg.width) {
    throw ConfigError("encoder expects [B×1×" + std::to_string(cfg.height) + "×" +
                      std::to_string(cfg.width) + "] input, got " + shape_str(xs));
  }
  if (xs[2] % cfg.patch != 0 || xs[3] % cfg.patch != 0) {
    throw ConfigError("input not divisible by patch size " + std::to_string(cfg.patch));
  }
  auto h = conv2d(x, b("enc.stem1.w"), b("enc.stem1.b"), 1, 1);
  if (film) h = psic::film(h, film->gamma[0], film->beta[0], film->gate);
  h = activation(h, ActivationKind::kGelu);
  h = conv2d(h, b("enc.stem2.w"), b("enc.stem2.b"), cfg.patch, 0);
  if (film) h = psic::film(h, film->gamma[1], film->beta[1], film->gate);
  h = activation(h, ActivationKind::kGelu);
  return channels_to_tokens(h);
}

template <typename T>
Var<T> mha_block(Binder<T>& b, const std::string& p, Var<T> x, std::size_t heads,
                 EncoderTrace<T>* trace) {
  auto h = layer_norm(x, b(p + "ln1.g"), b(p + "ln1.b"));
  auto q = dense(h, b(p + "wq"), b(p + "bq"));
  auto k = dense(h, b(p + "wk"), b(p + "bk"));
  auto v = dense(h, b(p + "wv"), b(p + "bv"));
  if (trace) {
    trace->block_input_shapes.push_back(x.shape());
    trace->block_queries.push_back(q.value());
    trace->block_keys.push_back(k.value());
  }
  auto a = dense(attention(q, k, v, heads), b(p + "wo"), b(p + "bo"));
  x = add(x, a);
  h = layer_norm(x, b(p + "ln2.g"), b(p + "ln2.b"));
  h = activation(dense(h, b(p + "ff1.w"), b(p + "ff1.b")), ActivationKind::kGelu);
  return add(x, dense(h, b(p + "ff2.w"), b(p + "ff2.b")));
}

template <typename T>
Var<T> encode(Binder<T>& b, const EncoderConfig& cfg, Var<T> x, Var<T> ctx,
              const EncodeOptions<T>& opts, Var<T>* p_f_out) {
  cfg.validate();
  const std::size_t B = x.shape().at(0);
  if (ctx.shape() != Shape{B, 4}) {
    throw ConfigError("context batch " + shape_str(ctx.shape()) + " does not match " +
                      std::to_string(B) + " inputs");
  }
  if (!b.has("enc.pos") || b.store().value("enc.pos").dim(0) != cfg.tokens() ||
      b.store().value("enc.pos").dim(1) != cfg.dim) {
    throw ConfigError("encoder parameters do not match the configured token grid");
  }
  PromptDescriptors<T> pd{};
  if (cfg.uses_prompts()) pd = prompt_descriptors(b, ctx);
  if (p_f_out && cfg.film) *p_f_out = pd.p_f;

  std::optional<FilmInputs<T>> film;
  if (cfg.film) {
    film = film_inputs(b, pd.p_f, opts.gate_override);
    if (opts.trace) opts.trace->gate = film->gate.value();
  }
  auto tokens = embed_stem(b, cfg, x, film ? &*film : nullptr);
  tokens = add_broadcast(tokens, b("enc.pos"));
  const std::size_t P = cfg.active_prompts();
  if (P > 0) tokens = concat_tokens(soft_prompt_tokens(b, pd.p_s, P, cfg.dim), tokens);
  for (std::size_t l = 0; l < cfg.depth; ++l) {
    tokens = mha_block(b, "enc.block" + std::to_string(l) + ".", tokens, cfg.heads, opts.trace);
  }
  const std::size_t N = cfg.tokens();
  if (P > 0) tokens = slice_tokens(tokens, P, N);
  auto flat = reshape(tokens, {B, N * cfg.dim});
  return dense(flat, b("enc.head.w"), b("enc.head.b"));
}

#define PSIC_INSTANTIATE_ENCODER(T)                                                           \
  template Tensor<T> context_batch<T>(const std::vector<SideInfo>&, const SnrRange&);         \
  template void init_mha_block_params(ParamStore<T>&, const std::string&, std::size_t,         \
                                      std::uint64_t);                                         \
  template void init_encoder_params(ParamStore<T>&, const EncoderConfig&, std::uint64_t);     \
  template PromptDescriptors<T> prompt_descriptors(Binder<T>&, Var<T>);                       \
  template FilmInputs<T> film_inputs(Binder<T>&, Var<T>, std::optional<double>);              \
  template Var<T> soft_prompt_tokens(Binder<T>&, Var<T>, std::size_t, std::size_t);           \
  template Var<T> embed_stem(Binder<T>&, const EncoderConfig&, Var<T>, const FilmInputs<T>*); \
  template Var<T> mha_block(Binder<T>&, const std::string&, Var<T>, std::size_t,              \
                            EncoderTrace<T>*);                                                \
  template Var<T> encode(Binder<T>&, const EncoderConfig&, Var<T>, Var<T>,                    \
                         const EncodeOptions<T>&, Var<T>*);

PSIC_INSTANTIATE_ENCODER(float)
PSIC_INSTANTIATE_ENCODER(double)

}  // namespace psic
