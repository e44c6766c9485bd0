#include "psic/model.hpp"

#include <cmath>
#include <limits>

#include "psic/errors.hpp"
#include "psic/ops.hpp"

namespace psic {

void ModelConfig::sync() {
  decoder.height = encoder.height;
  decoder.width = encoder.width;
  decoder.latent = encoder.latent;
  decoder.prompt_dim = encoder.prompt_dim;
}

void ModelConfig::validate() const {
  if (bits < 1 || bits > 16) throw ConfigError("model bits must be in 1..16");
  encoder.validate();
  decoder.validate();
  if (decoder.height != encoder.height || decoder.width != encoder.width ||
      decoder.latent != encoder.latent) {
    throw ConfigError("encoder and decoder disagree on map size or latent dimension");
  }
  if (decoder.film && !encoder.film) {
    throw ConfigError("decoder FiLM needs the encoder FiLM descriptor (enable encoder film)");
  }
  if (!(snr.max_db > snr.min_db)) throw ConfigError("snr range must have max > min");
}

ModelConfig apply_variant(ModelConfig cfg, std::string_view v) {
  if (v == "soft_film") {
    cfg.encoder.soft_prompt = cfg.encoder.film = true;
    cfg.decoder.film = false;
  } else if (v == "soft_only") {
    cfg.encoder.soft_prompt = true;
    cfg.encoder.film = cfg.decoder.film = false;
  } else if (v == "no_prompt") {
    cfg.encoder.soft_prompt = cfg.encoder.film = cfg.decoder.film = false;
  } else if (v == "joint") {
    cfg.encoder.soft_prompt = cfg.encoder.film = cfg.decoder.film = true;
  } else {
    throw ConfigError("unknown model variant '" + std::string(v) +
                      "' (expected soft_film, soft_only, no_prompt or joint)");
  }
  cfg.sync();
  return cfg;
}

template <typename T>
Codec<T> init_codec(ModelConfig cfg, std::uint64_t seed) {
  cfg.sync();
  cfg.validate();
  Codec<T> c{cfg, {}};
  init_encoder_params(c.params, cfg.encoder, seed);
  init_decoder_params(c.params, cfg.decoder, seed);
  return c;
}

template <typename T>
Batch<T> make_batch(const std::vector<const PsiMap*>& maps, const std::vector<SideInfo>& side,
                    const ModelConfig& cfg, const LinkConfig& link, RngStream& rng) {
  if (maps.size() != side.size() || maps.empty()) {
    throw UsageError("make_batch: need one side-info entry per map");
  }
  const std::size_t B = maps.size(), H = cfg.height(), W = cfg.width();
  Batch<T> batch;
  batch.input = Tensor<T>({B, 1, H, W});
  batch.target = Tensor<T>({B, H, W});
  batch.side = side;
  for (std::size_t n = 0; n < B; ++n) {
    const PsiMap& m = *maps[n];
    if (m.height() != H || m.width() != W) {
      throw ConfigError("PSI map " + std::to_string(m.height()) + "x" + std::to_string(m.width()) +
                        " does not match model " + std::to_string(H) + "x" + std::to_string(W));
    }
    const auto x = normalize_psi<T>(m);
    std::copy_n(x.ptr(), H * W, batch.input.ptr() + n * H * W);
    std::copy_n(x.ptr(), H * W, batch.target.ptr() + n * H * W);
    batch.masks.push_back(prefix_mask(side[n].rate, cfg.latent()));
    LinkConfig lc = link;
    lc.snr_db = side[n].snr_db;
    batch.links.push_back(draw_link(batch.masks.back().k, lc, rng));
  }
  return batch;
}

template <typename T>
Forward<T> forward(Binder<T>& b, const ModelConfig& cfg, const Batch<T>& batch,
                   const EncodeOptions<T>& opts) {
  auto& g = b.graph();
  auto x = g.constant(batch.input);
  auto ctx = g.constant(context_batch<T>(batch.side, cfg.snr));
  Forward<T> f;
  Var<T> p_f{};
  f.z = encode(b, cfg.encoder, x, ctx, opts, cfg.decoder.film ? &p_f : nullptr);
  f.z_r = apply_masks(f.z, batch.masks);
  f.z_tilde = transmit(f.z_r, batch.links);
  f.prediction = decode(b, cfg.decoder, f.z_tilde, cfg.decoder.film ? &p_f : nullptr);
  return f;
}

template <typename T>
Var<T> batch_loss(Binder<T>& b, const ModelConfig& cfg, const Batch<T>& batch) {
  return nmse_loss(forward(b, cfg, batch).prediction, batch.target);
}

template <typename T>
std::vector<double> per_sample_nmse(const Tensor<T>& pred, const Tensor<T>& target) {
  if (pred.numel() != target.numel() || target.rank() < 1) {
    throw DimensionError("per_sample_nmse: " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const std::size_t B = target.dim(0), per = target.numel() / B;
  std::vector<double> out(B);
  for (std::size_t n = 0; n < B; ++n) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < per; ++i) {
      const double t = target[n * per + i], e = double(pred[n * per + i]) - t;
      num += e * e;
      den += t * t;
    }
    out[n] = den > 0 ? num / den : std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

#define PSIC_INSTANTIATE_MODEL(T)                                                            \
  template Codec<T> init_codec<T>(ModelConfig, std::uint64_t);                               \
  template Batch<T> make_batch<T>(const std::vector<const PsiMap*>&,                         \
                                  const std::vector<SideInfo>&, const ModelConfig&,          \
                                  const LinkConfig&, RngStream&);                            \
  template Forward<T> forward(Binder<T>&, const ModelConfig&, const Batch<T>&,               \
                              const EncodeOptions<T>&);                                      \
  template Var<T> batch_loss(Binder<T>&, const ModelConfig&, const Batch<T>&);               \
  template std::vector<double> per_sample_nmse(const Tensor<T>&, const Tensor<T>&);

PSIC_INSTANTIATE_MODEL(float)
PSIC_INSTANTIATE_MODEL(double)

}  // namespace psic
