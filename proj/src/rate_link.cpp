#include "psic/rate_link.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "psic/errors.hpp"
#include "psic/log.hpp"
#include "psic/ops.hpp"

namespace psic {

RateMask prefix_mask(double rate, std::size_t dim) {
  if (!(rate > 0.0 && rate <= 1.0)) {
    throw DomainError("rate must lie in (0, 1], got " + std::to_string(rate));
  }
  if (dim < 1) throw DomainError("latent dimension must be at least 1");
  RateMask m;
  m.dim = dim;
  m.rate = rate;
  m.k = std::max<std::size_t>(static_cast<std::size_t>(std::floor(rate * double(dim))), 1);
  m.k = std::min(m.k, dim);
  m.alpha = std::sqrt(double(dim) / double(m.k));
  m.mask.assign(dim, 0);
  std::fill_n(m.mask.begin(), m.k, 1);
  return m;
}

template <typename T>
Tensor<T> apply_mask(const Tensor<T>& z, const RateMask& m) {
  if (z.numel() != m.dim) {
    throw DimensionError("apply_mask: latent " + shape_str(z.shape()) + " vs mask of dimension " +
                         std::to_string(m.dim));
  }
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < m.k; ++i) out[i] = static_cast<T>(m.alpha * double(z[i]));
  return out;
}

template <typename T>
Var<T> apply_masks(Var<T> z, const std::vector<RateMask>& masks) {
  const auto& Z = z.value();
  if (Z.rank() != 2 || Z.dim(0) != masks.size()) {
    throw DimensionError("apply_masks: latent batch " + shape_str(Z.shape()) + " vs " +
                         std::to_string(masks.size()) + " masks");
  }
  const std::size_t D = Z.dim(1);
  Tensor<T> scale(Z.shape());
  for (std::size_t n = 0; n < masks.size(); ++n) {
    if (masks[n].dim != D) throw DimensionError("apply_masks: mask dimension mismatch");
    for (std::size_t i = 0; i < masks[n].k; ++i) scale[n * D + i] = static_cast<T>(masks[n].alpha);
  }
  return mul_const(z, scale);
}

std::string_view to_string(ChannelMode m) {
  switch (m) {
    case ChannelMode::kIdentity: return "identity";
    case ChannelMode::kScalarGain: return "scalar_gain";
    case ChannelMode::kDiagRayleigh: return "diag_rayleigh";
    case ChannelMode::kDiagRician: return "diag_rician";
  }
  return "identity";
}

ChannelMode parse_channel_mode(std::string_view s) {
  if (s == "identity") return ChannelMode::kIdentity;
  if (s == "scalar_gain") return ChannelMode::kScalarGain;
  if (s == "diag_rayleigh") return ChannelMode::kDiagRayleigh;
  if (s == "diag_rician") return ChannelMode::kDiagRician;
  throw ConfigError("unknown link channel mode '" + std::string(s) + "'");
}

void LinkConfig::validate() const {
  if (!std::isfinite(snr_db)) throw ConfigError("link snr_db must be finite");
  if (!std::isfinite(gain)) throw ConfigError("link gain must be finite");
  if (!(k_factor >= 0.0)) throw ConfigError("link k_factor must be nonnegative");
}

double noise_sigma_from_snr(const double* z_r, std::size_t k, double snr_db) {
  if (k < 1) throw DomainError("noise_sigma_from_snr needs k >= 1");
  double energy = 0.0;
  for (std::size_t i = 0; i < k; ++i) energy += z_r[i] * z_r[i];
  if (energy == 0.0) {
    warn("zero-energy latent on the control link; noise disabled for this sample");
    return 0.0;
  }
  return std::sqrt(energy / double(k) / std::pow(10.0, snr_db / 10.0));
}

LinkDraw draw_link(std::size_t k, const LinkConfig& cfg, RngStream& rng) {
  LinkDraw d;
  d.k = k;
  d.snr_db = cfg.snr_db;
  d.gains.resize(k);
  d.noise.resize(k);
  const double los = std::sqrt(cfg.k_factor / (cfg.k_factor + 1.0));
  const double nlos = std::sqrt(1.0 / (cfg.k_factor + 1.0));
  for (std::size_t i = 0; i < k; ++i) {
    switch (cfg.mode) {
      case ChannelMode::kIdentity: d.gains[i] = 1.0; break;
      case ChannelMode::kScalarGain: d.gains[i] = cfg.gain; break;
      case ChannelMode::kDiagRayleigh: d.gains[i] = std::abs(rng.complex_normal()); break;
      case ChannelMode::kDiagRician: {
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        d.gains[i] = std::abs(los * std::polar(1.0, phi) + nlos * rng.complex_normal());
        break;
      }
    }
  }
  for (auto& n : d.noise) n = rng.normal();
  return d;
}

namespace {

// Returns sigma; writes H_c z + sigma·n into out[0..k).
template <typename T>
double transmit_row(const T* z, T* out, const LinkDraw& d) {
  std::vector<double> zd(z, z + d.k);
  const double sigma = noise_sigma_from_snr(zd.data(), d.k, d.snr_db);
  for (std::size_t i = 0; i < d.k; ++i) {
    out[i] = static_cast<T>(d.gains[i] * zd[i] + sigma * d.noise[i]);
  }
  return sigma;
}

}  // namespace

template <typename T>
Tensor<T> transmit(const Tensor<T>& z_r, const LinkDraw& draw) {
  if (draw.k > z_r.numel()) throw DimensionError("transmit: k exceeds latent dimension");
  Tensor<T> out(z_r.shape());
  transmit_row(z_r.ptr(), out.ptr(), draw);
  return out;
}

template <typename T>
Tensor<T> transmit(const Tensor<T>& z_r, std::size_t k, const LinkConfig& cfg, RngStream& rng) {
  return transmit(z_r, draw_link(k, cfg, rng));
}

template <typename T>
Var<T> transmit(Var<T> z_r, const std::vector<LinkDraw>& draws) {
  const auto& Z = z_r.value();
  if (Z.rank() != 2 || Z.dim(0) != draws.size()) {
    throw DimensionError("transmit: latent batch " + shape_str(Z.shape()) + " vs " +
                         std::to_string(draws.size()) + " link draws");
  }
  const std::size_t B = Z.dim(0), D = Z.dim(1);
  Tensor<T> Y(Z.shape());
  std::vector<double> sigmas(B);
  for (std::size_t n = 0; n < B; ++n) {
    if (draws[n].k > D) throw DimensionError("transmit: k exceeds latent dimension");
    sigmas[n] = transmit_row(Z.ptr() + n * D, Y.ptr() + n * D, draws[n]);
  }
  const std::size_t zi = z_r.id;
  return z_r.graph->record(
      "transmit", {z_r}, std::move(Y),
      [=, sigmas = std::move(sigmas)](Graph<T>& g, std::size_t self) {
        if (!g.requires_grad(zi)) return;
        auto& gz = g.grad_buffer(zi);
        const auto& dy = g.node(self).grad;
        const auto& Z = g.value(zi);
        for (std::size_t n = 0; n < B; ++n) {
          const auto& d = draws[n];
          double gn = 0.0;
          for (std::size_t i = 0; i < d.k; ++i) gn += double(dy[n * D + i]) * d.noise[i];
          // dσ/dz_i = z_i / (k · snr_lin · σ)
          const double coef =
              sigmas[n] > 0.0 ? gn / (double(d.k) * std::pow(10.0, d.snr_db / 10.0) * sigmas[n]) : 0.0;
          for (std::size_t i = 0; i < d.k; ++i) {
            gz[n * D + i] += static_cast<T>(d.gains[i] * double(dy[n * D + i]) +
                                            coef * double(Z[n * D + i]));
          }
        }
      });
}

#define PSIC_INSTANTIATE_LINK(T)                                                         \
  template Tensor<T> apply_mask(const Tensor<T>&, const RateMask&);                      \
  template Var<T> apply_masks(Var<T>, const std::vector<RateMask>&);                     \
  template Tensor<T> transmit(const Tensor<T>&, const LinkDraw&);                        \
  template Tensor<T> transmit(const Tensor<T>&, std::size_t, const LinkConfig&, RngStream&); \
  template Var<T> transmit(Var<T>, const std::vector<LinkDraw>&);

PSIC_INSTANTIATE_LINK(float)
PSIC_INSTANTIATE_LINK(double)

}  // namespace psic
