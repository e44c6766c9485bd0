#pragma once

#include <cstddef>
#include <string_view>
#include <vector>

#include "psic/graph.hpp"
#include "psic/rng.hpp"

namespace psic {

// Prefix mask keeping the first k = max(floor(r·D), 1) latent coordinates,
// with energy scale alpha = sqrt(D/k).
struct RateMask {
  std::size_t dim = 0;
  double rate = 1.0;
  std::size_t k = 0;
  double alpha = 1.0;
  std::vector<unsigned char> mask;
};

RateMask prefix_mask(double rate, std::size_t dim);

// z_r = alpha · (mask ⊙ z) for a single latent vector.
template <typename T>
Tensor<T> apply_mask(const Tensor<T>& z, const RateMask& m);

// Row-wise masking of a [B×D] latent batch, one mask per row.
template <typename T>
Var<T> apply_masks(Var<T> z, const std::vector<RateMask>& masks);

enum class ChannelMode { kIdentity, kScalarGain, kDiagRayleigh, kDiagRician };

std::string_view to_string(ChannelMode m);
ChannelMode parse_channel_mode(std::string_view s);

struct LinkConfig {
  ChannelMode mode = ChannelMode::kIdentity;
  double snr_db = 20.0;
  double gain = 1.0;      // scalar_gain mode
  double k_factor = 3.0;  // diag_rician mode

  void validate() const;
};

// Noise standard deviation making active-coordinate signal power over noise
// power equal to snr_db. A zero-energy input yields 0 and a warning.
double noise_sigma_from_snr(const double* z_r, std::size_t k, double snr_db);

// Random part of one transmission: per-coordinate channel gains and unit
// normal noise for the k active coordinates. Drawing it separately keeps the
// differentiable transmit a deterministic function of z_r.
struct LinkDraw {
  std::size_t k = 0;
  double snr_db = 0.0;
  std::vector<double> gains;
  std::vector<double> noise;
};

LinkDraw draw_link(std::size_t k, const LinkConfig& cfg, RngStream& rng);

// z̃ = H_c z_r + w on the active prefix; the masked tail stays exactly zero.
template <typename T>
Tensor<T> transmit(const Tensor<T>& z_r, const LinkDraw& draw);
template <typename T>
Tensor<T> transmit(const Tensor<T>& z_r, std::size_t k, const LinkConfig& cfg, RngStream& rng);

// Batched, differentiable form over [B×D]. The noise scale depends on z_r,
// and that dependence is part of the gradient.
template <typename T>
Var<T> transmit(Var<T> z_r, const std::vector<LinkDraw>& draws);

}  // namespace psic
