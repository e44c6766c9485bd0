#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string_view>
#include <vector>

#include "psic/rng.hpp"
#include "psic/tensor.hpp"

namespace psic {

enum class ChannelType { kRayleigh, kRician };

std::string_view to_string(ChannelType t);
ChannelType parse_channel_type(std::string_view s);

// Rasterized map of B-bit quantized IRS phase shifts. Phases are stored as
// grid indices, so every phase lies on {0, 2π/2^B, …} exactly.
class PsiMap {
 public:
  PsiMap(std::size_t height, std::size_t width, unsigned bits);
  PsiMap(std::size_t height, std::size_t width, unsigned bits, std::vector<std::uint32_t> levels);

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t elements() const { return levels_.size(); }
  unsigned bits() const { return bits_; }
  std::uint32_t level_count() const { return 1u << bits_; }

  std::uint32_t level(std::size_t m) const { return levels_[m]; }
  void set_level(std::size_t m, std::uint32_t level);
  const std::vector<std::uint32_t>& levels() const { return levels_; }
  // Phase of element m in radians, level · 2π / 2^B.
  double phase(std::size_t m) const;

  bool operator==(const PsiMap&) const = default;

 private:
  std::size_t height_;
  std::size_t width_;
  unsigned bits_;
  std::vector<std::uint32_t> levels_;
};

struct ChannelDraw {
  ChannelType type = ChannelType::kRayleigh;
  double k_factor = 0.0;
  // Cascaded per-element gain (BS→IRS times IRS→user), unit mean power.
  std::vector<std::complex<double>> gains;
};

enum class GeneratorMode { kAligned, kUniform };

std::string_view to_string(GeneratorMode m);
GeneratorMode parse_generator_mode(std::string_view s);

struct DatasetConfig {
  std::size_t height = 4;
  std::size_t width = 4;
  unsigned bits = 4;
  std::size_t samples = 1;
  double rician_fraction = 0.5;  // share of samples drawn from Rician fading
  double k_factor = 3.0;
  GeneratorMode mode = GeneratorMode::kAligned;
  std::uint64_t seed = 0;

  std::size_t elements() const { return height * width; }
  void validate() const;
};

// Per-element fading for a height×width planar array. Rician draws add a
// unit-modulus line-of-sight steering term (fixed array geometry) with
// weight √(K/(K+1)) to scattering weighted √(1/(K+1)). Rayleigh ignores
// k_factor and records 0.
ChannelDraw sample_fading(ChannelType type, double k_factor, std::size_t height, std::size_t width,
                          RngStream& rng);

// Nearest level of the B-bit grid under circular distance; exact halfway
// ties go to the smaller index.
std::uint32_t quantize_level(double theta, unsigned bits);
double quantize_phase(double theta, unsigned bits);

// Co-phasing configuration θ_m = Q(mod(−arg(gain_m), 2π)).
PsiMap aligned_phases(const std::vector<std::complex<double>>& gains, std::size_t height,
                      std::size_t width, unsigned bits);

// One sample; channel type is drawn from the configured mix. *type_out
// receives the type used (Rayleigh for uniform mode).
PsiMap generate_psi(const DatasetConfig& cfg, RngStream& rng, ChannelType* type_out = nullptr);
// Like generate_psi, with the channel type fixed.
PsiMap generate_psi(const DatasetConfig& cfg, ChannelType type, RngStream& rng);

struct Sample {
  PsiMap map;
  ChannelType type;
};

// cfg.samples maps; sample i uses the stream (cfg.seed, "psi/<i>").
std::vector<Sample> generate_dataset(const DatasetConfig& cfg);
std::vector<Sample> generate_dataset(const DatasetConfig& cfg, ChannelType type);

// x = θ / 2π as a [1×H×W] tensor, and the inverse.
template <typename T>
Tensor<T> normalize_psi(const PsiMap& map);
PsiMap denormalize_psi(const Tensor<double>& x, unsigned bits);

void write_dataset(const std::filesystem::path& path, const std::vector<PsiMap>& samples);
std::vector<PsiMap> read_dataset(const std::filesystem::path& path);

}  // namespace psic
