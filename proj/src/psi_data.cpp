#include "psic/psi_data.hpp"

#include <cstring>

#include <bit>
#include <cmath>
#include <fstream>
#include <iterator>
#include <numbers>

#include "psic/errors.hpp"
#include "psic/io_util.hpp"

namespace psic {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr char kDatasetMagic[4] = {'P', 'S', 'I', '1'};
constexpr std::uint32_t kDatasetVersion = 1;

float grid_value(std::uint32_t level, unsigned bits) {
  return static_cast<float>(static_cast<double>(level) * kTwoPi / static_cast<double>(1u << bits));
}

}  // namespace

std::string_view to_string(ChannelType t) {
  return t == ChannelType::kRayleigh ? "rayleigh" : "rician";
}

ChannelType parse_channel_type(std::string_view s) {
  if (s == "rayleigh" || s == "Rayleigh") return ChannelType::kRayleigh;
  if (s == "rician" || s == "Rician") return ChannelType::kRician;
  throw ConfigError("unknown channel type '" + std::string(s) + "'");
}

std::string_view to_string(GeneratorMode m) { return m == GeneratorMode::kAligned ? "aligned" : "uniform"; }

GeneratorMode parse_generator_mode(std::string_view s) {
  if (s == "aligned") return GeneratorMode::kAligned;
  if (s == "uniform") return GeneratorMode::kUniform;
  throw ConfigError("unknown generator mode '" + std::string(s) + "' (expected aligned or uniform)");
}

PsiMap::PsiMap(std::size_t height, std::size_t width, unsigned bits)
    : PsiMap(height, width, bits, std::vector<std::uint32_t>(height * width, 0)) {}

PsiMap::PsiMap(std::size_t height, std::size_t width, unsigned bits,
               std::vector<std::uint32_t> levels)
    : height_(height), width_(width), bits_(bits), levels_(std::move(levels)) {
  if (bits < 1 || bits > 16) throw ConfigError("phase resolution must be 1..16 bits");
  if (height == 0 || width == 0) throw ConfigError("PSI map dimensions must be positive");
  if (levels_.size() != height * width) {
    throw DimensionError("PSI map " + std::to_string(height) + "x" + std::to_string(width) +
                         " given " + std::to_string(levels_.size()) + " levels");
  }
  for (auto l : levels_) {
    if (l >= level_count()) throw DomainError("phase level outside the B-bit grid");
  }
}

void PsiMap::set_level(std::size_t m, std::uint32_t level) {
  if (level >= level_count()) throw DomainError("phase level outside the B-bit grid");
  levels_.at(m) = level;
}

double PsiMap::phase(std::size_t m) const {
  return static_cast<double>(levels_[m]) * kTwoPi / static_cast<double>(level_count());
}

void DatasetConfig::validate() const {
  if (height == 0 || width == 0) throw ConfigError("dataset height/width must be positive");
  if (bits < 1 || bits > 16) throw ConfigError("dataset bits must be in 1..16");
  if (samples < 1) throw ConfigError("dataset needs at least one sample");
  if (rician_fraction < 0.0 || rician_fraction > 1.0) {
    throw ConfigError("rician_fraction must lie in [0, 1]");
  }
  if (k_factor < 0.0) throw ConfigError("Rician K-factor must be nonnegative");
}

namespace {

// Fixed array geometry: direction cosines (u, v) of the BS and the user seen
// from the IRS. Half-wavelength spacing gives phase steps π·u along rows and
// π·v along columns.
struct Steering {
  double u, v;
};
constexpr Steering kBsSteering{0.35, -0.55};
constexpr Steering kUserSteering{-0.2, 0.4};

// One link: unit-power Rayleigh, or Rician with the deterministic planar
// steering LoS term.
std::vector<std::complex<double>> sample_link(ChannelType type, double k, Steering los, std::size_t height,
                                              std::size_t width, RngStream& rng) {
  const std::size_t m = height * width;
  std::vector<std::complex<double>> g(m);
  if (type == ChannelType::kRayleigh) {
    for (auto& v : g) v = rng.complex_normal();
    return g;
  }
  const double los_w = std::sqrt(k / (k + 1.0));
  const double nlos_w = std::sqrt(1.0 / (k + 1.0));
  for (std::size_t r = 0; r < height; ++r)
    for (std::size_t c = 0; c < width; ++c) {
      const double phi = std::numbers::pi * (los.u * double(r) + los.v * double(c));
      g[r * width + c] = los_w * std::polar(1.0, phi) + nlos_w * rng.complex_normal();
    }
  return g;
}

}  // namespace

ChannelDraw sample_fading(ChannelType type, double k_factor, std::size_t height, std::size_t width,
                          RngStream& rng) {
  if (!(k_factor >= 0.0)) throw ConfigError("Rician K-factor must be nonnegative");
  ChannelDraw d;
  d.type = type;
  d.k_factor = type == ChannelType::kRayleigh ? 0.0 : k_factor;
  auto bs_irs = sample_link(type, d.k_factor, kBsSteering, height, width, rng);
  auto irs_user = sample_link(type, d.k_factor, kUserSteering, height, width, rng);
  d.gains.resize(bs_irs.size());
  for (std::size_t i = 0; i < d.gains.size(); ++i) d.gains[i] = bs_irs[i] * irs_user[i];
  return d;
}

std::uint32_t quantize_level(double theta, unsigned bits) {
  if (bits < 1) throw ConfigError("quantize_phase needs at least 1 bit");
  if (bits > 16) throw ConfigError("quantize_phase supports at most 16 bits");
  if (!std::isfinite(theta)) throw DomainError("phase must be finite");
  const std::uint32_t levels = 1u << bits;
  double t = std::fmod(theta, kTwoPi);
  if (t < 0) t += kTwoPi;
  if (t >= kTwoPi) t = 0.0;
  const double q = t * static_cast<double>(levels) / kTwoPi;
  const auto lo = static_cast<std::uint32_t>(std::floor(q));
  const double frac = q - std::floor(q);
  const std::uint32_t below = lo % levels;
  const std::uint32_t above = (lo + 1) % levels;
  if (frac < 0.5) return below;
  if (frac > 0.5) return above;
  return std::min(below, above);
}

double quantize_phase(double theta, unsigned bits) {
  return static_cast<double>(quantize_level(theta, bits)) * kTwoPi /
         static_cast<double>(1u << bits);
}

PsiMap aligned_phases(const std::vector<std::complex<double>>& gains, std::size_t height,
                      std::size_t width, unsigned bits) {
  if (gains.size() != height * width) {
    throw DimensionError("gain vector of " + std::to_string(gains.size()) +
                         " entries for a " + std::to_string(height) + "x" +
                         std::to_string(width) + " map");
  }
  std::vector<std::uint32_t> levels(gains.size());
  for (std::size_t m = 0; m < gains.size(); ++m) {
    levels[m] = quantize_level(-std::arg(gains[m]), bits);
  }
  return PsiMap(height, width, bits, std::move(levels));
}

PsiMap generate_psi(const DatasetConfig& cfg, ChannelType type, RngStream& rng) {
  if (cfg.mode == GeneratorMode::kUniform) {
    PsiMap map(cfg.height, cfg.width, cfg.bits);
    for (std::size_t m = 0; m < map.elements(); ++m) {
      map.set_level(m, static_cast<std::uint32_t>(rng.uniform_index(map.level_count())));
    }
    return map;
  }
  const auto draw = sample_fading(type, cfg.k_factor, cfg.height, cfg.width, rng);
  return aligned_phases(draw.gains, cfg.height, cfg.width, cfg.bits);
}

PsiMap generate_psi(const DatasetConfig& cfg, RngStream& rng, ChannelType* type_out) {
  const ChannelType type =
      rng.uniform() < cfg.rician_fraction ? ChannelType::kRician : ChannelType::kRayleigh;
  if (type_out) *type_out = cfg.mode == GeneratorMode::kUniform ? ChannelType::kRayleigh : type;
  return generate_psi(cfg, type, rng);
}

std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    RngStream rng(cfg.seed, "psi/" + std::to_string(i));
    ChannelType t;
    auto map = generate_psi(cfg, rng, &t);
    out.push_back({std::move(map), t});
  }
  return out;
}

std::vector<Sample> generate_dataset(const DatasetConfig& cfg, ChannelType type) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.samples);
  for (std::size_t i = 0; i < cfg.samples; ++i) {
    RngStream rng(cfg.seed, "psi/" + std::string(to_string(type)) + "/" + std::to_string(i));
    out.push_back({generate_psi(cfg, type, rng), type});
  }
  return out;
}

template <typename T>
Tensor<T> normalize_psi(const PsiMap& map) {
  Tensor<T> x({1, map.height(), map.width()});
  const double n = static_cast<double>(map.level_count());
  for (std::size_t m = 0; m < map.elements(); ++m) {
    x[m] = static_cast<T>(static_cast<double>(map.level(m)) / n);
  }
  return x;
}

template Tensor<float> normalize_psi<float>(const PsiMap&);
template Tensor<double> normalize_psi<double>(const PsiMap&);

PsiMap denormalize_psi(const Tensor<double>& x, unsigned bits) {
  if (x.rank() < 2) throw DimensionError("denormalize_psi expects [..×H×W], got " + shape_str(x.shape()));
  const std::size_t h = x.dim(x.rank() - 2), w = x.dim(x.rank() - 1);
  if (h * w != x.numel()) throw DimensionError("denormalize_psi expects a single map");
  std::vector<std::uint32_t> levels(x.numel());
  const double n = static_cast<double>(1u << bits);
  for (std::size_t m = 0; m < x.numel(); ++m) {
    const double l = x[m] * n;
    const double r = std::round(l);
    if (std::abs(l - r) > 1e-9 || r < 0 || r >= n) {
      throw DomainError("normalized value " + std::to_string(x[m]) + " is not on the " +
                        std::to_string(bits) + "-bit grid");
    }
    levels[m] = static_cast<std::uint32_t>(r);
  }
  return PsiMap(h, w, bits, std::move(levels));
}

void write_dataset(const std::filesystem::path& path, const std::vector<PsiMap>& samples) {
  std::uint32_t h = 0, w = 0, b = 0;
  if (!samples.empty()) {
    h = static_cast<std::uint32_t>(samples[0].height());
    w = static_cast<std::uint32_t>(samples[0].width());
    b = samples[0].bits();
  }
  ByteWriter out;
  out.bytes(kDatasetMagic, 4);
  out.u32(kDatasetVersion);
  out.u32(static_cast<std::uint32_t>(samples.size()));
  out.u32(h);
  out.u32(w);
  out.u32(b);
  const std::size_t payload_start = out.size();
  for (const auto& s : samples) {
    if (s.height() != h || s.width() != w || s.bits() != b) {
      throw UsageError("write_dataset: all samples must share (H, W, B)");
    }
    for (std::size_t m = 0; m < s.elements(); ++m) out.f32(grid_value(s.level(m), b));
  }
  out.u32(crc32_of(out.view().subspan(payload_start)));
  write_file(path, out.view());
}

std::vector<PsiMap> read_dataset(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  ByteReader in(buf);
  if (buf.size() < 4 || std::memcmp(buf.data(), kDatasetMagic, 4) != 0) {
    throw LoadError(LoadErrorKind::kBadMagic, path.string() + ": not a PSI dataset (bad magic)");
  }
  in.skip(4);
  const auto version = in.u32();
  if (version != kDatasetVersion) {
    throw LoadError(LoadErrorKind::kBadVersion,
                    path.string() + ": unsupported dataset version " + std::to_string(version), 4);
  }
  const auto count = in.u32();
  const auto h = in.u32(), w = in.u32(), b = in.u32();
  const std::size_t payload_start = in.position();
  const std::size_t per = std::size_t(h) * w;
  const std::size_t payload_bytes = std::size_t(count) * per * 4;
  if (buf.size() < payload_start + payload_bytes + 4) {
    throw LoadError(LoadErrorKind::kTruncated,
                    path.string() + ": truncated (" + std::to_string(buf.size()) + " bytes, need " +
                        std::to_string(payload_start + payload_bytes + 4) + ")",
                    buf.size());
  }
  if (count > 0 && (h == 0 || w == 0 || b < 1 || b > 16)) {
    throw LoadError(LoadErrorKind::kMalformed, path.string() + ": invalid map header", 12);
  }
  const auto payload = std::span<const std::uint8_t>(buf).subspan(payload_start, payload_bytes);
  in.skip(payload_bytes);
  const auto stored_crc = in.u32();
  if (crc32_of(payload) != stored_crc) {
    // Valid payload floats sit exactly on the phase grid. The first value
    // that does not is compared bytewise against the grid value closest in
    // Hamming distance to pin the corrupted byte.
    std::size_t bad = payload_start;
    for (std::size_t i = 0; i < count * per; ++i) {
      const auto fb = std::bit_cast<std::uint32_t>(load_f32(payload.data() + 4 * i));
      int best_bits = 33;
      std::uint32_t best_diff = 0;
      for (std::uint32_t l = 0; l < (1u << b); ++l) {
        const auto diff = fb ^ std::bit_cast<std::uint32_t>(grid_value(l, b));
        const int bits = std::popcount(diff);
        if (bits < best_bits) {
          best_bits = bits;
          best_diff = diff;
        }
      }
      if (best_diff != 0) {
        std::size_t byte = 0;
        while (byte < 3 && ((best_diff >> (8 * byte)) & 0xffu) == 0) ++byte;
        bad = payload_start + 4 * i + byte;
        break;
      }
    }
    throw LoadError(LoadErrorKind::kCrcMismatch,
                    path.string() + ": CRC mismatch, corrupt payload byte at offset " +
                        std::to_string(bad),
                    bad);
  }
  std::vector<PsiMap> out;
  out.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    std::vector<std::uint32_t> levels(per);
    for (std::size_t m = 0; m < per; ++m) {
      const float f = load_f32(payload.data() + 4 * (s * per + m));
      const auto l = quantize_level(f, b);
      if (grid_value(l, b) != f) {
        throw LoadError(LoadErrorKind::kMalformed, path.string() + ": phase off the B-bit grid",
                        payload_start + 4 * (s * per + m));
      }
      levels[m] = l;
    }
    out.emplace_back(h, w, b, std::move(levels));
  }
  return out;
}

}  // namespace psic
