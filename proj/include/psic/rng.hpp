#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <string>
#include <string_view>

namespace psic {

// Deterministic random stream keyed by (seed, label).
//
// xoshiro256** seeded through splitmix64; normals by Box-Muller. Only integer
// arithmetic and IEEE basic operations feed the uniform path, so sequences are
// reproducible across platforms and runs.
class RngStream {
 public:
  struct State {
    std::array<std::uint64_t, 4> words{};
    bool has_spare = false;
    double spare = 0.0;
  };

  RngStream(std::uint64_t seed, std::string_view label);

  std::uint64_t seed() const { return seed_; }
  const std::string& label() const { return label_; }

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  // Uniform integer on [0, n).
  std::uint64_t uniform_index(std::uint64_t n);
  double normal();
  // Circularly-symmetric complex Gaussian with unit variance.
  std::complex<double> complex_normal();

  // Independent child stream; the child label is "<label>/<sub>".
  RngStream split(std::string_view sub) const;
  RngStream split(std::uint64_t index) const { return split(std::to_string(index)); }

  State state() const { return {words_, has_spare_, spare_}; }
  void set_state(const State& s);

 private:
  std::uint64_t seed_;
  std::string label_;
  std::array<std::uint64_t, 4> words_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

std::uint64_t fnv1a64(std::string_view s);

}  // namespace psic
