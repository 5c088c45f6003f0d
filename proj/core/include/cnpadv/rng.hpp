#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace cnpadv {

/// Deterministic random source. All draws are derived from std::mt19937_64
/// through fixed transforms (no distribution-object state), so a run is
/// reproducible from (seed) alone and the full state round-trips through
/// serialize()/restore() for checkpoint resume.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller; consumes exactly two engine draws.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Uniform integer in [0, n).
  int uniform_int(int n);

  /// Fisher-Yates shuffle.
  void shuffle(std::span<int> values);

  /// k distinct values from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

  std::string serialize() const;
  void restore(const std::string& state);

  /// Derive an independent stream for a named purpose.
  Rng fork(std::uint64_t stream_id);

 private:
  std::mt19937_64 eng_;
};

}  // namespace cnpadv
