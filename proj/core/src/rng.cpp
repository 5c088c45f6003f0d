#include "cnpadv/rng.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "cnpadv/errors.hpp"

namespace cnpadv {

double Rng::normal() {
  // Box-Muller on (0,1] x [0,1); no cached second value so the engine state
  // fully determines the stream.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

int Rng::uniform_int(int n) {
  if (n <= 0) throw UsageError("uniform_int requires n > 0");
  return static_cast<int>(eng_() % static_cast<std::uint64_t>(n));
}

void Rng::shuffle(std::span<int> values) {
  for (int i = static_cast<int>(values.size()) - 1; i > 0; --i) {
    const int j = uniform_int(i + 1);
    std::swap(values[i], values[j]);
  }
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k > n) throw UsageError("cannot sample " + std::to_string(k) + " of " + std::to_string(n));
  std::vector<int> pool(n);
  for (int i = 0; i < n; ++i) pool[i] = i;
  std::vector<int> out;
  out.reserve(k);
  for (int i = 0; i < k; ++i) {
    const int j = i + uniform_int(n - i);
    std::swap(pool[i], pool[j]);
    out.push_back(pool[i]);
  }
  return out;
}

std::string Rng::serialize() const {
  std::ostringstream os;
  os << eng_;
  return os.str();
}

void Rng::restore(const std::string& state) {
  std::istringstream is(state);
  is >> eng_;
  if (is.fail()) throw CheckpointError("corrupt rng state");
}

Rng Rng::fork(std::uint64_t stream_id) {
  // splitmix-style mix of a fresh draw with the stream id
  std::uint64_t z = raw() ^ (stream_id + 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return Rng(z ^ (z >> 31));
}

}  // namespace cnpadv
