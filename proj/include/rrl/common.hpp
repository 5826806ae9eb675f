#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

namespace rrl {

// Bad or inconsistent configuration: unknown ids, broken recipe graphs,
// out-of-range hyperparameters. Maps to exit code 2 in the CLI.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A well-formed call made at the wrong time or with mismatched shapes.
class UsageError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Numerical blow-up during optimization.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string dump)
      : std::runtime_error(what), dump_(std::move(dump)) {}
  const std::string& dump() const noexcept { return dump_; }

 private:
  std::string dump_;
};

// All randomness goes through an explicitly passed engine. The helpers below
// replace the std distributions, whose output is implementation-defined, so
// that seeded runs are bit-identical across standard libraries.
using Rng = std::mt19937_64;

inline double uniform01(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform integer in [0, n).
inline std::uint64_t uniform_index(Rng& rng, std::uint64_t n) {
  if (n == 0) throw UsageError("uniform_index: empty range");
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t x = rng();
  while (x >= limit) x = rng();
  return x % n;
}

inline int uniform_int(Rng& rng, int lo, int hi) {
  if (hi < lo) throw UsageError("uniform_int: hi < lo");
  return lo + static_cast<int>(uniform_index(
                  rng, static_cast<std::uint64_t>(hi) - static_cast<std::uint64_t>(lo) + 1));
}

// Box-Muller, one draw per call.
inline double standard_normal(Rng& rng) {
  double u1 = uniform01(rng);
  while (u1 <= 0.0) u1 = uniform01(rng);
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

// Derive an independent stream from a base seed and a salt (splitmix64).
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace rrl
