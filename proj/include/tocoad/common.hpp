#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tocoad {

// Error taxonomy shared by every module. Callers catch the specific kind
// when they can recover (e.g. a resumable pipeline stage), otherwise the
// common base.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ArgumentError : Error {
  using Error::Error;
};
struct ConfigError : Error {
  using Error::Error;
};
struct DatasetLayoutError : Error {
  using Error::Error;
};
struct IntegrityError : Error {
  using Error::Error;
};
struct SynthesisError : Error {
  using Error::Error;
};
struct StateError : Error {
  using Error::Error;
};
struct NumericError : Error {
  using Error::Error;
};
struct MetricError : Error {
  using Error::Error;
};

using Rng = std::mt19937_64;

// Derives an independent stream seed from a run seed and a tuple of indices.
// splitmix64 finalizer over each component.
constexpr std::uint64_t mix_seed(std::uint64_t seed) { return seed; }

template <typename... Rest>
constexpr std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t first, Rest... rest) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (first + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return mix_seed(z, static_cast<std::uint64_t>(rest)...);
}

// FNV-1a, used for config hashes and artifact checksums.
class Fnv1a {
 public:
  void update(const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001B3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xCBF29CE484222325ULL;
};

std::string to_hex(std::uint64_t value);

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline int uniform_int(Rng& rng, int lo, int hi_inclusive) {
  return std::uniform_int_distribution<int>(lo, hi_inclusive)(rng);
}

inline bool bernoulli(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

}  // namespace tocoad
