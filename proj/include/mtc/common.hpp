#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace mtc {

/// Invalid scenario, controller, or experiment configuration.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Input outside a function's mathematical domain (e.g. non-positive gap).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Broken simulation invariant (overlap, NaN state). Never recoverable.
class SimulationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed input file.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

/// SplitMix64 finalizer; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

/// Seeded generator for (seed, stream, sub) so that per-vehicle and
/// per-purpose streams never depend on iteration order.
inline Rng make_rng(std::uint64_t seed, std::uint64_t stream, std::uint64_t sub = 0) {
  return Rng(mix64(mix64(mix64(seed) ^ stream) ^ (sub * 0x632BE59BD9B4E019ULL)));
}

// Stream tags for make_rng.
namespace stream {
inline constexpr std::uint64_t idm_noise = 1;
inline constexpr std::uint64_t humanizer = 2;
inline constexpr std::uint64_t inflow = 3;
inline constexpr std::uint64_t fleet = 4;
inline constexpr std::uint64_t perturbation = 5;
inline constexpr std::uint64_t metrics = 6;
inline constexpr std::uint64_t training = 7;
inline constexpr std::uint64_t dataset = 8;
}  // namespace stream

inline constexpr double kMph = 0.44704;  // m/s per mph

}  // namespace mtc
