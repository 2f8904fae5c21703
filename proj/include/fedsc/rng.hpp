#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace fedsc {

using Rng = std::mt19937_64;

/// Purpose tags keep independent streams apart when they share a
/// (client, round) coordinate.
enum class StreamPurpose : std::uint64_t {
  init = 1,
  shuffle = 2,
  noise = 3,
  personalize = 4,
  privacy = 5,
  scene = 6,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Stream seed for one (client, round, purpose) coordinate. Derivation is a
/// pure function of its arguments, so worker scheduling cannot perturb it.
std::uint64_t derive_seed(std::uint64_t master, std::int64_t client, std::int64_t round,
                          StreamPurpose purpose);

Rng make_stream(std::uint64_t master, std::int64_t client, std::int64_t round,
                StreamPurpose purpose);

/// Fisher-Yates over [0, n) driven by the given stream.
std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

/// Uniform integer in [0, bound) without relying on library distributions.
std::uint64_t uniform_index(Rng& rng, std::uint64_t bound);

/// Uniform double in [0, 1) with 53 random bits.
double uniform01(Rng& rng);

/// Standard normal draw (Box-Muller, one variate per call).
double standard_normal(Rng& rng);

}  // namespace fedsc
