#pragma once

// Random streams.
//
// Every stochastic routine draws from a std::mt19937_64 engine whose seed is
// derived from (master seed, purpose tag, index) by a SplitMix64 mixing chain.
// The engine and its integer seeding are fully specified by the C++ standard
// and the distributions come from Boost.Random (header code, independent of
// the standard library vendor), so a (master seed, tag, index) triple gives
// the same draws on every platform. Bump kRngScheme if any of this changes.

#include <cstdint>
#include <random>

namespace qcdq {

inline constexpr int kRngScheme = 1;

using Rng = std::mt19937_64;

enum class StreamTag : std::uint64_t {
  kEvalPath = 1,
  kTrainPath = 2,
  kTrainControl = 3,
  kBasisPath = 4,
  kBasisFit = 5,
  kBatchRun = 6,
  kMeanFlow = 7,
  kMonteCarlo = 8,
  kProjection = 9,
  kAuxiliary = 10,
};

std::uint64_t splitmix64(std::uint64_t x);

/// Seed of substream `index` for purpose `tag` under `master`.
std::uint64_t stream_seed(std::uint64_t master, StreamTag tag, std::uint64_t index);

Rng make_stream(std::uint64_t master, StreamTag tag, std::uint64_t index);

/// 53-bit uniform on [0, 1).
inline double uniform01(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

inline bool bernoulli(Rng& rng, double p) { return uniform01(rng) < p; }

double standard_normal(Rng& rng);

}  // namespace qcdq
