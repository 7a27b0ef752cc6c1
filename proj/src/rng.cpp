#include "qcdq/rng.hpp"

#include <boost/random/normal_distribution.hpp>

namespace qcdq {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t stream_seed(std::uint64_t master, StreamTag tag, std::uint64_t index) {
  std::uint64_t h = splitmix64(master ^ (static_cast<std::uint64_t>(kRngScheme) << 56));
  h = splitmix64(h ^ static_cast<std::uint64_t>(tag));
  return splitmix64(h + index);
}

Rng make_stream(std::uint64_t master, StreamTag tag, std::uint64_t index) {
  return Rng(stream_seed(master, tag, index));
}

double standard_normal(Rng& rng) {
  boost::random::normal_distribution<double> dist(0.0, 1.0);
  return dist(rng);
}

}  // namespace qcdq
