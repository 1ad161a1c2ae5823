#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace sfda {

/// Portable random stream.
///
/// Raw bits come from std::mt19937_64, whose output sequence is fixed by the
/// C++ standard. The standard distributions are implementation-defined, so
/// every derived draw is computed here:
///   uniform()      = (next() >> 11) * 2^-53, in [0, 1)
///   uniform_int(n) = rejection sampling on next() (unbiased, n > 0)
///   normal()       = Box-Muller on two uniforms, no cached second value
/// Streams for independent purposes are derived with `derive(seed, tag)`,
/// a SplitMix64 mix of the run seed and a purpose tag.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  static std::uint64_t derive(std::uint64_t seed, std::uint64_t tag);

  std::uint64_t next() { return engine_(); }
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  std::uint64_t uniform_int(std::uint64_t n);
  double normal();

  /// Fisher-Yates shuffle of [0, n).
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::mt19937_64 engine_;
};

/// Purpose tags for derived streams.
namespace stream {
inline constexpr std::uint64_t kInit = 1;
inline constexpr std::uint64_t kSplit = 2;
inline constexpr std::uint64_t kSourceBatches = 3;
inline constexpr std::uint64_t kAdaptBatches = 4;
inline constexpr std::uint64_t kData = 5;
inline constexpr std::uint64_t kToy = 6;
}  // namespace stream

}  // namespace sfda
