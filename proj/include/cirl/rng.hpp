#pragma once

#include <array>
#include <cstdint>

namespace cirl {

// splitmix64 step: advances `state` and returns the mixed output.
std::uint64_t splitmix64(std::uint64_t& state);

// Combines two 64-bit values into a well-mixed seed for a derived stream.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t salt);

/// xoshiro256** seeded from four splitmix64 outputs.
///
/// Every draw is defined bit-exactly so that a port to another language
/// reproduces the same corpora:
///  - uniform():      (next() >> 11) * 2^-53, in [0, 1)
///  - below(n):       next() % n
///  - gaussian():     Box-Muller on u1 = 1 - uniform(), u2 = uniform();
///                    the cosine branch is returned first, the sine branch
///                    is cached for the following call.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next();
  double uniform();
  std::uint64_t below(std::uint64_t n);
  double gaussian();

 private:
  std::array<std::uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cirl
