#ifndef LQIQ_RNG_HPP_
#define LQIQ_RNG_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <vector>

namespace lqiq {

// Deterministic random source.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the C++
// standard. The distributions are implemented here rather than taken from
// <random> because the standard leaves those implementation-defined.
// uniform() and uniform_int() are bit-identical on every platform; normal()
// goes through std::log/std::sqrt/std::cos and is only guaranteed to be
// reproducible on the same libm.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  // Independent generator for a named sub-stream of `seed`. Used so that
  // dropout, shuffling and tau draws do not perturb each other.
  static Rng stream(std::uint64_t seed, std::uint64_t stream_id);

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, bound). Rejection sampling, no modulo bias.
  std::uint64_t uniform_int(std::uint64_t bound);

  // Standard normal via Box-Muller.
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Fisher-Yates permutation of 0..n-1.
  std::vector<std::size_t> permutation(std::size_t n);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer; used to derive stream seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace lqiq

#endif  // LQIQ_RNG_HPP_
