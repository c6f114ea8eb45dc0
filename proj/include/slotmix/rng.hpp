#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace slotmix {

// Deterministic PRNG (xoshiro256** seeded via splitmix64). The standard
// library distributions are implementation-defined, so uniform and gaussian
// draws are generated here to keep runs bit-reproducible across toolchains.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();

  // Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi);

  // Uniform integer in [0, n), n > 0. Rejection sampling, no modulo bias.
  int64_t uniform_int(int64_t n);

  // Standard normal via Box-Muller (cosine branch).
  double gaussian();
  double gaussian(double mean, double stddev);

  std::vector<double> gaussian_vec(size_t n, double mean = 0.0, double stddev = 1.0);
  std::vector<double> uniform_vec(size_t n, double lo, double hi);

  // In-place Fisher-Yates shuffle of indices.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Derived stream for a sub-task (e.g. per-scene seeds from a master seed).
  Rng derive(uint64_t key) const;

 private:
  std::array<uint64_t, 4> s_{};
  uint64_t seed_;
};

// splitmix64 step; also used standalone to combine seeds with stream keys.
uint64_t splitmix64(uint64_t& state);
uint64_t mix_seed(uint64_t seed, uint64_t key);

}  // namespace slotmix
