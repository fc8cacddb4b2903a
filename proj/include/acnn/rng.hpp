#pragma once

#include <cstdint>

namespace acnn {

// Counter-based generator: draw n of a stream is a pure function of (key, n), where the key
// is derived from the seed and any chain of split() stream ids. Output is identical on every
// platform because only 64-bit integer arithmetic is involved in producing raw draws.
class Rng {
 public:
  explicit Rng(std::uint64_t seed, std::uint64_t stream = 0);

  std::uint64_t next_u64();
  // Uniform on [0, 1) with 53 random bits.
  double uniform();
  // Uniform on [0, n); unbiased.
  std::uint64_t below(std::uint64_t n);
  // Uniform on the closed range [lo, hi].
  int uniform_int(int lo, int hi);
  bool bernoulli(double p) { return uniform() < p; }
  double normal();

  // Independent child stream; does not advance this generator.
  Rng split(std::uint64_t stream) const;

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }

 private:
  Rng(std::uint64_t key, std::uint64_t counter, bool) : key_(key), counter_(counter) {}

  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace acnn
