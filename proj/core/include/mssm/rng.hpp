#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace mssm {

/// Philox4x32-10 block function (Salmon et al., Random123). Exposed for
/// known-answer tests.
std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> counter,
                                           std::array<std::uint32_t, 2> key);

/// Counter-based random stream.
///
/// Algorithm: the stream is identified by a 64-bit key. Block `i` of the
/// stream is philox4x32_10({lo(i), hi(i), 0, 0}, {lo(key), hi(key)}), and
/// the four 32-bit words of each block are consumed in order. Substreams are
/// derived deterministically from the parent key and a label:
///
///   child_key = splitmix64(parent_key ^ fnv1a64(label))
///   child_key = splitmix64(parent_key ^ splitmix64(index))   (integer labels)
///
/// so a substream never depends on how many values the parent has consumed.
/// Distributions:
///   uniform()      53-bit double in [0, 1) from two words (hi word first)
///   normal()       Box-Muller cosine branch on (1 - u1, u2); one normal per call
///   below(n)       rejection sampling on 64-bit draws, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(splitmix64(seed)) {}

  static Rng from_key(std::uint64_t key) {
    Rng r(0);
    r.key_ = key;
    return r;
  }

  std::uint64_t key() const noexcept { return key_; }

  Rng substream(std::string_view label) const;
  Rng substream(std::uint64_t index) const;

  std::uint32_t next_u32();
  std::uint64_t next_u64();
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n);

  /// k distinct values from [0, n) in draw order (partial Fisher-Yates).
  std::vector<int> sample_without_replacement(int n, int k);

  static std::uint64_t splitmix64(std::uint64_t x);
  static std::uint64_t fnv1a64(std::string_view s);

 private:
  void refill();

  std::uint64_t key_;
  std::uint64_t block_ = 0;
  std::array<std::uint32_t, 4> buf_{};
  int pos_ = 4;
};

}  // namespace mssm
