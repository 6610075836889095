#pragma once

// Counter-based random numbers with explicit, portable arithmetic.
//
// The core primitive is the 64-bit avalanche mix
//   x ^= x >> 33; x *= 0xff51afd7ed558ccd;
//   x ^= x >> 33; x *= 0xc4ceb9fe1a85ec53;
//   x ^= x >> 33;
// (the MurmurHash3 finalizer). A stream is a (key, counter) pair; the i-th
// raw output is mix64(key + GOLDEN * (counter + 1)) with
// GOLDEN = 0x9E3779B97F4A7C15. Substreams derive fresh keys with
// derive_key(key, tag) = mix64(key ^ mix64(tag + GOLDEN)), so per-step,
// per-view, per-item draws are independent of consumption order elsewhere.
//
// uniform() maps the top 53 bits to [0,1); gaussian() is Box-Muller on two
// uniforms; uniform_int() uses rejection to stay unbiased; shuffle() is
// Fisher-Yates from the top index down.

#include <cstdint>
#include <vector>

namespace lafs {

uint64_t mix64(uint64_t x);
uint64_t derive_key(uint64_t key, uint64_t tag);

class Rng {
 public:
  explicit Rng(uint64_t key) : key_(key) {}

  // Independent substream; does not consume from this stream.
  Rng derived(uint64_t tag) const { return Rng(derive_key(key_, tag)); }

  uint64_t next_u64();
  double uniform();                    // [0, 1)
  double uniform_in(double lo, double hi);
  double gaussian();                   // standard normal
  uint32_t uniform_int(uint32_t n);    // [0, n), unbiased
  void shuffle(std::vector<int>& v);

  // k distinct indices drawn uniformly from [0, n), in draw order.
  std::vector<int> sample_without_replacement(int n, int k);

  uint64_t key() const { return key_; }
  uint64_t counter() const { return ctr_; }

 private:
  uint64_t key_;
  uint64_t ctr_ = 0;
};

}  // namespace lafs
