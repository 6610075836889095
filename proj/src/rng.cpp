#include "lafs/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace lafs {

static constexpr uint64_t kGolden = 0x9E3779B97F4A7C15ull;

uint64_t mix64(uint64_t x) {
  x ^= x >> 33;
  x *= 0xff51afd7ed558ccdull;
  x ^= x >> 33;
  x *= 0xc4ceb9fe1a85ec53ull;
  x ^= x >> 33;
  return x;
}

uint64_t derive_key(uint64_t key, uint64_t tag) { return mix64(key ^ mix64(tag + kGolden)); }

uint64_t Rng::next_u64() {
  ++ctr_;
  return mix64(key_ + kGolden * ctr_);
}

double Rng::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform_in(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::gaussian() {
  // Box-Muller, cosine branch; u1 shifted into (0, 1] so the log is finite.
  const double u1 = (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

uint32_t Rng::uniform_int(uint32_t n) {
  if (n == 0) throw std::invalid_argument("uniform_int: n must be positive");
  const uint64_t bound = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = next_u64();
  while (x >= bound) x = next_u64();
  return static_cast<uint32_t>(x % n);
}

void Rng::shuffle(std::vector<int>& v) {
  for (size_t i = v.size(); i > 1; --i) {
    const uint32_t j = uniform_int(static_cast<uint32_t>(i));
    std::swap(v[i - 1], v[j]);
  }
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  if (k < 0 || k > n)
    throw std::invalid_argument("sample_without_replacement: k=" + std::to_string(k) +
                                " out of range for n=" + std::to_string(n));
  std::vector<int> pool(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) pool[i] = i;
  for (int i = 0; i < k; ++i) {
    const uint32_t j = i + uniform_int(static_cast<uint32_t>(n - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(static_cast<size_t>(k));
  return pool;
}

}  // namespace lafs
