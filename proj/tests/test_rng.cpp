#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "lafs/rng.hpp"

using namespace lafs;

TEST_CASE("identical keys replay identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("derived substreams do not consume from the parent") {
  Rng a(7);
  const uint64_t first = Rng(7).next_u64();
  Rng child = a.derived(3);
  (void)child.next_u64();
  CHECK(a.next_u64() == first);
}

TEST_CASE("different tags give different substreams") {
  Rng a(7);
  CHECK(a.derived(1).next_u64() != a.derived(2).next_u64());
}

TEST_CASE("uniform stays in the half-open unit interval with mean near one half") {
  Rng rng(1);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  // std of the mean is 1/sqrt(12 n) ~ 0.0009; allow 4 sigma
  CHECK(std::abs(sum / n - 0.5) < 0.004);
}

TEST_CASE("gaussian moments match a standard normal") {
  Rng rng(2);
  const int n = 100000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.gaussian();
    s1 += g;
    s2 += g * g;
  }
  const double mean = s1 / n;
  const double var = s2 / n - mean * mean;
  CHECK(std::abs(mean) < 0.02);
  CHECK(std::abs(var - 1.0) < 0.03);
}

TEST_CASE("uniform_int covers its range without bias") {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  const int n = 70000;
  for (int i = 0; i < n; ++i) ++counts[rng.uniform_int(7)];
  // each bucket expects 10000 with std ~ sqrt(10000 * 6/7) ~ 93; allow 5 sigma
  for (int c : counts) CHECK(std::abs(c - 10000) < 465);
}

TEST_CASE("shuffle permutes exactly the original elements") {
  Rng rng(9);
  std::vector<int> v = {0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<int> sorted = v;
  rng.shuffle(v);
  std::vector<int> back = v;
  std::sort(back.begin(), back.end());
  CHECK(back == sorted);
}

TEST_CASE("sampling without replacement yields distinct indices in range") {
  Rng rng(12);
  for (int rep = 0; rep < 50; ++rep) {
    auto s = rng.sample_without_replacement(36, 9);
    REQUIRE(s.size() == 9);
    std::sort(s.begin(), s.end());
    CHECK(std::unique(s.begin(), s.end()) == s.end());
    CHECK(s.front() >= 0);
    CHECK(s.back() < 36);
  }
  CHECK_THROWS_AS(rng.sample_without_replacement(5, 6), std::invalid_argument);
}

TEST_CASE("sampling without replacement is marginally uniform") {
  Rng rng(13);
  const int n = 14, k = 5, reps = 10000;
  std::vector<int> counts(n, 0);
  for (int r = 0; r < reps; ++r)
    for (int idx : rng.sample_without_replacement(n, k)) ++counts[idx];
  // each index appears with probability k/n; expect 10000 * 5/14 ~ 3571
  const double expect = static_cast<double>(reps) * k / n;
  const double sigma = std::sqrt(expect * (1.0 - static_cast<double>(k) / n));
  for (int c : counts) CHECK(std::abs(c - expect) < 5.0 * sigma);
}
