#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <vector>

#include "rng.hpp"

using mvs::Rng;

TEST_CASE("streams are deterministic and distinct") {
  Rng a = Rng::stream(42, 7);
  Rng b = Rng::stream(42, 7);
  Rng c = Rng::stream(42, 8);
  bool all_equal = true, any_equal_c = false;
  for (int i = 0; i < 100; ++i) {
    const auto va = a.next_u64();
    all_equal = all_equal && va == b.next_u64();
    any_equal_c = any_equal_c || va == c.next_u64();
  }
  CHECK(all_equal);
  CHECK_FALSE(any_equal_c);
}

TEST_CASE("uniform lies in [0,1) with sane mean") {
  Rng rng(123);
  double sum = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::fabs(sum / 100000 - 0.5) < 0.01);
}

TEST_CASE("normal quantile matches reference points") {
  // Reference values for Phi^-1 (15+ digits).
  CHECK(mvs::normal_quantile(0.5) == doctest::Approx(0.0).epsilon(1e-14));
  CHECK(mvs::normal_quantile(0.975) == doctest::Approx(1.959963984540054).epsilon(1e-12));
  CHECK(mvs::normal_quantile(0.025) == doctest::Approx(-1.959963984540054).epsilon(1e-12));
  CHECK(mvs::normal_quantile(0.84134474606854293) == doctest::Approx(1.0).epsilon(1e-10));
  CHECK(mvs::normal_quantile(1e-10) == doctest::Approx(-6.361340902404056).epsilon(1e-9));
}

TEST_CASE("normal draws have unit moments") {
  Rng rng(2024);
  const int n = 200000;
  double m1 = 0.0, m2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    m1 += z;
    m2 += z * z;
  }
  m1 /= n;
  m2 /= n;
  CHECK(std::fabs(m1) < 0.01);
  CHECK(std::fabs(m2 - 1.0) < 0.02);
}

TEST_CASE("bounded covers its range uniformly") {
  Rng rng(5);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) ++counts[rng.bounded(7)];
  for (int c : counts) CHECK(std::fabs(c - 10000.0) < 500.0);
}

TEST_CASE("permutation is uniform over small cases") {
  Rng rng(99);
  std::map<std::vector<int>, int> counts;
  const int draws = 24000;
  for (int i = 0; i < draws; ++i) ++counts[rng.permutation(4)];
  CHECK(counts.size() == 24);
  for (const auto& [perm, count] : counts)
    CHECK(std::fabs(count - 1000.0) < 200.0);
}
