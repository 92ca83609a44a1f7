#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "lisa/rng.hpp"

using lisa::RngStream;

TEST_CASE("identical (seed, stream) pairs reproduce sequences bit-exactly") {
  RngStream a(42, 7);
  RngStream b(42, 7);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  RngStream c(42, 7);
  RngStream d(42, 7);
  for (int i = 0; i < 100; ++i) {
    REQUIRE(c.uniform() == d.uniform());
    REQUIRE(c.normal() == d.normal());
    REQUIRE(c.gamma(2.5, 1.3) == d.gamma(2.5, 1.3));
  }
}

TEST_CASE("distinct stream ids diverge") {
  RngStream a(42, 0);
  RngStream b(42, 1);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  REQUIRE(same == 0);
}

TEST_CASE("uniform stays inside the open unit interval") {
  RngStream rng(1, 0);
  for (int i = 0; i < 100000; ++i) {
    const double u = rng.uniform();
    REQUIRE(u > 0.0);
    REQUIRE(u < 1.0);
  }
}

TEST_CASE("uniform_index covers its range") {
  RngStream rng(3, 0);
  std::vector<int> counts(7, 0);
  for (int i = 0; i < 70000; ++i) counts[rng.uniform_index(7)]++;
  for (int c : counts) REQUIRE(c > 8000);  // ~10000 each
  REQUIRE_THROWS_AS(rng.uniform_index(0), std::invalid_argument);
}

TEST_CASE("distribution moments match within Monte Carlo error") {
  RngStream rng(99, 5);
  const int n = 200000;

  SECTION("normal") {
    double s = 0.0, s2 = 0.0;
    for (int i = 0; i < n; ++i) {
      const double x = rng.normal();
      s += x;
      s2 += x * x;
    }
    REQUIRE(std::abs(s / n) < 4.0 / std::sqrt(static_cast<double>(n)));
    REQUIRE(s2 / n == Catch::Approx(1.0).margin(0.02));
  }

  SECTION("gamma mean and variance, shape above and below one") {
    for (double shape : {0.4, 3.7}) {
      const double scale = 2.0;
      double s = 0.0, s2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double x = rng.gamma(shape, scale);
        s += x;
        s2 += x * x;
      }
      const double mean = s / n;
      const double var = s2 / n - mean * mean;
      REQUIRE(mean == Catch::Approx(shape * scale).epsilon(0.03));
      REQUIRE(var == Catch::Approx(shape * scale * scale).epsilon(0.08));
    }
  }

  SECTION("inverse gamma mean") {
    // mean = scale / (shape - 1)
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += rng.inv_gamma(5.0, 8.0);
    REQUIRE(s / n == Catch::Approx(2.0).epsilon(0.02));
  }

  SECTION("beta mean") {
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += rng.beta(3.0, 7.0);
    REQUIRE(s / n == Catch::Approx(0.3).epsilon(0.02));
  }
}

TEST_CASE("invalid distribution parameters are rejected") {
  RngStream rng(1, 1);
  REQUIRE_THROWS_AS(rng.gamma(0.0, 1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(rng.gamma(1.0, -1.0), std::invalid_argument);
  REQUIRE_THROWS_AS(rng.inv_gamma(-2.0, 1.0), std::invalid_argument);
}
