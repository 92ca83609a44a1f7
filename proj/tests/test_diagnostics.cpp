#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "lisa/diagnostics.hpp"
#include "lisa/rng.hpp"

using namespace lisa;

TEST_CASE("rmse arithmetic and properties") {
  const std::vector<double> a{0.0, 0.0};
  REQUIRE(rmse(a, a) == 0.0);
  REQUIRE(rmse(a, std::vector<double>{3.0, 4.0}) ==
          Catch::Approx(std::sqrt(25.0 / 2.0)));
  REQUIRE_THROWS_AS(rmse(a, std::vector<double>{1.0}), std::invalid_argument);

  // triangle-style bound rmse(a,c) <= rmse(a,b) + rmse(b,c)
  RngStream rng(1, 0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> x(17), y(17), z(17);
    for (int i = 0; i < 17; ++i) {
      x[i] = rng.normal();
      y[i] = rng.normal();
      z[i] = rng.normal();
    }
    REQUIRE(rmse(x, z) <= rmse(x, y) + rmse(y, z) + 1e-12);
  }
}

TEST_CASE("ecdf is a right-continuous step function on [0,1]") {
  const Ecdf f(std::vector<double>{1.0, 2.0, 2.0, 4.0});
  REQUIRE(f(0.5) == 0.0);
  REQUIRE(f(1.0) == 0.25);
  REQUIRE(f(2.0) == 0.75);
  REQUIRE(f(3.9) == 0.75);
  REQUIRE(f(4.0) == 1.0);
  REQUIRE(f(9.0) == 1.0);
}

TEST_CASE("cvm distance basics") {
  const Ecdf f(std::vector<double>{1.0, 2.0, 3.0});
  REQUIRE(cvm_distance(f, f) == 0.0);

  // All mass at 0 vs all mass at 1: difference 1 on the interior grid.
  const Ecdf zero(std::vector<double>(100, 0.0));
  const Ecdf one(std::vector<double>(100, 1.0));
  REQUIRE(cvm_distance(zero, one) == Catch::Approx(1.0).epsilon(0.01));

  // symmetric and bounded
  RngStream rng(2, 0);
  std::vector<double> a(50), b(80);
  for (auto& v : a) v = rng.normal();
  for (auto& v : b) v = rng.normal(1.0, 2.0);
  const Ecdf fa(a), fb(b);
  REQUIRE(cvm_distance(fa, fb) == cvm_distance(fb, fa));
  REQUIRE(cvm_distance(fa, fb) >= 0.0);
  REQUIRE(cvm_distance(fa, fb) <= 1.0);
}

TEST_CASE("equal-tailed interval uses linear interpolation quantiles") {
  std::vector<double> draws{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const Interval ci = quantile_interval(draws, 0.5);
  REQUIRE(ci.lower == Catch::Approx(3.25));
  REQUIRE(ci.upper == Catch::Approx(7.75));
  REQUIRE(ci.lower <= ci.upper);
}

TEST_CASE("credible coverage counts points inside their intervals") {
  const std::size_t points = 10, draws = 500;
  Matrix d(draws, points);
  RngStream rng(3, 0);
  std::vector<double> truth(points, 0.0);
  for (std::size_t s = 0; s < draws; ++s)
    for (std::size_t i = 0; i < points; ++i) d.at(s, i) = rng.normal();

  SECTION("draws equal to truth cover everything") {
    Matrix exact(draws, points);
    for (std::size_t s = 0; s < draws; ++s)
      for (std::size_t i = 0; i < points; ++i) exact.at(s, i) = truth[i];
    // Degenerate draws: intervals are single points at the truth.
    REQUIRE(ci_coverage(truth, exact, 0.95) == 1.0);
  }

  SECTION("truth far outside gives zero") {
    std::vector<double> far(points, 1e6);
    REQUIRE(ci_coverage(far, d, 0.95) == 0.0);
  }

  SECTION("coverage is invariant under a common permutation") {
    Matrix shuffled = d;
    std::vector<double> truth2(points);
    std::vector<std::size_t> perm(points);
    for (std::size_t i = 0; i < points; ++i) perm[i] = (i * 7 + 3) % points;
    for (std::size_t i = 0; i < points; ++i) {
      truth2[i] = truth[perm[i]];
      for (std::size_t s = 0; s < draws; ++s)
        shuffled.at(s, i) = d.at(s, perm[i]);
    }
    REQUIRE(ci_coverage(truth, d, 0.9) == ci_coverage(truth2, shuffled, 0.9));
  }
}

TEST_CASE("prediction-interval coverage self-consistency") {
  // Draws from the true generative model must give close-to-nominal coverage.
  const std::size_t points = 20, draws = 10000;
  const double sigma2 = 4.0;
  RngStream rng(4, 0);
  std::vector<double> truth(points);
  for (auto& t : truth) t = rng.uniform(-5.0, 5.0);
  Matrix fhat(draws, points);
  std::vector<double> s2_draws(draws, sigma2);
  for (std::size_t s = 0; s < draws; ++s)
    for (std::size_t i = 0; i < points; ++i) fhat.at(s, i) = truth[i];

  RngStream prng(5, streams::kPredictive);
  const double cov = pi_coverage(truth, sigma2, fhat, s2_draws, 0.95, 1000, prng);
  // 3 MC-SE with n_rep * points effective samples is well inside one percent.
  REQUIRE(cov == Catch::Approx(0.95).margin(0.01));
}

TEST_CASE("prediction-interval coverage degenerate cases") {
  const std::size_t points = 5, draws = 100;
  std::vector<double> truth(points, 0.0);
  Matrix fhat(draws, points);
  RngStream rng(6, 0);
  for (std::size_t s = 0; s < draws; ++s)
    for (std::size_t i = 0; i < points; ++i) fhat.at(s, i) = rng.normal();

  SECTION("huge predictive spread covers everything") {
    std::vector<double> wide(draws, 1e12);
    RngStream prng(7, streams::kPredictive);
    REQUIRE(pi_coverage(truth, 1.0, fhat, wide, 0.95, 200, prng) == 1.0);
  }

  SECTION("zero-width intervals cover nearly nothing") {
    Matrix flat(draws, points);
    std::vector<double> zero(draws, 0.0);
    for (std::size_t s = 0; s < draws; ++s)
      for (std::size_t i = 0; i < points; ++i) flat.at(s, i) = 42.0;
    RngStream prng(8, streams::kPredictive);
    REQUIRE(pi_coverage(truth, 1.0, flat, zero, 0.95, 200, prng) <= 0.01);
  }
}

TEST_CASE("acceptance summary reports rates and undefined kinds") {
  MoveCounters c;
  c.proposed[0] = 100;
  c.accepted[0] = 20;
  c.proposed[1] = 50;
  c.accepted[1] = 50;
  const MoveRates r = acceptance_summary(c);
  REQUIRE(r.grow.has_value());
  REQUIRE(*r.grow == Catch::Approx(0.20));
  REQUIRE(*r.prune == Catch::Approx(1.0));
  REQUIRE_FALSE(r.change.has_value());  // never proposed -> undefined, not 0
  REQUIRE_FALSE(r.swap.has_value());
}

TEST_CASE("speedup formula reproduces the reference arithmetic") {
  REQUIRE(speedup_percent(17.28, 17.28) == 0.0);
  REQUIRE(std::round(speedup_percent(1.81, 17.28)) == 90.0);
  REQUIRE(std::round(speedup_percent(11.99, 17.28)) == 31.0);
  REQUIRE(std::round(speedup_percent(5.04, 17.28)) == 71.0);
  REQUIRE_THROWS_AS(speedup_percent(1.0, 0.0), std::invalid_argument);
}
