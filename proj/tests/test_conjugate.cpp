#include <Eigen/Dense>
#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "lisa/conjugate.hpp"
#include "lisa/rng.hpp"

using namespace lisa;

namespace {

// Intercept-only moments with mean exactly ybar: y alternates ybar +/- spread.
LinRegMoments intercept_only_moments(std::int64_t n, double ybar,
                                     double spread) {
  LinRegMoments m;
  m.xtx = Eigen::MatrixXd::Constant(1, 1, static_cast<double>(n));
  m.xty = Eigen::VectorXd::Constant(1, static_cast<double>(n) * ybar);
  m.yty = 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double y = ybar + ((i % 2 == 0) ? spread : -spread);
    m.yty += y * y;
  }
  m.n = n;
  return m;
}

double column_variance(const Eigen::MatrixXd& draws, int col) {
  const double mean = draws.col(col).mean();
  return (draws.col(col).array() - mean).square().sum() /
         static_cast<double>(draws.rows() - 1);
}

}  // namespace

TEST_CASE("bernoulli sub-posteriors reproduce the displayed parameters") {
  const BetaParams flat{1.0, 1.0};
  const BernoulliBatch batch{3, 5};

  const BetaParams lisa = bernoulli_subposterior(Method::kLisa, batch, 2, flat);
  REQUIRE(lisa.alpha == 7.0);
  REQUIRE(lisa.beta == 5.0);
  // equal to the full posterior with S=6, N=10
  const BetaParams full =
      bernoulli_subposterior(Method::kFull, {6, 10}, 1, flat);
  REQUIRE(full.alpha == lisa.alpha);
  REQUIRE(full.beta == lisa.beta);

  const BetaParams cmc = bernoulli_subposterior(Method::kCmc, batch, 2, flat);
  REQUIRE(cmc.alpha == 4.0);
  REQUIRE(cmc.beta == 3.0);

  for (Method m : {Method::kFull, Method::kLisa, Method::kModLisa, Method::kCmc}) {
    const BetaParams p = bernoulli_subposterior(m, batch, 1, flat);
    REQUIRE(p.alpha == 4.0);
    REQUIRE(p.beta == 3.0);
  }
}

TEST_CASE("bernoulli input validation") {
  const BetaParams flat{1.0, 1.0};
  REQUIRE_THROWS_AS(bernoulli_subposterior(Method::kFull, {1, 2}, 3, flat),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(bernoulli_subposterior(Method::kLisa, {5, 4}, 2, flat),
                    std::invalid_argument);
  REQUIRE_THROWS_AS(
      bernoulli_subposterior(Method::kCmc, {1, 2}, 2, BetaParams{0.0, 1.0}),
      std::invalid_argument);
  // The CMC temper keeps valid priors proper: a > 0 implies
  // (a-1)/K + 1 > 1 - 1/K >= 0, so even extreme inputs stay legal.
  const BetaParams tiny =
      bernoulli_subposterior(Method::kCmc, {0, 5}, 2, BetaParams{1e-3, 1.0});
  REQUIRE(tiny.alpha > 0.0);
  REQUIRE(tiny.beta > 0.0);
}

TEST_CASE("balanced batches make LISA exactly the full posterior") {
  const BetaParams prior{2.5, 0.5};
  for (int k : {2, 3, 5, 8}) {
    for (int per_batch_n : {4, 10, 25}) {
      for (int per_batch_s = 0; per_batch_s <= per_batch_n; ++per_batch_s) {
        const BernoulliBatch batch{per_batch_s, per_batch_n};
        const BetaParams sub =
            bernoulli_subposterior(Method::kLisa, batch, k, prior);
        const BernoulliBatch whole{per_batch_s * k, per_batch_n * k};
        const BetaParams full =
            bernoulli_subposterior(Method::kFull, whole, 1, prior);
        REQUIRE(sub.alpha == full.alpha);  // zero tolerance
        REQUIRE(sub.beta == full.beta);
      }
    }
  }
}

TEST_CASE("beta variance closed forms") {
  REQUIRE(beta_variance({7, 5}) == Catch::Approx(35.0 / 1872.0).epsilon(1e-12));
  REQUIRE(beta_variance({4, 3}) == Catch::Approx(12.0 / 392.0).epsilon(1e-12));
  REQUIRE(beta_variance({1, 1}) == Catch::Approx(1.0 / 12.0).epsilon(1e-12));
  REQUIRE_THROWS_AS(beta_variance({0.0, 1.0}), std::invalid_argument);
}

TEST_CASE("variance ratio scales like Theorem 1 on balanced Bernoulli data") {
  const BetaParams flat{1.0, 1.0};
  const std::int64_t n = 10000;
  for (int k : {2, 5, 10}) {
    const BernoulliBatch batch{3000, n};
    const BernoulliBatch whole{3000 * k, n * k};
    const double v_full =
        beta_variance(bernoulli_subposterior(Method::kFull, whole, 1, flat));
    const double v_cmc =
        beta_variance(bernoulli_subposterior(Method::kCmc, batch, k, flat));
    const double v_lisa =
        beta_variance(bernoulli_subposterior(Method::kLisa, batch, k, flat));
    REQUIRE(v_cmc / v_full ==
            Catch::Approx(static_cast<double>(k)).epsilon(0.05));
    REQUIRE(v_lisa / v_full == 1.0);  // exact
  }
}

TEST_CASE("full-data gibbs recovers the posterior mean and variance") {
  const std::int64_t n = 100;
  const auto m = intercept_only_moments(n, 2.0, 0.5);
  RngStream rng(42, 0);
  const auto draws = linreg_full_gibbs(m, 200000, rng);

  const double beta_mean = draws.beta.col(0).mean();
  REQUIRE(beta_mean == Catch::Approx(2.0).margin(0.01));

  // Var(beta) = (X'X)^-1 s^2 (N-p)/2 / ((N-p)/2 - 1)
  const double s2 = (m.yty - 4.0 * static_cast<double>(n)) /
                    static_cast<double>(n - 1);
  const double half = static_cast<double>(n - 1) / 2.0;
  const double expected = s2 / static_cast<double>(n) * half / (half - 1.0);
  REQUIRE(column_variance(draws.beta, 0) ==
          Catch::Approx(expected).epsilon(0.05));
}

TEST_CASE("degenerate designs raise") {
  auto m = intercept_only_moments(1, 2.0, 0.0);
  RngStream rng(1, 0);
  REQUIRE_THROWS_AS(linreg_full_gibbs(m, 10, rng), std::invalid_argument);

  LinRegMoments singular;
  singular.xtx = Eigen::MatrixXd::Zero(2, 2);
  singular.xty = Eigen::VectorXd::Zero(2);
  singular.yty = 1.0;
  singular.n = 10;
  REQUIRE_THROWS_WITH(linreg_full_gibbs(singular, 10, rng),
                      Catch::Matchers::ContainsSubstring("condition"));
}

TEST_CASE("K=1 batch sampler is bit-exact with the full sampler") {
  const auto m = intercept_only_moments(50, 1.0, 0.25);
  RngStream r1(9, 0);
  RngStream r2(9, 0);
  const auto full = linreg_full_gibbs(m, 500, r1);
  const auto lisa = linreg_lisa_gibbs(m, 1, false, 500, r2);
  REQUIRE(full.sigma2 == lisa.sigma2);
  REQUIRE(full.beta == lisa.beta);
  RngStream r3(9, 0);
  const auto modified = linreg_lisa_gibbs(m, 1, true, 500, r3);
  REQUIRE(full.beta == modified.beta);
}

TEST_CASE("variance ladder: plain LISA shrinks by K, modLISA matches full") {
  const int k = 5;
  const std::int64_t n_total = 5000;
  const std::int64_t n_shard = n_total / k;
  const std::size_t draws = 20000;

  const auto full_m = intercept_only_moments(n_total, 2.0, 0.5);
  RngStream full_rng(7, 0);
  const auto full = linreg_full_gibbs(full_m, draws, full_rng);
  const double var_full = column_variance(full.beta, 0);

  const auto run_combined = [&](bool modified) {
    std::vector<Eigen::MatrixXd> betas;
    std::vector<Eigen::MatrixXd> weights;
    for (int j = 0; j < k; ++j) {
      const auto mj = intercept_only_moments(n_shard, 2.0, 0.5);
      RngStream rng(7, j + 1);
      betas.push_back(linreg_lisa_gibbs(mj, k, modified, draws, rng).beta);
      weights.push_back(mj.xtx);  // W_j = Xj'Xj; common sigma^2 cancels
    }
    return combine_weighted(betas, weights);
  };

  const auto lisa = run_combined(false);
  const auto mod = run_combined(true);
  const double var_lisa = column_variance(lisa, 0);
  const double var_mod = column_variance(mod, 0);

  REQUIRE(var_lisa / var_full > 0.9 / k);
  REQUIRE(var_lisa / var_full < 1.1 / k);
  REQUIRE(var_mod / var_full > 0.9);
  REQUIRE(var_mod / var_full < 1.1);

  REQUIRE(lisa.col(0).mean() == Catch::Approx(2.0).margin(0.02));
  REQUIRE(mod.col(0).mean() == Catch::Approx(2.0).margin(0.02));
}

TEST_CASE("weighted combination arithmetic") {
  Eigen::MatrixXd b1(1, 1), b2(1, 1);
  b1 << 1.0;
  b2 << 3.0;
  const Eigen::MatrixXd w = Eigen::MatrixXd::Identity(1, 1);
  auto combined = combine_weighted({b1, b2}, {w, w});
  REQUIRE(combined(0, 0) == Catch::Approx(2.0));

  b2 << 4.0;
  combined = combine_weighted({b1, b2}, {2.0 * w, w});
  REQUIRE(combined(0, 0) == Catch::Approx(2.0));  // (2*1 + 1*4)/3

  Eigen::MatrixXd short_draws(2, 1);
  short_draws << 1.0, 2.0;
  REQUIRE_THROWS_AS(combine_weighted({b1, short_draws}, {w, w}),
                    std::invalid_argument);
}

TEST_CASE("combining the per-shard posterior means recovers beta-hat exactly") {
  // With W_j = Xj'Xj, (sum W)^-1 sum W beta_hat_j = (X'X)^-1 X'Y.
  RngStream rng(3, 0);
  const int k = 4;
  const int p = 3;
  std::vector<Eigen::MatrixXd> means, weights;
  Eigen::MatrixXd xtx_total = Eigen::MatrixXd::Zero(p, p);
  Eigen::VectorXd xty_total = Eigen::VectorXd::Zero(p);
  for (int j = 0; j < k; ++j) {
    Eigen::MatrixXd a = Eigen::MatrixXd::Random(20, p);
    Eigen::VectorXd y = Eigen::VectorXd::Random(20);
    const Eigen::MatrixXd xtx = a.transpose() * a;
    const Eigen::VectorXd xty = a.transpose() * y;
    means.push_back((xtx.llt().solve(xty)).transpose());
    weights.push_back(xtx);
    xtx_total += xtx;
    xty_total += xty;
  }
  const Eigen::VectorXd beta_hat = xtx_total.llt().solve(xty_total);
  const auto combined = combine_weighted(means, weights);
  for (int i = 0; i < p; ++i)
    REQUIRE(combined(0, i) == Catch::Approx(beta_hat(i)).margin(1e-10));
}

TEST_CASE("laplace summary finds interior modes") {
  const auto beta75 = [](const Eigen::VectorXd& t) -> double {
    if (t(0) <= 0.0 || t(0) >= 1.0)
      return -std::numeric_limits<double>::infinity();
    return 6.0 * std::log(t(0)) + 4.0 * std::log(1.0 - t(0));
  };
  Eigen::VectorXd start(1);
  start << 0.5;
  const auto s = laplace_summary(beta75, start);
  REQUIRE(s.mode(0) == Catch::Approx(0.6).margin(1e-6));
  REQUIRE(s.neg_hessian(0, 0) ==
          Catch::Approx(6.0 / 0.36 + 4.0 / 0.16).epsilon(1e-3));

  const auto stdnorm = [](const Eigen::VectorXd& t) {
    return -0.5 * t.squaredNorm();
  };
  start << 1.7;
  const auto g = laplace_summary(stdnorm, start);
  REQUIRE(g.mode(0) == Catch::Approx(0.0).margin(1e-6));
  REQUIRE(g.neg_hessian(0, 0) == Catch::Approx(1.0).epsilon(1e-4));
}

TEST_CASE("flat density has no interior mode") {
  const auto flat = [](const Eigen::VectorXd& t) -> double {
    if (t(0) <= 0.0 || t(0) >= 1.0)
      return -std::numeric_limits<double>::infinity();
    return 0.0;
  };
  Eigen::VectorXd start(1);
  start << 0.4;
  REQUIRE_THROWS_AS(laplace_summary(flat, start), std::runtime_error);
}
