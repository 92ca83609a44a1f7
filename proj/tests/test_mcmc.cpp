#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "lisa/bart.hpp"
#include "lisa/generate.hpp"
#include "lisa/rng.hpp"
#include "mcmc_testlib.hpp"

using namespace lisa;
using namespace lisa::testing;

namespace {

/// Fixed design on a small value grid so every node sees few candidate splits.
Matrix grid_design(std::size_t n, std::size_t p, std::size_t n_values,
                   std::uint64_t seed) {
  RngStream rng(seed, streams::kTrainData);
  Matrix x(n, p);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < p; ++j) {
      const double step =
          static_cast<double>(rng.uniform_index(n_values)) + 0.5;
      x.at(i, j) = step / static_cast<double>(n_values);
    }
  return x;
}

struct GewekeStats {
  std::vector<double> sigma2, inv_sigma2, leaves, depth;

  void record(const Forest& f) {
    sigma2.push_back(f.sigma2);
    inv_sigma2.push_back(1.0 / f.sigma2);
    leaves.push_back(static_cast<double>(f.total_leaves()));
    depth.push_back(mean_leaf_depth(f));
  }
};

struct GewekeResult {
  GewekeStats mc;  // marginal-conditional (iid prior draws)
  GewekeStats sc;  // successive-conditional (sampler + data regeneration)
};

GewekeResult run_geweke(std::size_t n, const BartHyper& hyper,
                        std::size_t sweeps, std::uint64_t seed) {
  const Matrix x = grid_design(n, 2, 5, seed);

  GewekeResult out;

  RngStream mc_rng(seed, 1);
  for (std::size_t t = 0; t < sweeps; ++t)
    out.mc.record(sample_prior_forest(x, hyper, mc_rng));

  RngStream sc_rng(seed, 2);
  ShardData data;
  data.x = x;
  data.y.assign(n, 0.0);
  Forest forest = sample_prior_forest(x, hyper, sc_rng);
  sample_response(forest, x, data.y, sc_rng);
  const InflationSpec single{1.0, 1.0, false};
  for (std::size_t t = 0; t < sweeps; ++t) {
    bart_gibbs_iteration(forest, data, hyper, single, sc_rng);
    sample_response(forest, x, data.y, sc_rng);
    out.sc.record(forest);
  }
  return out;
}

void require_moments_match(const std::vector<double>& mc,
                           const std::vector<double>& sc, const char* what,
                           double n_se = 4.0) {
  const double diff = mean_of(mc) - mean_of(sc);
  const double se = std::sqrt(iid_se(mc) * iid_se(mc) + batch_se(sc) * batch_se(sc));
  INFO(what << ": mc=" << mean_of(mc) << " sc=" << mean_of(sc)
            << " diff=" << diff << " se=" << se);
  REQUIRE(std::abs(diff) <= n_se * se);
}

}  // namespace

TEST_CASE("geweke successive-conditional test at n=30, m=3") {
  BartHyper hyper;
  hyper.m = 3;
  hyper.alpha = 0.95;
  hyper.beta_depth = 2.0;
  hyper.nu = 10.0;  // keeps sigma^2 moments finite for the comparison
  hyper.lambda = 1.0;
  hyper.mu_mu = 0.15;
  hyper.sigma_mu = 0.7;

  const auto res = run_geweke(30, hyper, 10000, 2024);
  require_moments_match(res.mc.sigma2, res.sc.sigma2, "sigma2 mean");
  require_moments_match(res.mc.inv_sigma2, res.sc.inv_sigma2, "1/sigma2 mean");
  require_moments_match(res.mc.leaves, res.sc.leaves, "total leaf count");
  require_moments_match(res.mc.depth, res.sc.depth, "mean leaf depth");
}

namespace {

/// Compare a confined m=1 chain against the quadrature oracle for one
/// inflation configuration.
void check_tiny_chain(const InflationSpec& inflation, std::uint64_t seed) {
  // Two predictors on an 8-value grid, a genuine split on x1, n=50.
  const std::size_t n = 50;
  ShardData data;
  data.x = grid_design(n, 2, 8, 77);
  data.y.resize(n);
  RngStream noise(78, streams::kTrainData);
  for (std::size_t i = 0; i < n; ++i)
    data.y[i] = (data.x.at(i, 0) <= 0.4375 ? 0.0 : 2.0) + noise.normal(0.0, 0.8);

  BartHyper hyper;
  hyper.m = 1;
  hyper.alpha = 0.6;
  hyper.beta_depth = 1e9;  // confines the chain to stump + single splits
  hyper.nu = 6.0;
  hyper.lambda = 0.5;
  hyper.mu_mu = 0.1;
  hyper.sigma_mu = 1.2;

  const TinyPosteriorOracle oracle =
      enumerate_tiny_posterior(data, hyper, inflation);

  Forest forest = make_initial_forest(data, 1);
  RngStream rng(seed, 0);
  const std::size_t burn = 5000, keep = 60000;
  std::vector<double> sigma2_draws, stump_draws, leaves_draws;
  sigma2_draws.reserve(keep);
  for (std::size_t it = 0; it < burn + keep; ++it) {
    bart_gibbs_iteration(forest, data, hyper, inflation, rng);
    if (it < burn) continue;
    sigma2_draws.push_back(forest.sigma2);
    stump_draws.push_back(forest.trees[0].n_leaves() == 1 ? 1.0 : 0.0);
    leaves_draws.push_back(static_cast<double>(forest.trees[0].n_leaves()));
    REQUIRE(forest.trees[0].n_leaves() <= 2);  // depth confinement holds
  }

  const double se_sigma2 = batch_se(sigma2_draws, 100);
  const double se_stump = batch_se(stump_draws, 100);
  const double se_leaves = batch_se(leaves_draws, 100);
  INFO("kappa=" << inflation.kappa << " temper=" << inflation.prior_temper);
  INFO("oracle sigma2=" << oracle.mean_sigma2
                        << " chain=" << mean_of(sigma2_draws)
                        << " se=" << se_sigma2);
  INFO("oracle P(stump)=" << oracle.prob_stump
                          << " chain=" << mean_of(stump_draws)
                          << " se=" << se_stump);
  REQUIRE(std::abs(mean_of(sigma2_draws) - oracle.mean_sigma2) <=
          3.0 * se_sigma2 + 1e-3);
  REQUIRE(std::abs(mean_of(stump_draws) - oracle.prob_stump) <=
          3.0 * se_stump + 1e-3);
  REQUIRE(std::abs(mean_of(leaves_draws) - oracle.mean_leaves) <=
          3.0 * se_leaves + 2e-3);
}

}  // namespace

TEST_CASE("tiny single-tree chain matches the exhaustive quadrature oracle") {
  check_tiny_chain(InflationSpec{1.0, 1.0, false}, 79);
}

TEST_CASE("tiny chain under likelihood inflation matches the oracle") {
  check_tiny_chain(InflationSpec{4.0, 1.0, false}, 80);
}

TEST_CASE("tiny chain under prior tempering matches the oracle") {
  check_tiny_chain(InflationSpec{1.0, 0.25, false}, 81);
}

TEST_CASE("single-machine sweep lands in the sanity band on friedman data") {
  RngStream gen(500, streams::kTrainData);
  const auto sim = generate_friedman(500, 1.0, gen);
  const ShardData data = ShardData::from_dataset(sim.data);
  BartHyper hyper = calibrated_hyper(BartHyper{.m = 20}, data.y);
  const InflationSpec single{1.0, 1.0, false};

  Forest forest = make_initial_forest(data, hyper.m);
  RngStream rng(501, 0);
  double sigma2_sum = 0.0;
  int kept = 0;
  for (int it = 0; it < 2000; ++it) {
    bart_gibbs_iteration(forest, data, hyper, single, rng);
    if (it >= 500) {
      sigma2_sum += forest.sigma2;
      ++kept;
    }
  }
  const double post_mean = sigma2_sum / kept;
  REQUIRE(post_mean > 0.6);
  REQUIRE(post_mean < 1.5);
}
