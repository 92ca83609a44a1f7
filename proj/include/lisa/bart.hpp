#pragma once

#include <array>
#include <boost/math/special_functions/gamma.hpp>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

#include "lisa/config.hpp"
#include "lisa/dataset.hpp"
#include "lisa/rng.hpp"
#include "lisa/tree.hpp"

namespace lisa {

// ============================================================================
// Shard-local data
// ============================================================================

/// Dense copy of the rows a chain works on. A chain owns its ShardData; it is
/// never shared between chains.
struct ShardData {
  Matrix x;
  std::vector<double> y;

  std::size_t n() const { return x.rows; }
  std::size_t p() const { return x.cols; }

  static ShardData from_shard(const Shard& shard) {
    const Dataset& d = *shard.parent;
    ShardData s;
    s.x = Matrix(shard.size(), d.p());
    s.y.resize(shard.size());
    for (std::size_t i = 0; i < shard.size(); ++i) {
      const std::size_t r = shard.indices[i];
      for (std::size_t j = 0; j < d.p(); ++j) s.x.at(i, j) = d.x.at(r, j);
      s.y[i] = d.y[r];
    }
    return s;
  }

  static ShardData from_dataset(const Dataset& d) {
    ShardData s;
    s.x = d.x;
    s.y = d.y;
    return s;
  }
};

// ============================================================================
// Forest state
// ============================================================================

struct Forest {
  std::vector<DecisionTree> trees;
  double sigma2 = 1.0;
  std::size_t n_predictors = 0;

  std::int64_t total_leaves() const {
    std::int64_t c = 0;
    for (const auto& t : trees) c += static_cast<std::int64_t>(t.n_leaves());
    return c;
  }

  std::int64_t total_nodes() const {
    std::int64_t c = 0;
    for (const auto& t : trees) c += static_cast<std::int64_t>(t.n_nodes());
    return c;
  }

  /// Sum of per-tree leaf means along the routing path of x.
  double predict(std::span<const double> x) const {
    if (x.size() != n_predictors)
      throw std::invalid_argument("forest: predictor dimension mismatch");
    double s = 0.0;
    for (const auto& t : trees) s += t.predict(x);
    return s;
  }
};

/// m stumps at ybar/m, sigma^2 at the sample variance of y.
inline Forest make_initial_forest(const ShardData& data, int m) {
  if (m < 1) throw std::invalid_argument("forest: m must be >= 1");
  double mean = 0.0;
  for (double v : data.y) mean += v;
  mean /= static_cast<double>(data.y.size());
  double var = 1.0;
  if (data.y.size() > 1) {
    double ss = 0.0;
    for (double v : data.y) ss += (v - mean) * (v - mean);
    var = ss / static_cast<double>(data.y.size() - 1);
    if (!(var > 0.0)) var = 1.0;
  }
  Forest f;
  f.n_predictors = data.p();
  f.sigma2 = var;
  f.trees.assign(static_cast<std::size_t>(m),
                 DecisionTree::stump(mean / static_cast<double>(m)));
  return f;
}

// ============================================================================
// Hyperparameter calibration
// ============================================================================

struct CalibrationResult {
  double mu_mu = 0.0;
  double sigma_mu = 0.0;
  double lambda = 0.0;
};

/// Solve the leaf-prior range equations
///   m mu_mu - k sqrt(m) sigma_mu = y_min
///   m mu_mu + k sqrt(m) sigma_mu = y_max
/// and pick lambda so that P(sigma < sigma_hat) = q under
/// sigma^2 ~ Inv-Gamma(nu/2, nu lambda / 2), with sigma_hat the sample
/// standard deviation of y. The quantile equation reads
/// Q(nu/2, nu lambda / (2 sigma_hat^2)) = q in the regularized upper
/// incomplete gamma, which is monotone in lambda.
inline CalibrationResult calibrate_hyperparams(std::span<const double> y,
                                               int m, double k, double nu,
                                               double q) {
  if (y.size() < 2)
    throw std::invalid_argument("calibrate: need at least two observations");
  if (m < 1 || !(k > 0.0) || !(nu > 0.0) || !(q > 0.0 && q < 1.0))
    throw std::invalid_argument("calibrate: bad hyperparameter inputs");
  double ymin = y[0], ymax = y[0], mean = 0.0;
  for (double v : y) {
    ymin = std::min(ymin, v);
    ymax = std::max(ymax, v);
    mean += v;
  }
  mean /= static_cast<double>(y.size());
  if (!(ymax > ymin))
    throw std::invalid_argument("calibrate: constant response");
  double ss = 0.0;
  for (double v : y) ss += (v - mean) * (v - mean);
  const double sigma_hat2 = ss / static_cast<double>(y.size() - 1);
  if (!(sigma_hat2 > 0.0))
    throw std::invalid_argument("calibrate: zero response variance");

  CalibrationResult out;
  const double md = static_cast<double>(m);
  out.mu_mu = (ymin + ymax) / (2.0 * md);
  out.sigma_mu = (ymax - ymin) / (2.0 * k * std::sqrt(md));
  const double x = boost::math::gamma_q_inv(nu / 2.0, q);
  out.lambda = 2.0 * sigma_hat2 * x / nu;
  return out;
}

inline BartHyper calibrated_hyper(BartHyper base, std::span<const double> y) {
  const CalibrationResult c =
      calibrate_hyperparams(y, base.m, base.k, base.nu, base.q);
  base.mu_mu = c.mu_mu;
  base.sigma_mu = c.sigma_mu;
  base.lambda = c.lambda;
  return base;
}

// ============================================================================
// Conditionals
// ============================================================================

struct Sigma2Params {
  double shape = 0.0;
  double scale = 0.0;
};

/// Parameters of the sigma^2 full conditional under likelihood exponent kappa
/// and prior exponent prior_temper:
///   shape = prior_temper (nu/2 + 1) - 1 + kappa n / 2
///   scale = prior_temper nu lambda / 2 + kappa ssr / 2
/// At kappa = prior_temper = 1 these are exactly the single-machine
/// Inv-Gamma((nu + n)/2, (ssr + lambda nu)/2).
inline Sigma2Params sigma2_conditional(double ssr, std::int64_t n, double nu,
                                       double lambda, double kappa,
                                       double prior_temper) {
  if (ssr < 0.0) throw std::invalid_argument("sigma2: negative ssr");
  Sigma2Params p;
  p.shape = prior_temper * (nu / 2.0 + 1.0) - 1.0 +
            kappa * static_cast<double>(n) / 2.0;
  p.scale = prior_temper * nu * lambda / 2.0 + kappa * ssr / 2.0;
  if (!(p.shape > 0.0) || !(p.scale > 0.0))
    throw std::invalid_argument(
        "sigma2: tempering gives a degenerate Inv-Gamma (shape or scale <= 0)");
  return p;
}

inline double sample_sigma2(double ssr, std::int64_t n, double nu,
                            double lambda, double kappa, double prior_temper,
                            RngStream& rng) {
  const Sigma2Params p = sigma2_conditional(ssr, n, nu, lambda, kappa, prior_temper);
  return rng.inv_gamma(p.shape, p.scale);
}

/// Per-leaf counts and residual sums.
struct NodeSuffStats {
  std::int64_t n = 0;
  double sum_r = 0.0;
  double sum_r2 = 0.0;
};

/// Accumulate residual statistics over a row subset, optionally shifted so the
/// sums are taken around the leaf-prior mean.
inline NodeSuffStats collect_stats(const std::vector<int>& rows,
                                   std::span<const double> resid,
                                   double shift = 0.0) {
  NodeSuffStats s;
  s.n = static_cast<std::int64_t>(rows.size());
  for (int r : rows) {
    const double v = resid[static_cast<std::size_t>(r)] - shift;
    s.sum_r += v;
    s.sum_r2 += v * v;
  }
  return s;
}

struct LeafMeanParams {
  double mean = 0.0;
  double var = 0.0;
};

/// Posterior of one leaf mean. Under inflation kappa the observation count and
/// residual sum enter multiplied by kappa; the modLISA substitution
/// sigma~^2 = kappa sigma^2 then cancels kappa exactly, so everything reduces
/// to the single-machine form evaluated at the effective residual variance.
/// Prior tempering widens the leaf prior to sigma_mu^2 / prior_temper.
inline LeafMeanParams leaf_mean_params(const NodeSuffStats& raw, double sigma2,
                                       const BartHyper& hyper,
                                       const InflationSpec& inflation) {
  if (raw.n <= 0)
    throw std::logic_error("leaf update reached an empty terminal node");
  const double s2 = effective_resid_var(sigma2, inflation);
  const double ratio =
      s2 / effective_leaf_prior_var(hyper.sigma_mu2(), inflation);
  const double nd = static_cast<double>(raw.n);
  LeafMeanParams p;
  p.mean = (ratio * hyper.mu_mu + raw.sum_r) / (ratio + nd);
  p.var = s2 / (ratio + nd);
  return p;
}

/// Redraw every terminal-node mean of one tree.
inline void sample_leaf_means(DecisionTree& tree, const NodeRows& nr,
                              std::span<const double> resid, double sigma2,
                              const BartHyper& hyper,
                              const InflationSpec& inflation, RngStream& rng) {
  for (int leaf : tree.leaves()) {
    const NodeSuffStats raw =
        collect_stats(nr.rows[static_cast<std::size_t>(leaf)], resid);
    const LeafMeanParams p = leaf_mean_params(raw, sigma2, hyper, inflation);
    tree.set_mu(leaf, rng.normal(p.mean, std::sqrt(p.var)));
  }
}

// ============================================================================
// Integrated tree likelihood
// ============================================================================

namespace detail {

/// Data-dependent part of the log marginal of one leaf after integrating its
/// mean against N(0, sigma_mu^2): the terms that survive in move ratios.
/// Stats must be centered at the leaf-prior mean. Evaluated in extended
/// precision: move ratios subtract these terms and the cancellation otherwise
/// eats into the tolerance the two algebraic routes are held to.
inline long double leaf_marginal_core_l(const NodeSuffStats& c, long double s2,
                                        long double sigma_mu2) {
  const auto nd = static_cast<long double>(c.n);
  const auto s = static_cast<long double>(c.sum_r);
  return -0.5L * std::log1p(nd * sigma_mu2 / s2) +
         sigma_mu2 * s * s / (2.0L * s2 * (s2 + nd * sigma_mu2));
}

inline double leaf_marginal_core(const NodeSuffStats& c, double s2,
                                 double sigma_mu2) {
  return static_cast<double>(leaf_marginal_core_l(
      c, static_cast<long double>(s2), static_cast<long double>(sigma_mu2)));
}

}  // namespace detail

/// Full log marginal likelihood of one leaf's centered residuals at effective
/// residual variance s2.
inline double leaf_log_marginal(const NodeSuffStats& centered, double s2,
                                double sigma_mu2) {
  const double nd = static_cast<double>(centered.n);
  return -0.5 * nd * std::log(2.0 * std::numbers::pi * s2) -
         centered.sum_r2 / (2.0 * s2) +
         detail::leaf_marginal_core(centered, s2, sigma_mu2);
}

/// Log of the per-leaf constant separating the literal tempered leaf prior
/// [N(mu_mu, sigma_mu^2)]^temper from the proper normal N(mu_mu,
/// sigma_mu^2/temper). The product-of-sub-posteriors identity behind prior
/// tempering needs the literal power, so a move that adds or removes a
/// terminal node picks up this constant once per leaf.
inline double leaf_prior_temper_log_const(double sigma_mu2, double temper) {
  if (temper == 1.0) return 0.0;
  return 0.5 * std::log(2.0 * std::numbers::pi * sigma_mu2 / temper) -
         0.5 * temper * std::log(2.0 * std::numbers::pi * sigma_mu2);
}

/// Log likelihood ratio of a GROW proposal splitting a node into two children,
/// with the likelihood raised to the power kappa. Factoring kappa into an
/// effective residual variance sigma^2/kappa makes this identical to the
/// single-machine ratio, which kappa = 1 reproduces. PRUNE is the negation
/// with parent and children exchanged. Stats must be centered at the
/// leaf-prior mean; left and right must partition the parent.
inline double grow_likelihood_log_ratio(const NodeSuffStats& parent,
                                        const NodeSuffStats& left,
                                        const NodeSuffStats& right,
                                        double sigma2, double sigma_mu2,
                                        double kappa) {
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("grow ratio: sigma2 must be positive");
  if (!(kappa > 0.0))
    throw std::invalid_argument("grow ratio: kappa must be positive");
  if (left.n + right.n != parent.n)
    throw std::invalid_argument("grow ratio: children do not partition parent");
  const long double s2 =
      static_cast<long double>(sigma2) / static_cast<long double>(kappa);
  const auto smu2 = static_cast<long double>(sigma_mu2);
  return static_cast<double>(detail::leaf_marginal_core_l(left, s2, smu2) +
                             detail::leaf_marginal_core_l(right, s2, smu2) -
                             detail::leaf_marginal_core_l(parent, s2, smu2));
}

// ============================================================================
// Partial residuals
// ============================================================================

/// R_j = y minus the predictions of every tree except tree j.
inline std::vector<double> compute_partial_residual(const Forest& forest,
                                                    std::size_t j,
                                                    const ShardData& data) {
  std::vector<double> r(data.y.begin(), data.y.end());
  for (std::size_t k = 0; k < forest.trees.size(); ++k) {
    if (k == j) continue;
    const DecisionTree& t = forest.trees[k];
    for (std::size_t i = 0; i < data.n(); ++i) r[i] -= t.predict(data.x.row(i));
  }
  return r;
}

// ============================================================================
// Metropolis-Hastings tree moves
// ============================================================================

struct Proposal {
  MoveKind kind = MoveKind::kGrow;
  bool feasible = false;
  int node = -1;       // grow: leaf to split; prune/change: interior node; swap: parent
  int node2 = -1;      // swap: child
  int var = -1;        // grow/change: proposed split variable
  double value = 0.0;  // grow/change: proposed split value
};

/// Draw a move kind from move_probs and its uniform details: GROW picks a
/// terminal node, a variable, and a candidate value observed at that node;
/// PRUNE and CHANGE pick among interior nodes with two terminal children;
/// SWAP picks a parent-child pair of interior nodes. Structurally impossible
/// picks come back infeasible and count as MH rejections.
inline Proposal propose_move(const DecisionTree& tree, const Matrix& x,
                             const NodeRows& nr, const MoveProbs& probs,
                             RngStream& rng) {
  Proposal prop;
  const double u = rng.uniform();
  if (u < probs.grow)
    prop.kind = MoveKind::kGrow;
  else if (u < probs.grow + probs.prune)
    prop.kind = MoveKind::kPrune;
  else if (u < probs.grow + probs.prune + probs.change)
    prop.kind = MoveKind::kChange;
  else
    prop.kind = MoveKind::kSwap;

  switch (prop.kind) {
    case MoveKind::kGrow: {
      const auto leaves = tree.leaves();
      prop.node = leaves[rng.uniform_index(leaves.size())];
      prop.var = static_cast<int>(rng.uniform_index(x.cols));
      const auto cand = split_candidates(
          x, nr.rows[static_cast<std::size_t>(prop.node)], prop.var);
      prop.value = cand[rng.uniform_index(cand.size())];
      prop.feasible = true;
      break;
    }
    case MoveKind::kPrune: {
      const auto candidates = tree.prunable();
      if (candidates.empty()) break;
      prop.node = candidates[rng.uniform_index(candidates.size())];
      prop.feasible = true;
      break;
    }
    case MoveKind::kChange: {
      const auto candidates = tree.prunable();
      if (candidates.empty()) break;
      prop.node = candidates[rng.uniform_index(candidates.size())];
      prop.var = static_cast<int>(rng.uniform_index(x.cols));
      const auto cand = split_candidates(
          x, nr.rows[static_cast<std::size_t>(prop.node)], prop.var);
      prop.value = cand[rng.uniform_index(cand.size())];
      prop.feasible = true;
      break;
    }
    case MoveKind::kSwap: {
      const auto pairs = tree.swappable();
      if (pairs.empty()) break;
      const auto pick = pairs[rng.uniform_index(pairs.size())];
      prop.node = pick.first;
      prop.node2 = pick.second;
      prop.feasible = true;
      break;
    }
  }
  return prop;
}

struct MoveCounters {
  std::array<std::uint64_t, 4> proposed{};
  std::array<std::uint64_t, 4> accepted{};

  void note(MoveKind k, bool was_accepted) {
    proposed[static_cast<std::size_t>(k)] += 1;
    if (was_accepted) accepted[static_cast<std::size_t>(k)] += 1;
  }
};

struct MhOutcome {
  bool accepted = false;
  Proposal proposal;
};

namespace detail {

/// Log of the depth and rule-choice prior terms a GROW at `node` adds:
/// log alpha(1+d)^-b + 2 log(1 - alpha(2+d)^-b) - log(1 - alpha(1+d)^-b)
/// - log p - log n_candidates.
inline double grow_structure_log_ratio(double depth, double p_vars,
                                       double n_cand, double alpha,
                                       double beta_depth) {
  const double p_split = alpha * std::pow(1.0 + depth, -beta_depth);
  const double p_split_child = alpha * std::pow(2.0 + depth, -beta_depth);
  return std::log(p_split) + 2.0 * std::log1p(-p_split_child) -
         std::log1p(-p_split) - std::log(p_vars) - std::log(n_cand);
}

inline void partition_rows(const Matrix& x, const std::vector<int>& rows,
                           int var, double value, std::vector<int>& lrows,
                           std::vector<int>& rrows) {
  lrows.clear();
  rrows.clear();
  for (int r : rows) {
    if (x.at(static_cast<std::size_t>(r), static_cast<std::size_t>(var)) <=
        value)
      lrows.push_back(r);
    else
      rrows.push_back(r);
  }
}

/// Leaves in the subtree rooted at `node`.
inline std::vector<int> subtree_leaves(const DecisionTree& tree, int node) {
  std::vector<int> out;
  std::vector<int> stack{node};
  while (!stack.empty()) {
    const int id = stack.back();
    stack.pop_back();
    if (tree.is_leaf(id)) {
      out.push_back(id);
      continue;
    }
    stack.push_back(tree.node(id).left);
    stack.push_back(tree.node(id).right);
  }
  return out;
}

}  // namespace detail

struct ProposalEval {
  bool feasible = false;
  double log_accept = -std::numeric_limits<double>::infinity();
  DecisionTree candidate;
};

/// Log acceptance probability of a concrete proposal:
///   log transition ratio + log likelihood ratio + temper * log structure ratio.
/// The likelihood ratio sees the effective residual variance (sigma~^2 =
/// kappa sigma^2 under the modLISA adjustment) and the tempered leaf prior
/// variance sigma_mu^2 / temper; the temper exponent itself multiplies the
/// tree-structure ratio. Returns infeasible for proposals that would create
/// an empty leaf or have no prior support.
inline ProposalEval evaluate_proposal(const DecisionTree& tree,
                                      const NodeRows& nr,
                                      const ShardData& data,
                                      std::span<const double> resid,
                                      double sigma2, const BartHyper& hyper,
                                      const InflationSpec& inflation,
                                      const Proposal& prop) {
  const double s2 = effective_resid_var(sigma2, inflation);
  const double kappa_eff = 1.0;  // already folded into s2
  const double sigma_mu2 =
      effective_leaf_prior_var(hyper.sigma_mu2(), inflation);
  const double leaf_const =
      leaf_prior_temper_log_const(hyper.sigma_mu2(), inflation.prior_temper);
  const double p_vars = static_cast<double>(data.p());
  const double temper = inflation.prior_temper;

  ProposalEval out;
  if (!prop.feasible) return out;
  double log_accept = -std::numeric_limits<double>::infinity();
  DecisionTree candidate;

  switch (prop.kind) {
    case MoveKind::kGrow: {
      const auto& rows = nr.rows[static_cast<std::size_t>(prop.node)];
      std::vector<int> lrows, rrows;
      detail::partition_rows(data.x, rows, prop.var, prop.value, lrows, rrows);
      if (lrows.empty() || rrows.empty()) return out;  // no empty leaves

      const NodeSuffStats parent = collect_stats(rows, resid, hyper.mu_mu);
      const NodeSuffStats left = collect_stats(lrows, resid, hyper.mu_mu);
      const NodeSuffStats right = collect_stats(rrows, resid, hyper.mu_mu);
      const double log_lik =
          grow_likelihood_log_ratio(parent, left, right, s2, sigma_mu2, kappa_eff);

      const double depth = static_cast<double>(tree.depth(prop.node));
      const double n_cand = static_cast<double>(
          split_candidates(data.x, rows, prop.var).size());
      const double log_struct = detail::grow_structure_log_ratio(
          depth, p_vars, n_cand, hyper.alpha, hyper.beta_depth);

      candidate = tree;
      candidate.grow(prop.node, prop.var, prop.value);
      const double n_prunable_new =
          static_cast<double>(candidate.prunable().size());
      const double log_trans =
          std::log(hyper.move_probs.prune) +
          std::log(static_cast<double>(tree.n_leaves())) + std::log(p_vars) +
          std::log(n_cand) - std::log(hyper.move_probs.grow) -
          std::log(n_prunable_new);

      log_accept = log_trans + log_lik + temper * log_struct;
      break;
    }
    case MoveKind::kPrune: {
      const TreeNode& nd = tree.node(prop.node);
      const auto& rows = nr.rows[static_cast<std::size_t>(prop.node)];
      const NodeSuffStats parent = collect_stats(rows, resid, hyper.mu_mu);
      const NodeSuffStats left = collect_stats(
          nr.rows[static_cast<std::size_t>(nd.left)], resid, hyper.mu_mu);
      const NodeSuffStats right = collect_stats(
          nr.rows[static_cast<std::size_t>(nd.right)], resid, hyper.mu_mu);
      const double log_lik = -grow_likelihood_log_ratio(parent, left, right,
                                                        s2, sigma_mu2, kappa_eff);

      const double depth = static_cast<double>(tree.depth(prop.node));
      const double n_cand = static_cast<double>(
          split_candidates(data.x, rows, nd.split_var).size());
      const double log_struct = -detail::grow_structure_log_ratio(
          depth, p_vars, n_cand, hyper.alpha, hyper.beta_depth);

      const double n_prunable_old = static_cast<double>(tree.prunable().size());
      const double n_leaves_new = static_cast<double>(tree.n_leaves()) - 1.0;
      const double log_trans =
          std::log(hyper.move_probs.grow) - std::log(n_leaves_new) -
          std::log(p_vars) - std::log(n_cand) - std::log(hyper.move_probs.prune) +
          std::log(n_prunable_old);

      candidate = tree;
      candidate.prune(prop.node);
      log_accept = log_trans + log_lik + temper * log_struct;
      break;
    }
    case MoveKind::kChange: {
      const TreeNode& nd = tree.node(prop.node);
      const auto& rows = nr.rows[static_cast<std::size_t>(prop.node)];
      std::vector<int> lrows, rrows;
      detail::partition_rows(data.x, rows, prop.var, prop.value, lrows, rrows);
      if (lrows.empty() || rrows.empty()) return out;

      const NodeSuffStats lnew = collect_stats(lrows, resid, hyper.mu_mu);
      const NodeSuffStats rnew = collect_stats(rrows, resid, hyper.mu_mu);
      const NodeSuffStats lold = collect_stats(
          nr.rows[static_cast<std::size_t>(nd.left)], resid, hyper.mu_mu);
      const NodeSuffStats rold = collect_stats(
          nr.rows[static_cast<std::size_t>(nd.right)], resid, hyper.mu_mu);
      // Paired per-child differences: a redraw of the identical rule must
      // come out as exactly zero.
      const long double s2l = static_cast<long double>(s2);
      const long double smu2 = static_cast<long double>(sigma_mu2);
      const double log_lik = static_cast<double>(
          (detail::leaf_marginal_core_l(lnew, s2l, smu2) -
           detail::leaf_marginal_core_l(lold, s2l, smu2)) +
          (detail::leaf_marginal_core_l(rnew, s2l, smu2) -
           detail::leaf_marginal_core_l(rold, s2l, smu2)));

      const double n_cand_new = static_cast<double>(
          split_candidates(data.x, rows, prop.var).size());
      const double n_cand_old = static_cast<double>(
          split_candidates(data.x, rows, nd.split_var).size());
      // Uniform redraw of the rule: the transition ratio and the rule-choice
      // prior ratio are reciprocal candidate counts.
      const double log_trans = std::log(n_cand_new) - std::log(n_cand_old);
      const double log_struct = std::log(n_cand_old) - std::log(n_cand_new);

      candidate = tree;
      candidate.set_rule(prop.node, prop.var, prop.value);
      log_accept = log_trans + log_lik + temper * log_struct;
      break;
    }
    case MoveKind::kSwap: {
      candidate = tree;
      const TreeNode& par = tree.node(prop.node);
      const TreeNode& child = tree.node(prop.node2);
      candidate.set_rule(prop.node, child.split_var, child.split_value);
      candidate.set_rule(prop.node2, par.split_var, par.split_value);

      const NodeRows nr_new = route_rows(candidate, data.x);
      const auto leaves = detail::subtree_leaves(candidate, prop.node);
      for (int leaf : leaves)
        if (nr_new.rows[static_cast<std::size_t>(leaf)].empty()) return out;

      double log_lik = 0.0;
      for (int leaf : leaves) {
        log_lik += detail::leaf_marginal_core(
            collect_stats(nr_new.rows[static_cast<std::size_t>(leaf)], resid,
                          hyper.mu_mu),
            s2, sigma_mu2);
        log_lik -= detail::leaf_marginal_core(
            collect_stats(nr.rows[static_cast<std::size_t>(leaf)], resid,
                          hyper.mu_mu),
            s2, sigma_mu2);
      }
      // Same pair set both ways, so the transition is symmetric; the rule
      // choice prior changes through the candidate counts below the swap.
      const double log_struct =
          tree_log_prior(candidate, data.x, hyper.alpha, hyper.beta_depth) -
          tree_log_prior(tree, data.x, hyper.alpha, hyper.beta_depth);
      if (!std::isfinite(log_struct)) return out;
      log_accept = log_lik + temper * log_struct;
      break;
    }
  }

  out.feasible = true;
  out.log_accept = log_accept;
  out.candidate = std::move(candidate);
  return out;
}

/// One Metropolis-Hastings update of a single tree given its partial
/// residuals. Infeasible proposals count as rejections. `nr` must match
/// `tree` on entry and is updated when a proposal is accepted.
inline MhOutcome mh_step_tree(DecisionTree& tree, NodeRows& nr,
                              const ShardData& data,
                              std::span<const double> resid, double sigma2,
                              const BartHyper& hyper,
                              const InflationSpec& inflation, RngStream& rng,
                              MoveCounters* counters = nullptr) {
  MhOutcome out;
  out.proposal = propose_move(tree, data.x, nr, hyper.move_probs, rng);
  ProposalEval eval = evaluate_proposal(tree, nr, data, resid, sigma2, hyper,
                                        inflation, out.proposal);
  if (!eval.feasible) {
    if (counters) counters->note(out.proposal.kind, false);
    return out;
  }
  const bool accepted = std::log(rng.uniform()) < eval.log_accept;
  if (counters) counters->note(out.proposal.kind, accepted);
  if (accepted) {
    tree = std::move(eval.candidate);
    nr = route_rows(tree, data.x);
    out.accepted = true;
  }
  return out;
}

/// Convenience wrapper matching the per-tree Gibbs block: computes the partial
/// residuals itself and redraws the leaf means afterwards.
inline MhOutcome mh_step_tree(Forest& forest, std::size_t j,
                              const ShardData& data, const BartHyper& hyper,
                              const InflationSpec& inflation, RngStream& rng,
                              MoveCounters* counters = nullptr) {
  const std::vector<double> resid = compute_partial_residual(forest, j, data);
  DecisionTree& tree = forest.trees[j];
  NodeRows nr = route_rows(tree, data.x);
  MhOutcome out = mh_step_tree(tree, nr, data, resid, forest.sigma2, hyper,
                               inflation, rng, counters);
  sample_leaf_means(tree, nr, resid, forest.sigma2, hyper, inflation, rng);
  return out;
}

// ============================================================================
// Gibbs sweep
// ============================================================================

/// One full sweep: draw sigma^2 given all trees, then for each tree compute
/// partial residuals, take one MH tree move, and redraw its leaf means.
/// Deterministic given (state, rng state).
inline Forest& bart_gibbs_iteration(Forest& forest, const ShardData& data,
                                    const BartHyper& hyper,
                                    const InflationSpec& inflation,
                                    RngStream& rng,
                                    MoveCounters* counters = nullptr) {
  const std::size_t n = data.n();
  const std::size_t m = forest.trees.size();

  std::vector<double> fit(n, 0.0);
  std::vector<std::vector<int>> leaf_of(m, std::vector<int>(n));
  for (std::size_t j = 0; j < m; ++j) {
    const DecisionTree& t = forest.trees[j];
    for (std::size_t i = 0; i < n; ++i) {
      const int leaf = t.route(data.x.row(i));
      leaf_of[j][i] = leaf;
      fit[i] += t.node(leaf).mu;
    }
  }

  double ssr = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double e = data.y[i] - fit[i];
    ssr += e * e;
  }
  forest.sigma2 = sample_sigma2(ssr, static_cast<std::int64_t>(n), hyper.nu,
                                hyper.lambda, inflation.kappa,
                                inflation.prior_temper, rng);

  std::vector<double> resid(n);
  for (std::size_t j = 0; j < m; ++j) {
    DecisionTree& tree = forest.trees[j];
    for (std::size_t i = 0; i < n; ++i) {
      const double contrib =
          tree.node(leaf_of[j][static_cast<std::size_t>(i)]).mu;
      resid[i] = data.y[i] - fit[i] + contrib;
      fit[i] -= contrib;  // fit now excludes tree j
    }
    NodeRows nr = route_rows(tree, data.x);
    mh_step_tree(tree, nr, data, resid, forest.sigma2, hyper, inflation, rng,
                 counters);
    sample_leaf_means(tree, nr, resid, forest.sigma2, hyper, inflation, rng);
    for (int leaf : tree.leaves()) {
      const double mu = tree.node(leaf).mu;
      for (int r : nr.rows[static_cast<std::size_t>(leaf)]) {
        leaf_of[j][static_cast<std::size_t>(r)] = leaf;
        fit[static_cast<std::size_t>(r)] += mu;
      }
    }
  }
  return forest;
}

}  // namespace lisa
