#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "lisa/config.hpp"
#include "lisa/dataset.hpp"
#include "lisa/rng.hpp"

namespace lisa {

// ============================================================================
// Bernoulli-Beta
// ============================================================================

struct BetaParams {
  double alpha = 1.0;
  double beta = 1.0;
};

struct BernoulliBatch {
  std::int64_t ones = 0;  // S_j
  std::int64_t size = 0;  // n

  void validate() const {
    if (size < 1) throw std::invalid_argument("bernoulli: batch size must be positive");
    if (ones < 0 || ones > size)
      throw std::invalid_argument("bernoulli: ones count out of range");
  }
};

/// Exact sub-posterior Beta parameters for one batch.
///
/// Full (K=1):      Beta(S + a, n - S + b)
/// LISA / modLISA:  Beta(S K + a, (n - S) K + b)   -- inflated likelihood
/// CMC:             Beta(S + (a-1)/K + 1, (n - S) + (b-1)/K + 1) -- tempered prior
inline BetaParams bernoulli_subposterior(Method method,
                                         const BernoulliBatch& batch, int k,
                                         const BetaParams& prior) {
  batch.validate();
  if (!(prior.alpha > 0.0) || !(prior.beta > 0.0))
    throw std::invalid_argument("bernoulli: prior parameters must be positive");
  if (k < 1) throw std::invalid_argument("bernoulli: K must be >= 1");
  if (method == Method::kFull && k != 1)
    throw std::invalid_argument("bernoulli: Full requires K = 1");

  const double s = static_cast<double>(batch.ones);
  const double f = static_cast<double>(batch.size - batch.ones);
  if (k == 1) return {s + prior.alpha, f + prior.beta};

  const double kd = static_cast<double>(k);
  switch (method) {
    case Method::kLisa:
    case Method::kModLisa:
      return {s * kd + prior.alpha, f * kd + prior.beta};
    case Method::kCmc: {
      const double a = s + (prior.alpha - 1.0) / kd + 1.0;
      const double b = f + (prior.beta - 1.0) / kd + 1.0;
      if (!(a > 0.0) || !(b > 0.0))
        throw std::invalid_argument(
            "bernoulli: tempered CMC prior gives an improper Beta");
      return {a, b};
    }
    default:
      throw std::invalid_argument("bernoulli: bad method");
  }
}

inline double beta_variance(const BetaParams& p) {
  if (!(p.alpha > 0.0) || !(p.beta > 0.0))
    throw std::invalid_argument("beta_variance: parameters must be positive");
  const double s = p.alpha + p.beta;
  return p.alpha * p.beta / (s * s * (s + 1.0));
}

// ============================================================================
// Bayesian linear regression under the improper prior p(beta, sigma^2) ~ 1/sigma^2
// ============================================================================

/// Sufficient statistics of a regression design.
struct LinRegMoments {
  Eigen::MatrixXd xtx;
  Eigen::VectorXd xty;
  double yty = 0.0;
  std::int64_t n = 0;

  std::int64_t p() const { return xtx.rows(); }

  static LinRegMoments from_data(const Matrix& x,
                                 std::span<const double> y) {
    if (x.rows != y.size())
      throw std::invalid_argument("linreg: predictor/response size mismatch");
    LinRegMoments m;
    const auto n = static_cast<Eigen::Index>(x.rows);
    const auto p = static_cast<Eigen::Index>(x.cols);
    Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic,
                                   Eigen::RowMajor>>
        xm(x.values.data(), n, p);
    Eigen::Map<const Eigen::VectorXd> yv(y.data(), n);
    m.xtx = xm.transpose() * xm;
    m.xty = xm.transpose() * yv;
    m.yty = yv.squaredNorm();
    m.n = x.rows;
    return m;
  }
};

namespace detail {

/// Cholesky of XtX with a condition estimate in the failure message.
inline Eigen::LLT<Eigen::MatrixXd> checked_llt(const Eigen::MatrixXd& xtx) {
  Eigen::LLT<Eigen::MatrixXd> llt(xtx);
  if (llt.info() != Eigen::Success) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(xtx);
    const double cond =
        svd.singularValues()(0) /
        std::max(svd.singularValues()(svd.singularValues().size() - 1),
                 std::numeric_limits<double>::min());
    throw std::runtime_error(
        "linreg: XtX is singular or not positive definite (condition estimate " +
        std::to_string(cond) + ")");
  }
  return llt;
}

}  // namespace detail

struct LinRegDraws {
  Eigen::MatrixXd beta;        // draws x p
  std::vector<double> sigma2;  // aligned with rows of beta
};

/// Two-block sampler for one batch under the inflated likelihood. The sigma^2
/// conditional is free of beta so the draws are iid pairs:
///
///   sigma^2 ~ Inv-Gamma((N-p)/2, K s_j^2 (n-p)/2),  N = K n
///   beta    ~ N(beta_hat_j, (sigma~^2/K) (Xj'Xj)^-1)
///
/// where sigma~^2 = K sigma^2 when modified (so the beta scale is sigma^2
/// itself) and sigma~^2 = sigma^2 otherwise. The returned sigma^2 sequence is
/// always the unadjusted draw.
inline LinRegDraws linreg_lisa_gibbs(const LinRegMoments& moments, int k,
                                     bool modified, std::size_t iters,
                                     RngStream& rng) {
  if (k < 1) throw std::invalid_argument("linreg: K must be >= 1");
  const auto p = moments.p();
  const double n = static_cast<double>(moments.n);
  const double kd = static_cast<double>(k);
  const double big_n = kd * n;
  if (!(n > static_cast<double>(p)))
    throw std::invalid_argument("linreg: need n > p");

  const auto llt = detail::checked_llt(moments.xtx);
  const Eigen::VectorXd beta_hat = llt.solve(moments.xty);
  const double ssr = std::max(0.0, moments.yty - beta_hat.dot(moments.xty));
  const double s2 = ssr / (n - static_cast<double>(p));

  const double shape = (big_n - static_cast<double>(p)) / 2.0;
  const double scale = kd * s2 * (n - static_cast<double>(p)) / 2.0;

  // beta = beta_hat + scale_factor * U^-1 z with XtX = U'U, so that
  // Cov(beta) = scale_factor^2 (XtX)^-1.
  const Eigen::MatrixXd u = llt.matrixU();

  LinRegDraws out;
  out.beta.resize(static_cast<Eigen::Index>(iters), p);
  out.sigma2.resize(iters);
  Eigen::VectorXd z(p);
  for (std::size_t it = 0; it < iters; ++it) {
    const double sigma2 = rng.inv_gamma(shape, scale);
    const double sd = modified ? std::sqrt(sigma2) : std::sqrt(sigma2 / kd);
    for (Eigen::Index j = 0; j < p; ++j) z(j) = rng.normal();
    out.beta.row(static_cast<Eigen::Index>(it)) =
        (beta_hat + sd * u.triangularView<Eigen::Upper>().solve(z)).transpose();
    out.sigma2[it] = sigma2;
  }
  return out;
}

/// Full-data sampler: the K = 1 case of the batch sampler, bit-exact with it.
inline LinRegDraws linreg_full_gibbs(const LinRegMoments& moments,
                                     std::size_t iters, RngStream& rng) {
  return linreg_lisa_gibbs(moments, 1, false, iters, rng);
}

/// Weighted-average combination: draw s of the output solves
/// (sum_j W_j) beta = sum_j W_j beta_j^(s).
inline Eigen::MatrixXd combine_weighted(
    const std::vector<Eigen::MatrixXd>& per_shard_beta,
    const std::vector<Eigen::MatrixXd>& weights) {
  if (per_shard_beta.empty())
    throw std::invalid_argument("combine_weighted: no draws");
  if (per_shard_beta.size() != weights.size())
    throw std::invalid_argument("combine_weighted: weight count mismatch");
  const Eigen::Index draws = per_shard_beta[0].rows();
  const Eigen::Index p = per_shard_beta[0].cols();
  Eigen::MatrixXd wsum = Eigen::MatrixXd::Zero(p, p);
  for (std::size_t j = 0; j < weights.size(); ++j) {
    if (per_shard_beta[j].rows() != draws || per_shard_beta[j].cols() != p)
      throw std::invalid_argument("combine_weighted: misaligned draw matrices");
    if (weights[j].rows() != p || weights[j].cols() != p)
      throw std::invalid_argument("combine_weighted: bad weight dimensions");
    wsum += weights[j];
  }
  Eigen::LLT<Eigen::MatrixXd> llt(wsum);
  if (llt.info() != Eigen::Success)
    throw std::invalid_argument("combine_weighted: weight sum not positive definite");

  Eigen::MatrixXd combined = Eigen::MatrixXd::Zero(draws, p);
  for (std::size_t j = 0; j < weights.size(); ++j)
    combined += per_shard_beta[j] * weights[j].transpose();
  for (Eigen::Index s = 0; s < draws; ++s)
    combined.row(s) = llt.solve(combined.row(s).transpose()).transpose();
  return combined;
}

// ============================================================================
// Laplace summary (posterior mode and curvature)
// ============================================================================

struct LaplaceSummary {
  Eigen::VectorXd mode;
  Eigen::MatrixXd neg_hessian;
};

struct LaplaceOptions {
  double gradient_tol = 1e-8;
  int max_iterations = 200;
};

/// Locate the mode of a twice-differentiable unimodal log density by Newton
/// ascent with backtracking, then return the negative Hessian from central
/// finite differences. Step size h = eps^(1/3) max(1, |theta_i|) per
/// coordinate. Throws when the ascent fails to converge or the curvature at
/// the terminal point is not positive definite (no interior mode).
inline LaplaceSummary laplace_summary(
    const std::function<double(const Eigen::VectorXd&)>& log_density,
    Eigen::VectorXd start, const LaplaceOptions& opts = {}) {
  const Eigen::Index d = start.size();
  const double eps3 = std::cbrt(std::numeric_limits<double>::epsilon());

  const auto grad_at = [&](const Eigen::VectorXd& theta) {
    Eigen::VectorXd g(d);
    for (Eigen::Index i = 0; i < d; ++i) {
      const double h = eps3 * std::max(1.0, std::abs(theta(i)));
      Eigen::VectorXd up = theta, dn = theta;
      up(i) += h;
      dn(i) -= h;
      g(i) = (log_density(up) - log_density(dn)) / (2.0 * h);
    }
    return g;
  };
  const auto hess_at = [&](const Eigen::VectorXd& theta) {
    Eigen::MatrixXd h(d, d);
    Eigen::VectorXd step(d);
    for (Eigen::Index i = 0; i < d; ++i)
      step(i) = eps3 * std::max(1.0, std::abs(theta(i)));
    const double f0 = log_density(theta);
    for (Eigen::Index i = 0; i < d; ++i) {
      Eigen::VectorXd up = theta, dn = theta;
      up(i) += step(i);
      dn(i) -= step(i);
      h(i, i) = (log_density(up) - 2.0 * f0 + log_density(dn)) / (step(i) * step(i));
      for (Eigen::Index j = i + 1; j < d; ++j) {
        Eigen::VectorXd pp = theta, pm = theta, mp = theta, mm = theta;
        pp(i) += step(i); pp(j) += step(j);
        pm(i) += step(i); pm(j) -= step(j);
        mp(i) -= step(i); mp(j) += step(j);
        mm(i) -= step(i); mm(j) -= step(j);
        h(i, j) = h(j, i) = (log_density(pp) - log_density(pm) -
                             log_density(mp) + log_density(mm)) /
                            (4.0 * step(i) * step(j));
      }
    }
    return h;
  };

  Eigen::VectorXd theta = std::move(start);
  double f = log_density(theta);
  if (!std::isfinite(f))
    throw std::invalid_argument("laplace_summary: log density not finite at start");

  bool converged = false;
  for (int it = 0; it < opts.max_iterations; ++it) {
    const Eigen::VectorXd g = grad_at(theta);
    if (g.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      converged = true;
      break;
    }
    const Eigen::MatrixXd h = hess_at(theta);
    Eigen::VectorXd direction;
    Eigen::LLT<Eigen::MatrixXd> llt(Eigen::MatrixXd(-h));
    if (llt.info() == Eigen::Success) {
      direction = llt.solve(g);
    } else {
      direction = g;  // curvature unusable here, plain ascent
    }
    double step = 1.0;
    bool moved = false;
    for (int half = 0; half < 60; ++half) {
      const Eigen::VectorXd cand = theta + step * direction;
      const double fc = log_density(cand);
      if (std::isfinite(fc) && fc > f) {
        theta = cand;
        f = fc;
        moved = true;
        break;
      }
      step *= 0.5;
    }
    if (!moved) break;  // no ascent direction found; test the gradient below
  }
  if (!converged &&
      grad_at(theta).lpNorm<Eigen::Infinity>() >= opts.gradient_tol)
    throw std::runtime_error(
        "laplace_summary: ascent did not reach the gradient tolerance");

  LaplaceSummary out;
  out.mode = theta;
  out.neg_hessian = -hess_at(theta);
  Eigen::LLT<Eigen::MatrixXd> llt(out.neg_hessian);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error(
        "laplace_summary: curvature at the stationary point is not positive "
        "definite (no interior mode)");
  return out;
}

}  // namespace lisa
