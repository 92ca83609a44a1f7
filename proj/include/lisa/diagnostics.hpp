#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "lisa/bart.hpp"
#include "lisa/dataset.hpp"
#include "lisa/rng.hpp"

namespace lisa {

inline double rmse(std::span<const double> truth,
                   std::span<const double> estimate) {
  if (truth.size() != estimate.size())
    throw std::invalid_argument("rmse: length mismatch");
  if (truth.empty()) throw std::invalid_argument("rmse: empty input");
  double ss = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = truth[i] - estimate[i];
    ss += d * d;
  }
  return std::sqrt(ss / static_cast<double>(truth.size()));
}

/// Type-7 (linear interpolation) quantile of a sorted sample.
inline double quantile_sorted(std::span<const double> sorted, double prob) {
  if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
  if (prob <= 0.0) return sorted.front();
  if (prob >= 1.0) return sorted.back();
  const double h = prob * (static_cast<double>(sorted.size()) - 1.0);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const double frac = h - std::floor(h);
  if (lo + 1 >= sorted.size()) return sorted.back();
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
};

/// Equal-tailed interval from draws at the given coverage level.
inline Interval quantile_interval(std::vector<double> draws, double level) {
  if (draws.size() < 2)
    throw std::invalid_argument("interval: need at least two draws");
  if (!(level > 0.0 && level < 1.0))
    throw std::invalid_argument("interval: level must be in (0,1)");
  std::sort(draws.begin(), draws.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(draws, tail), quantile_sorted(draws, 1.0 - tail)};
}

/// Right-continuous empirical distribution function.
struct Ecdf {
  std::vector<double> sorted;

  explicit Ecdf(std::vector<double> sample) : sorted(std::move(sample)) {
    if (sorted.empty()) throw std::invalid_argument("ecdf: empty sample");
    std::sort(sorted.begin(), sorted.end());
  }

  double operator()(double t) const {
    const auto it = std::upper_bound(sorted.begin(), sorted.end(), t);
    return static_cast<double>(it - sorted.begin()) /
           static_cast<double>(sorted.size());
  }
};

/// Mean squared ECDF difference over an equispaced grid spanning slightly
/// beyond the union of both samples. Symmetric and bounded by 1.
inline double cvm_distance(const Ecdf& f, const Ecdf& g,
                           std::size_t t_points = 1000) {
  if (t_points < 2) throw std::invalid_argument("cvm: need at least 2 grid points");
  const double lo = std::min(f.sorted.front(), g.sorted.front());
  const double hi = std::max(f.sorted.back(), g.sorted.back());
  const double pad = (hi > lo ? hi - lo : 1.0) * 1e-9;
  const double a = lo - pad;
  const double b = hi + pad;
  double acc = 0.0;
  for (std::size_t j = 0; j < t_points; ++j) {
    const double t = a + (b - a) * static_cast<double>(j) /
                             static_cast<double>(t_points - 1);
    const double d = f(t) - g(t);
    acc += d * d;
  }
  return acc / static_cast<double>(t_points);
}

/// Fraction of points whose true value falls inside the equal-tailed credible
/// interval built from that point's draws. `draws` is draws x points.
inline double ci_coverage(std::span<const double> true_f, const Matrix& draws,
                          double level) {
  if (true_f.size() != draws.cols)
    throw std::invalid_argument("ci_coverage: point count mismatch");
  if (draws.rows < 2)
    throw std::invalid_argument("ci_coverage: need at least two draws");
  std::size_t covered = 0;
  std::vector<double> column(draws.rows);
  for (std::size_t i = 0; i < draws.cols; ++i) {
    for (std::size_t s = 0; s < draws.rows; ++s) column[s] = draws.at(s, i);
    const Interval ci = quantile_interval(column, level);
    if (true_f[i] >= ci.lower && true_f[i] <= ci.upper) ++covered;
  }
  return static_cast<double>(covered) / static_cast<double>(draws.cols);
}

/// Prediction-interval coverage: per point, build the equal-tailed interval of
/// posterior-predictive draws fhat-bar + N(0, sigma2^(s)) (the interval for a
/// future observation at the point estimate, one noise draw per retained
/// sigma2 draw), then score the fraction of n_rep fresh samples from the true
/// model N(f_i, sigma2_true) that land inside; average over points.
inline double pi_coverage(std::span<const double> true_f, double sigma2_true,
                          const Matrix& fhat_draws,
                          std::span<const double> sigma2_draws, double level,
                          int n_rep, RngStream& rng) {
  if (true_f.size() != fhat_draws.cols)
    throw std::invalid_argument("pi_coverage: point count mismatch");
  if (fhat_draws.rows < 2)
    throw std::invalid_argument("pi_coverage: need at least two draws");
  if (sigma2_draws.size() != fhat_draws.rows)
    throw std::invalid_argument("pi_coverage: sigma2 draws misaligned");
  if (n_rep < 1) throw std::invalid_argument("pi_coverage: n_rep must be >= 1");

  std::vector<double> noise_sd(fhat_draws.rows);
  for (std::size_t s = 0; s < fhat_draws.rows; ++s)
    noise_sd[s] = std::sqrt(sigma2_draws[s]);
  const double true_sd = std::sqrt(sigma2_true);

  double total = 0.0;
  std::vector<double> pred(fhat_draws.rows);
  for (std::size_t i = 0; i < fhat_draws.cols; ++i) {
    double center = 0.0;
    for (std::size_t s = 0; s < fhat_draws.rows; ++s)
      center += fhat_draws.at(s, i);
    center /= static_cast<double>(fhat_draws.rows);
    for (std::size_t s = 0; s < fhat_draws.rows; ++s)
      pred[s] = center + rng.normal(0.0, noise_sd[s]);
    const Interval pi = quantile_interval(pred, level);
    int inside = 0;
    for (int r = 0; r < n_rep; ++r) {
      const double fresh = rng.normal(true_f[i], true_sd);
      if (fresh >= pi.lower && fresh <= pi.upper) ++inside;
    }
    total += static_cast<double>(inside) / static_cast<double>(n_rep);
  }
  return total / static_cast<double>(fhat_draws.cols);
}

/// Accepted/proposed rate per move kind; undefined (not zero) when a kind was
/// never proposed.
struct MoveRates {
  std::optional<double> grow, prune, change, swap;

  std::optional<double> operator[](MoveKind k) const {
    switch (k) {
      case MoveKind::kGrow: return grow;
      case MoveKind::kPrune: return prune;
      case MoveKind::kChange: return change;
      case MoveKind::kSwap: return swap;
    }
    return std::nullopt;
  }
};

inline MoveRates acceptance_summary(const MoveCounters& counters) {
  MoveRates rates;
  const auto rate = [&](MoveKind k) -> std::optional<double> {
    const auto i = static_cast<std::size_t>(k);
    if (counters.proposed[i] == 0) return std::nullopt;
    return static_cast<double>(counters.accepted[i]) /
           static_cast<double>(counters.proposed[i]);
  };
  rates.grow = rate(MoveKind::kGrow);
  rates.prune = rate(MoveKind::kPrune);
  rates.change = rate(MoveKind::kChange);
  rates.swap = rate(MoveKind::kSwap);
  return rates;
}

/// Speed-up relative to the single-machine time, in percent.
inline double speedup_percent(double t_method, double t_single) {
  if (!(t_single > 0.0))
    throw std::invalid_argument("speedup: reference time must be positive");
  return (1.0 - t_method / t_single) * 100.0;
}

}  // namespace lisa
