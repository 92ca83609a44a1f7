#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lisa/dataset.hpp"
#include "lisa/rng.hpp"

namespace lisa {

/// A generated dataset together with the noiseless regression function values.
struct SimulatedData {
  Dataset data;
  std::vector<double> true_f;
};

inline double friedman_f(std::span<const double> x) {
  return 10.0 * std::sin(std::numbers::pi * x[0] * x[1]) +
         20.0 * (x[2] - 0.5) * (x[2] - 0.5) + 10.0 * x[3] + 5.0 * x[4];
}

/// Step function 1..5 on x1 in [0,0.2), [0.2,0.4), [0.4,0.6), [0.6,0.8), [0.8,1).
inline double piecewise_f(std::span<const double> x) {
  const double x1 = x[0];
  if (x1 < 0.2) return 1.0;
  if (x1 < 0.4) return 2.0;
  if (x1 < 0.6) return 3.0;
  if (x1 < 0.8) return 4.0;
  return 5.0;
}

inline double poly_f(std::span<const double> x) {
  return 3.0 * std::sqrt(x[0]) - 2.0 * x[1] * x[1] + 5.0 * x[2] * x[3];
}

namespace detail {

template <typename F>
SimulatedData generate_uniform_design(std::size_t n, std::size_t p,
                                      double sigma2, RngStream& rng, F&& f) {
  if (n < 1) throw std::invalid_argument("generate: n must be at least 1");
  if (!(sigma2 > 0.0))
    throw std::invalid_argument("generate: sigma2 must be positive");
  Matrix x(n, p);
  std::vector<double> y(n);
  std::vector<double> true_f(n);
  const double sd = std::sqrt(sigma2);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) x.at(i, j) = rng.uniform();
    true_f[i] = f(x.row(i));
    y[i] = true_f[i] + rng.normal(0.0, sd);
  }
  std::vector<std::string> names(p);
  for (std::size_t j = 0; j < p; ++j) names[j] = "x" + std::to_string(j + 1);
  SimulatedData out;
  out.data = make_dataset(std::move(x), std::move(y), std::move(names));
  out.true_f = std::move(true_f);
  return out;
}

}  // namespace detail

/// Friedman's test function with 10 iid U(0,1) predictors (5 inactive) and
/// Gaussian noise of variance sigma2.
inline SimulatedData generate_friedman(std::size_t n, double sigma2,
                                       RngStream& rng) {
  return detail::generate_uniform_design(n, 10, sigma2, rng,
                                         [](auto x) { return friedman_f(x); });
}

inline SimulatedData generate_piecewise(std::size_t n, double sigma2,
                                        RngStream& rng) {
  return detail::generate_uniform_design(n, 10, sigma2, rng,
                                         [](auto x) { return piecewise_f(x); });
}

inline SimulatedData generate_poly(std::size_t n, double sigma2,
                                   RngStream& rng) {
  return detail::generate_uniform_design(n, 4, sigma2, rng,
                                         [](auto x) { return poly_f(x); });
}

inline SimulatedData generate_by_name(const std::string& name, std::size_t n,
                                      double sigma2, RngStream& rng) {
  if (name == "friedman") return generate_friedman(n, sigma2, rng);
  if (name == "piecewise") return generate_piecewise(n, sigma2, rng);
  if (name == "poly") return generate_poly(n, sigma2, rng);
  throw std::invalid_argument("unknown generator: " + name);
}

}  // namespace lisa
