#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace lisa {

enum class Method { kFull, kLisa, kModLisa, kCmc };

enum class CombineRule { kUniform, kInverseVariance };

inline std::string method_name(Method m) {
  switch (m) {
    case Method::kFull: return "full";
    case Method::kLisa: return "lisa";
    case Method::kModLisa: return "modlisa";
    case Method::kCmc: return "cmc";
  }
  return "?";
}

inline Method method_from_name(const std::string& s) {
  if (s == "full" || s == "single" || s == "singlemachine") return Method::kFull;
  if (s == "lisa") return Method::kLisa;
  if (s == "modlisa") return Method::kModLisa;
  if (s == "cmc") return Method::kCmc;
  throw std::invalid_argument("unknown method: " + s);
}

enum class MoveKind : int { kGrow = 0, kPrune = 1, kChange = 2, kSwap = 3 };

inline const char* move_name(MoveKind k) {
  switch (k) {
    case MoveKind::kGrow: return "grow";
    case MoveKind::kPrune: return "prune";
    case MoveKind::kChange: return "change";
    case MoveKind::kSwap: return "swap";
  }
  return "?";
}

/// Tree-proposal mix. Defaults are the classic (0.25, 0.25, 0.4, 0.1) with
/// SWAP dropped and the rest renormalized.
struct MoveProbs {
  double grow = 0.25 / 0.9;
  double prune = 0.25 / 0.9;
  double change = 0.4 / 0.9;
  double swap = 0.0;

  double operator[](MoveKind k) const {
    switch (k) {
      case MoveKind::kGrow: return grow;
      case MoveKind::kPrune: return prune;
      case MoveKind::kChange: return change;
      case MoveKind::kSwap: return swap;
    }
    return 0.0;
  }
};

/// BART hyperparameters. mu_mu, sigma_mu and lambda are usually overwritten by
/// calibrate_hyperparams from the worker's own data.
struct BartHyper {
  int m = 50;                // number of trees
  double alpha = 0.95;       // depth prior base
  double beta_depth = 2.0;   // depth prior power
  double k = 2.0;            // leaf-prior range half-width in sigma_mu units
  double nu = 3.0;           // sigma^2 prior degrees of freedom
  double q = 0.9;            // calibration quantile for lambda
  double lambda = 1.0;       // sigma^2 prior scale (calibrated)
  double mu_mu = 0.0;        // leaf-mean prior mean (calibrated)
  double sigma_mu = 1.0;     // leaf-mean prior sd (calibrated)
  MoveProbs move_probs;

  double sigma_mu2() const { return sigma_mu * sigma_mu; }

  void validate() const {
    if (m < 1) throw std::invalid_argument("bart: m must be >= 1");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw std::invalid_argument("bart: alpha must be in (0,1)");
    if (beta_depth < 0.0)
      throw std::invalid_argument("bart: beta_depth must be >= 0");
    if (!(k > 0.0)) throw std::invalid_argument("bart: k must be positive");
    if (!(nu > 0.0)) throw std::invalid_argument("bart: nu must be positive");
    if (!(q > 0.0 && q < 1.0))
      throw std::invalid_argument("bart: q must be in (0,1)");
    if (!(lambda > 0.0)) throw std::invalid_argument("bart: lambda must be positive");
    if (!(sigma_mu > 0.0))
      throw std::invalid_argument("bart: sigma_mu must be positive");
    const double total = move_probs.grow + move_probs.prune +
                         move_probs.change + move_probs.swap;
    if (std::abs(total - 1.0) > 1e-9)
      throw std::invalid_argument("bart: move probabilities must sum to 1");
  }
};

/// How one engine realizes all four methods: likelihood exponent kappa, prior
/// exponent, and the modLISA substitution sigma~^2 = kappa * sigma^2 during
/// tree and leaf updates.
struct InflationSpec {
  double kappa = 1.0;
  double prior_temper = 1.0;
  bool variance_adjust = false;

  static InflationSpec for_method(Method m, int k) {
    if (k < 1) throw std::invalid_argument("inflation: K must be >= 1");
    const double kd = static_cast<double>(k);
    switch (m) {
      case Method::kFull:
        if (k != 1) throw std::invalid_argument("inflation: Full requires K = 1");
        return {1.0, 1.0, false};
      case Method::kLisa: return {kd, 1.0, false};
      case Method::kModLisa: return {kd, 1.0, true};
      case Method::kCmc: return {1.0, 1.0 / kd, false};
    }
    throw std::invalid_argument("inflation: bad method");
  }
};

/// Residual variance the tree and leaf-mean updates see. With the modLISA
/// adjustment the kappa-inflated conditionals collapse exactly to the
/// single-machine form, so the effective value is sigma^2 itself.
inline double effective_resid_var(double sigma2, const InflationSpec& s) {
  return s.variance_adjust ? sigma2 : sigma2 / s.kappa;
}

/// Leaf-mean prior variance the conditionals see: tempering the whole prior
/// raises N(mu_mu, sigma_mu^2) to the power prior_temper, which is again
/// normal with variance sigma_mu^2 / prior_temper.
inline double effective_leaf_prior_var(double sigma_mu2,
                                       const InflationSpec& s) {
  return sigma_mu2 / s.prior_temper;
}

struct MethodConfig {
  Method method = Method::kFull;
  int k = 1;
  std::int64_t iterations = 1000;
  std::int64_t burn_in = 0;
  std::uint64_t seed = 0;
  BartHyper bart;
  CombineRule combine = CombineRule::kInverseVariance;

  void validate() const {
    if (k < 1) throw std::invalid_argument("config: K must be positive");
    if (method == Method::kFull && k != 1)
      throw std::invalid_argument("config: Full implies K = 1");
    if (iterations < 1)
      throw std::invalid_argument("config: iterations must be positive");
    if (burn_in < 0 || burn_in >= iterations)
      throw std::invalid_argument("config: burn_in must be in [0, iterations)");
    bart.validate();
  }

  InflationSpec inflation() const {
    return InflationSpec::for_method(method, k);
  }
};

}  // namespace lisa
