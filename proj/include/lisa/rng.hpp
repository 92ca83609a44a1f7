#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>

namespace lisa {

// Reserved stream ids. Chains use their shard id (>= 0); every other consumer
// of randomness gets a fixed negative id so the chain streams never shift when
// the worker count or the amount of pre-run randomness changes.
namespace streams {
inline constexpr std::int64_t kTrainData = -1;
inline constexpr std::int64_t kTestData = -2;
inline constexpr std::int64_t kPartition = -3;
inline constexpr std::int64_t kPredictive = -4;
}  // namespace streams

/// Seeded random stream. Equal (root_seed, stream_id) pairs reproduce the same
/// sequence bit-exactly; distinct pairs give independent sequences.
///
/// The variate transforms live here instead of using <random> distribution
/// adapters because the standard leaves those implementation-defined, and the
/// determinism contract has to hold across compilers.
class RngStream {
 public:
  RngStream(std::uint64_t root_seed, std::int64_t stream_id)
      : root_seed_(root_seed), stream_id_(stream_id) {
    const auto id = static_cast<std::uint64_t>(stream_id);
    std::seed_seq seq{static_cast<std::uint32_t>(root_seed),
                      static_cast<std::uint32_t>(root_seed >> 32),
                      static_cast<std::uint32_t>(id),
                      static_cast<std::uint32_t>(id >> 32)};
    engine_.seed(seq);
  }

  std::uint64_t root_seed() const { return root_seed_; }
  std::int64_t stream_id() const { return stream_id_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on the open interval (0, 1); never returns an exact endpoint.
  double uniform() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Unbiased integer in [0, n).
  std::size_t uniform_index(std::size_t n) {
    if (n == 0) throw std::invalid_argument("uniform_index: empty range");
    const auto un = static_cast<std::uint64_t>(n);
    const std::uint64_t min = (0 - un) % un;  // 2^64 mod n
    std::uint64_t r = engine_();
    while (r < min) r = engine_();
    return static_cast<std::size_t>(r % un);
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    while (true) {
      const double u = 2.0 * uniform() - 1.0;
      const double v = 2.0 * uniform() - 1.0;
      const double s = u * u + v * v;
      if (s > 0.0 && s < 1.0) return u * std::sqrt(-2.0 * std::log(s) / s);
    }
  }

  double normal(double mean, double sd) { return mean + sd * normal(); }

  /// Gamma(shape, scale) by Marsaglia-Tsang, with the shape<1 boost.
  double gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw std::invalid_argument("gamma: shape and scale must be positive");
    if (shape < 1.0)
      return gamma(shape + 1.0, scale) * std::pow(uniform(), 1.0 / shape);
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    while (true) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return scale * d * v;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v)))
        return scale * d * v;
    }
  }

  /// Inverse-Gamma with density proportional to x^-(shape+1) exp(-scale/x).
  double inv_gamma(double shape, double scale) {
    if (!(shape > 0.0) || !(scale > 0.0))
      throw std::invalid_argument("inv_gamma: shape and scale must be positive");
    return 1.0 / gamma(shape, 1.0 / scale);
  }

  double beta(double a, double b) {
    const double g1 = gamma(a, 1.0);
    const double g2 = gamma(b, 1.0);
    return g1 / (g1 + g2);
  }

 private:
  std::mt19937_64 engine_;
  std::uint64_t root_seed_;
  std::int64_t stream_id_;
};

}  // namespace lisa
