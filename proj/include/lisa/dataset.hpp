#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "lisa/rng.hpp"

namespace lisa {

/// Dense row-major matrix of doubles.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), values(r * c, fill) {}

  double& at(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return {values.data() + r * cols, cols};
  }
};

/// Tabular predictors plus response. Immutable after construction; safe to
/// share across concurrent readers.
struct Dataset {
  Matrix x;
  std::vector<double> y;
  std::vector<std::string> feature_names;  // empty or one per column

  std::size_t n() const { return x.rows; }
  std::size_t p() const { return x.cols; }
};

inline Dataset make_dataset(Matrix x, std::vector<double> y,
                            std::vector<std::string> feature_names = {}) {
  if (x.rows != y.size())
    throw std::invalid_argument("dataset: predictor rows (" +
                                std::to_string(x.rows) +
                                ") != response length (" +
                                std::to_string(y.size()) + ")");
  if (!feature_names.empty() && feature_names.size() != x.cols)
    throw std::invalid_argument("dataset: feature name count != column count");
  for (double v : x.values)
    if (!std::isfinite(v))
      throw std::invalid_argument("dataset: non-finite predictor value");
  for (double v : y)
    if (!std::isfinite(v))
      throw std::invalid_argument("dataset: non-finite response value");
  Dataset d;
  d.x = std::move(x);
  d.y = std::move(y);
  d.feature_names = std::move(feature_names);
  return d;
}

/// Read-only index view of one batch of a partition.
struct Shard {
  const Dataset* parent = nullptr;
  std::vector<std::size_t> indices;  // sorted row indices into parent
  int shard_id = 0;

  std::size_t size() const { return indices.size(); }
};

/// Uniformly random partition into K near-equal shards: draw a random
/// permutation and deal indices round-robin, so shard sizes differ by at most
/// one. Deterministic given the stream state.
inline std::vector<Shard> partition(const Dataset& data, int k,
                                    RngStream& rng) {
  const std::size_t n = data.n();
  if (k <= 0) throw std::invalid_argument("partition: K must be positive");
  if (static_cast<std::size_t>(k) > n)
    throw std::invalid_argument("partition: K exceeds the number of rows");

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = rng.uniform_index(i);
    std::swap(perm[i - 1], perm[j]);
  }

  std::vector<Shard> shards(static_cast<std::size_t>(k));
  for (int j = 0; j < k; ++j) {
    shards[j].parent = &data;
    shards[j].shard_id = j;
  }
  for (std::size_t i = 0; i < n; ++i)
    shards[i % static_cast<std::size_t>(k)].indices.push_back(perm[i]);
  for (auto& s : shards) std::sort(s.indices.begin(), s.indices.end());
  return shards;
}

}  // namespace lisa
