#pragma once

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include "lisa/bart.hpp"
#include "lisa/config.hpp"
#include "lisa/dataset.hpp"
#include "lisa/records.hpp"
#include "lisa/rng.hpp"
#include "lisa/tree.hpp"

namespace lisa {

// ============================================================================
// Chain execution
// ============================================================================

struct ChainOutput {
  int shard_id = 0;
  std::size_t shard_size = 0;
  std::vector<DrawRecord> draws;  // empty when keep_draws is off
  MoveCounters counters;
  double seconds_per_iteration = 0.0;
  BartHyper hyper;  // calibrated values the chain actually used
  std::filesystem::path file;  // set when streamed to disk
};

struct RunOptions {
  unsigned workers = 0;  // 0 = hardware concurrency
  std::optional<std::filesystem::path> stream_dir;
  bool keep_draws = true;
  bool eval_train = true;  // off: records carry test-point evaluations only
};

namespace detail {

inline std::string chain_file_name(int shard_id) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "chain_%03d.bin", shard_id);
  return buf;
}

inline ChainOutput run_one_chain(const Dataset& train, const Matrix& test_x,
                                 const MethodConfig& config, const Shard& shard,
                                 const RunOptions& opts) {
  ChainOutput out;
  out.shard_id = shard.shard_id;
  out.shard_size = shard.size();

  const ShardData data = ShardData::from_shard(shard);
  // Workers calibrate from their own shard only; chains never read the full y.
  out.hyper = calibrated_hyper(config.bart, data.y);
  const InflationSpec inflation = config.inflation();
  RngStream rng(config.seed, shard.shard_id);
  Forest forest = make_initial_forest(data, out.hyper.m);

  const std::size_t n_train_eval = opts.eval_train ? train.n() : 0;

  std::unique_ptr<DrawWriter> writer;
  if (opts.stream_dir) {
    DrawFileHeader header;
    header.shard_id = shard.shard_id;
    header.k = config.k;
    header.method = static_cast<std::int32_t>(config.method);
    header.m = out.hyper.m;
    header.n_train_eval = n_train_eval;
    header.n_test_eval = test_x.rows;
    header.iterations = config.iterations;
    header.burn_in = config.burn_in;
    header.seed = config.seed;
    header.shard_size = shard.size();
    out.file = *opts.stream_dir / chain_file_name(shard.shard_id);
    writer = std::make_unique<DrawWriter>(out.file, header);
  }

  if (opts.keep_draws)
    out.draws.reserve(
        static_cast<std::size_t>(config.iterations - config.burn_in));

  const auto t0 = std::chrono::steady_clock::now();
  for (std::int64_t it = 0; it < config.iterations; ++it) {
    bart_gibbs_iteration(forest, data, out.hyper, inflation, rng, &out.counters);
    if (it < config.burn_in) continue;

    DrawRecord rec;
    rec.iteration = it;
    rec.sigma2 = forest.sigma2;
    rec.total_leaves = forest.total_leaves();
    rec.proposed = out.counters.proposed;
    rec.accepted = out.counters.accepted;
    rec.fhat_train.resize(n_train_eval);
    for (std::size_t i = 0; i < n_train_eval; ++i)
      rec.fhat_train[i] = forest.predict(train.x.row(i));
    rec.fhat_test.resize(test_x.rows);
    for (std::size_t i = 0; i < test_x.rows; ++i)
      rec.fhat_test[i] = forest.predict(test_x.row(i));

    if (writer) writer->append(rec);
    if (opts.keep_draws) out.draws.push_back(std::move(rec));
  }
  const auto t1 = std::chrono::steady_clock::now();
  out.seconds_per_iteration =
      std::chrono::duration<double>(t1 - t0).count() /
      static_cast<double>(config.iterations);
  if (writer) writer->flush();
  return out;
}

}  // namespace detail

/// Run the method's K chains on disjoint shards with disjoint RNG streams
/// (stream id = shard id). Results are deterministic given (dataset, seed)
/// whatever the physical parallelism; Full runs one chain on the whole data.
/// Evaluation points are all rows of `train` plus the rows of `test_x`.
inline std::vector<ChainOutput> run_chains(const Dataset& train,
                                           const Matrix& test_x,
                                           const MethodConfig& config,
                                           const RunOptions& opts = {}) {
  config.validate();
  if (test_x.rows > 0 && test_x.cols != train.p())
    throw std::invalid_argument("run_chains: test predictor dimension mismatch");

  RngStream part_rng(config.seed, streams::kPartition);
  const std::vector<Shard> shards = partition(train, config.k, part_rng);

  std::vector<ChainOutput> outputs(shards.size());
  std::vector<std::exception_ptr> errors(shards.size());
  std::atomic<std::size_t> next{0};

  unsigned workers = opts.workers ? opts.workers
                                  : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(shards.size()));

  const auto worker = [&] {
    while (true) {
      const std::size_t j = next.fetch_add(1);
      if (j >= shards.size()) return;
      try {
        outputs[j] = detail::run_one_chain(train, test_x, config, shards[j], opts);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };

  if (workers <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  for (std::size_t j = 0; j < errors.size(); ++j) {
    if (!errors[j]) continue;
    try {
      std::rethrow_exception(errors[j]);
    } catch (const std::exception& e) {
      throw std::runtime_error("chain for shard " + std::to_string(j) +
                               " failed: " + e.what());
    }
  }
  return outputs;
}

// ============================================================================
// Sub-posterior combination
// ============================================================================

struct CombinedPosterior {
  Matrix fhat_train;  // draws x train evaluation points
  Matrix fhat_test;
  std::vector<double> sigma2;        // aligned with fhat rows
  std::vector<double> shard_weights; // scalar weight actually used per shard
};

/// Record-at-a-time view over one chain's draws, backed by memory or a file.
class DrawSource {
 public:
  virtual ~DrawSource() = default;
  virtual std::uint64_t n_train_eval() const = 0;
  virtual std::uint64_t n_test_eval() const = 0;
  virtual std::optional<DrawRecord> next() = 0;
  virtual void rewind() = 0;
};

class MemoryDrawSource final : public DrawSource {
 public:
  explicit MemoryDrawSource(const std::vector<DrawRecord>* draws)
      : draws_(draws) {}
  std::uint64_t n_train_eval() const override {
    return draws_->empty() ? 0 : draws_->front().fhat_train.size();
  }
  std::uint64_t n_test_eval() const override {
    return draws_->empty() ? 0 : draws_->front().fhat_test.size();
  }
  std::optional<DrawRecord> next() override {
    if (idx_ >= draws_->size()) return std::nullopt;
    return (*draws_)[idx_++];
  }
  void rewind() override { idx_ = 0; }

 private:
  const std::vector<DrawRecord>* draws_;
  std::size_t idx_ = 0;
};

class FileDrawSource final : public DrawSource {
 public:
  explicit FileDrawSource(const std::filesystem::path& path) : reader_(path) {}
  std::uint64_t n_train_eval() const override {
    return reader_.header().n_train_eval;
  }
  std::uint64_t n_test_eval() const override {
    return reader_.header().n_test_eval;
  }
  std::optional<DrawRecord> next() override { return reader_.next(); }
  void rewind() override { reader_.rewind(); }

 private:
  DrawReader reader_;
};

namespace detail {

struct ShardSummary {
  std::size_t n_draws = 0;
  double sigma2_mean = 0.0;
  double sigma2_var = 0.0;
  std::vector<double> train_var;  // per-point sample variance of fhat
  std::vector<double> test_var;
};

inline ShardSummary summarize_source(DrawSource& src) {
  ShardSummary s;
  const std::size_t nt = src.n_train_eval();
  const std::size_t ns = src.n_test_eval();
  std::vector<double> tr_sum(nt, 0.0), tr_sum2(nt, 0.0);
  std::vector<double> te_sum(ns, 0.0), te_sum2(ns, 0.0);
  double s_sum = 0.0, s_sum2 = 0.0;
  src.rewind();
  while (auto rec = src.next()) {
    ++s.n_draws;
    s_sum += rec->sigma2;
    s_sum2 += rec->sigma2 * rec->sigma2;
    for (std::size_t i = 0; i < nt; ++i) {
      tr_sum[i] += rec->fhat_train[i];
      tr_sum2[i] += rec->fhat_train[i] * rec->fhat_train[i];
    }
    for (std::size_t i = 0; i < ns; ++i) {
      te_sum[i] += rec->fhat_test[i];
      te_sum2[i] += rec->fhat_test[i] * rec->fhat_test[i];
    }
  }
  if (s.n_draws == 0) throw std::invalid_argument("combine: empty draw source");
  const double n = static_cast<double>(s.n_draws);
  const double denom = s.n_draws > 1 ? n - 1.0 : 1.0;
  s.sigma2_mean = s_sum / n;
  s.sigma2_var = std::max(0.0, (s_sum2 - s_sum * s_sum / n) / denom);
  s.train_var.resize(nt);
  s.test_var.resize(ns);
  for (std::size_t i = 0; i < nt; ++i)
    s.train_var[i] = std::max(0.0, (tr_sum2[i] - tr_sum[i] * tr_sum[i] / n) / denom);
  for (std::size_t i = 0; i < ns; ++i)
    s.test_var[i] = std::max(0.0, (te_sum2[i] - te_sum[i] * te_sum[i] / n) / denom);
  return s;
}

inline constexpr double kVarianceFloor = 1e-30;

}  // namespace detail

/// Combine aligned sub-posterior draw streams into full-posterior draws.
///
/// Uniform pools the K sequences: every shard draw becomes a combined draw
/// (shard 0's draws first), so the pooled empirical distribution is exactly
/// the mixture of shard distributions.
///
/// InverseVariance forms per-index weighted averages of the f-hat vectors.
/// For modLISA the weight is the scalar 1/sigma2_mean of the shard; its
/// combined sigma2 sequence is pooled by cycling shards so that draw s pairs
/// with shard (s mod K), matching the pooled marginal while keeping the
/// sequences aligned. For CMC the weights are per evaluation point,
/// 1/sample-variance of that shard's f-hat draws at the point, and the sigma2
/// draws are combined the same way with 1/Var(sigma2) weights.
inline CombinedPosterior combine_sources(
    std::vector<std::unique_ptr<DrawSource>>& sources, Method method,
    CombineRule rule) {
  if (sources.empty()) throw std::invalid_argument("combine: no sources");
  const std::size_t k = sources.size();
  const std::size_t nt = sources[0]->n_train_eval();
  const std::size_t ns = sources[0]->n_test_eval();
  for (auto& s : sources)
    if (s->n_train_eval() != nt || s->n_test_eval() != ns)
      throw std::invalid_argument("combine: mismatched evaluation points");

  std::vector<detail::ShardSummary> summaries;
  summaries.reserve(k);
  for (auto& s : sources) summaries.push_back(detail::summarize_source(*s));
  const std::size_t draws = summaries[0].n_draws;
  for (const auto& s : summaries)
    if (s.n_draws != draws)
      throw std::invalid_argument("combine: mismatched draw counts across shards");

  CombinedPosterior out;

  if (rule == CombineRule::kUniform) {
    out.fhat_train = Matrix(draws * k, nt);
    out.fhat_test = Matrix(draws * k, ns);
    out.sigma2.resize(draws * k);
    out.shard_weights.assign(k, 1.0 / static_cast<double>(k));
    std::size_t row = 0;
    for (auto& src : sources) {
      src->rewind();
      while (auto rec = src->next()) {
        for (std::size_t i = 0; i < nt; ++i)
          out.fhat_train.at(row, i) = rec->fhat_train[i];
        for (std::size_t i = 0; i < ns; ++i)
          out.fhat_test.at(row, i) = rec->fhat_test[i];
        out.sigma2[row] = rec->sigma2;
        ++row;
      }
    }
    return out;
  }

  // Inverse-variance weighting. Scalar per-shard weights except for CMC,
  // which weights each evaluation point separately. Weights are normalized
  // up front; with K = 1 every normalized weight is exactly 1, making the
  // combination the identity bit for bit.
  const bool per_point = method == Method::kCmc;
  std::vector<double> scalar_w(k);
  Matrix train_w, test_w;  // k x points, normalized over shards
  std::vector<double> sigma2_w(k);
  if (per_point) {
    train_w = Matrix(k, nt);
    test_w = Matrix(k, ns);
    for (std::size_t j = 0; j < k; ++j) {
      for (std::size_t i = 0; i < nt; ++i)
        train_w.at(j, i) =
            1.0 / std::max(summaries[j].train_var[i], detail::kVarianceFloor);
      for (std::size_t i = 0; i < ns; ++i)
        test_w.at(j, i) =
            1.0 / std::max(summaries[j].test_var[i], detail::kVarianceFloor);
      sigma2_w[j] =
          1.0 / std::max(summaries[j].sigma2_var, detail::kVarianceFloor);
      scalar_w[j] = sigma2_w[j];
    }
    for (std::size_t i = 0; i < nt; ++i) {
      double den = 0.0;
      for (std::size_t j = 0; j < k; ++j) den += train_w.at(j, i);
      for (std::size_t j = 0; j < k; ++j) train_w.at(j, i) /= den;
    }
    for (std::size_t i = 0; i < ns; ++i) {
      double den = 0.0;
      for (std::size_t j = 0; j < k; ++j) den += test_w.at(j, i);
      for (std::size_t j = 0; j < k; ++j) test_w.at(j, i) /= den;
    }
    double den = 0.0;
    for (double w : sigma2_w) den += w;
    for (double& w : sigma2_w) w /= den;
  } else {
    for (std::size_t j = 0; j < k; ++j)
      scalar_w[j] =
          1.0 / std::max(summaries[j].sigma2_mean, detail::kVarianceFloor);
  }
  out.shard_weights = scalar_w;
  std::vector<double> scalar_norm(scalar_w);
  {
    double den = 0.0;
    for (double w : scalar_norm) den += w;
    for (double& w : scalar_norm) w /= den;
  }

  out.fhat_train = Matrix(draws, nt);
  out.fhat_test = Matrix(draws, ns);
  out.sigma2.assign(draws, 0.0);

  for (auto& s : sources) s->rewind();
  std::vector<DrawRecord> recs(k);
  for (std::size_t s = 0; s < draws; ++s) {
    for (std::size_t j = 0; j < k; ++j) {
      auto rec = sources[j]->next();
      if (!rec) throw std::runtime_error("combine: source ended early");
      recs[j] = std::move(*rec);
    }
    if (per_point) {
      for (std::size_t i = 0; i < nt; ++i) {
        double num = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          num += train_w.at(j, i) * recs[j].fhat_train[i];
        out.fhat_train.at(s, i) = num;
      }
      for (std::size_t i = 0; i < ns; ++i) {
        double num = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          num += test_w.at(j, i) * recs[j].fhat_test[i];
        out.fhat_test.at(s, i) = num;
      }
      double num = 0.0;
      for (std::size_t j = 0; j < k; ++j) num += sigma2_w[j] * recs[j].sigma2;
      out.sigma2[s] = num;
    } else {
      for (std::size_t i = 0; i < nt; ++i) {
        double num = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          num += scalar_norm[j] * recs[j].fhat_train[i];
        out.fhat_train.at(s, i) = num;
      }
      for (std::size_t i = 0; i < ns; ++i) {
        double num = 0.0;
        for (std::size_t j = 0; j < k; ++j)
          num += scalar_norm[j] * recs[j].fhat_test[i];
        out.fhat_test.at(s, i) = num;
      }
      out.sigma2[s] = recs[s % k].sigma2;
    }
  }
  return out;
}

inline CombinedPosterior combine(const std::vector<ChainOutput>& outputs,
                                 Method method, CombineRule rule) {
  std::vector<std::unique_ptr<DrawSource>> sources;
  sources.reserve(outputs.size());
  for (const auto& o : outputs)
    sources.push_back(std::make_unique<MemoryDrawSource>(&o.draws));
  return combine_sources(sources, method, rule);
}

inline CombinedPosterior combine_files(
    const std::vector<std::filesystem::path>& chain_files, Method method,
    CombineRule rule) {
  std::vector<std::unique_ptr<DrawSource>> sources;
  sources.reserve(chain_files.size());
  for (const auto& p : chain_files)
    sources.push_back(std::make_unique<FileDrawSource>(p));
  return combine_sources(sources, method, rule);
}

/// Persist a combined posterior in the chain draw-record format (shard -1).
inline void save_combined(const std::filesystem::path& path,
                          const CombinedPosterior& comb, Method method,
                          int k) {
  DrawFileHeader header;
  header.shard_id = -1;
  header.k = k;
  header.method = static_cast<std::int32_t>(method);
  header.n_train_eval = comb.fhat_train.cols;
  header.n_test_eval = comb.fhat_test.cols;
  header.iterations = static_cast<std::int64_t>(comb.fhat_train.rows);
  DrawWriter writer(path, header);
  DrawRecord rec;
  for (std::size_t s = 0; s < comb.fhat_train.rows; ++s) {
    rec.iteration = static_cast<std::int64_t>(s);
    rec.sigma2 = comb.sigma2[s];
    rec.total_leaves = 0;
    rec.fhat_train.assign(comb.fhat_train.values.begin() +
                              static_cast<std::ptrdiff_t>(s * comb.fhat_train.cols),
                          comb.fhat_train.values.begin() +
                              static_cast<std::ptrdiff_t>((s + 1) * comb.fhat_train.cols));
    rec.fhat_test.assign(comb.fhat_test.values.begin() +
                             static_cast<std::ptrdiff_t>(s * comb.fhat_test.cols),
                         comb.fhat_test.values.begin() +
                             static_cast<std::ptrdiff_t>((s + 1) * comb.fhat_test.cols));
    writer.append(rec);
  }
  writer.flush();
}

inline CombinedPosterior load_combined(const std::filesystem::path& path) {
  DrawReader reader(path);
  CombinedPosterior out;
  const std::size_t nt = reader.header().n_train_eval;
  const std::size_t ns = reader.header().n_test_eval;
  std::vector<DrawRecord> recs = reader.read_all();
  out.fhat_train = Matrix(recs.size(), nt);
  out.fhat_test = Matrix(recs.size(), ns);
  out.sigma2.resize(recs.size());
  for (std::size_t s = 0; s < recs.size(); ++s) {
    for (std::size_t i = 0; i < nt; ++i)
      out.fhat_train.at(s, i) = recs[s].fhat_train[i];
    for (std::size_t i = 0; i < ns; ++i)
      out.fhat_test.at(s, i) = recs[s].fhat_test[i];
    out.sigma2[s] = recs[s].sigma2;
  }
  return out;
}

}  // namespace lisa
