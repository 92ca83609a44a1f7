// Experiment runner: simulate data, run shard-parallel chains for each
// method, combine sub-posterior draws, and report the summary tables and
// plot-data series from the persisted run directory.

#include <CLI11.hpp>
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "lisa/config.hpp"
#include "lisa/csv.hpp"
#include "lisa/dataset.hpp"
#include "lisa/diagnostics.hpp"
#include "lisa/generate.hpp"
#include "lisa/orchestrate.hpp"
#include "lisa/records.hpp"
#include "lisa/rng.hpp"

namespace fs = std::filesystem;
using namespace lisa;

namespace {

// ---------------------------------------------------------------------------
// Small key-value file support (manifest, per-method meta, config)
// ---------------------------------------------------------------------------

struct KvFile {
  std::map<std::string, std::string> global;
  std::vector<std::pair<std::string, std::map<std::string, std::string>>> sections;

  const std::map<std::string, std::string>* section(const std::string& name) const {
    for (const auto& [n, kv] : sections)
      if (n == name) return &kv;
    return nullptr;
  }
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

KvFile parse_kv_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  KvFile out;
  auto* current = &out.global;
  std::string line;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    if (line.front() == '[' && line.back() == ']') {
      out.sections.emplace_back(trim(line.substr(1, line.size() - 2)),
                                std::map<std::string, std::string>{});
      current = &out.sections.back().second;
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    (*current)[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return out;
}

class KvWriter {
 public:
  explicit KvWriter(const fs::path& path) : out_(path) {
    if (!out_) throw std::runtime_error("cannot write " + path.string());
  }
  void section(const std::string& name) { out_ << "\n[" << name << "]\n"; }
  template <typename T>
  void kv(const std::string& key, const T& value) {
    out_ << key << " = " << value << "\n";
  }

 private:
  std::ofstream out_;
};

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string fmt2(double v, int digits = 4) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
  return buf;
}

// ---------------------------------------------------------------------------
// Shared run-directory conventions
// ---------------------------------------------------------------------------

std::string rep_dir_name(int rep) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "rep_%02d", rep);
  return buf;
}

CombineRule default_rule(Method m) {
  return m == Method::kLisa ? CombineRule::kUniform
                            : CombineRule::kInverseVariance;
}

CombineRule rule_from_name(const std::string& s, Method m) {
  if (s == "default" || s.empty()) return default_rule(m);
  if (s == "uniform") return CombineRule::kUniform;
  if (s == "inverse-variance") return CombineRule::kInverseVariance;
  throw CLI::ValidationError("--combine-rule", "unknown rule: " + s);
}

std::string rule_name(CombineRule r) {
  return r == CombineRule::kUniform ? "uniform" : "inverse-variance";
}

std::vector<fs::path> chain_files_in(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("chain_", 0) == 0 && entry.path().extension() == ".bin")
      files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

struct SimulateArgs {
  std::string generator = "friedman";
  std::size_t n = 20000;
  std::size_t test_n = 0;  // 0 -> n/4
  double sigma2 = 9.0;
  std::uint64_t seed = 1;
  std::string out;
};

void write_dataset_bundle(const fs::path& dir, const SimulatedData& train,
                          const SimulatedData& test, const std::string& gen,
                          std::uint64_t seed, double sigma2) {
  save_dataset_csv(dir / "train.csv", train.data);
  save_dataset_csv(dir / "test.csv", test.data);
  save_column_csv(dir / "truef_train.csv", "f", train.true_f);
  save_column_csv(dir / "truef_test.csv", "f", test.true_f);
  save_sidecar(dir / "train.meta", {gen, seed, sigma2});
}

int cmd_simulate(const SimulateArgs& args) {
  const fs::path dir(args.out);
  fs::create_directories(dir);
  const std::size_t test_n = args.test_n ? args.test_n : std::max<std::size_t>(1, args.n / 4);

  RngStream train_rng(args.seed, streams::kTrainData);
  const auto train = generate_by_name(args.generator, args.n, args.sigma2, train_rng);
  RngStream test_rng(args.seed, streams::kTestData);
  const auto test = generate_by_name(args.generator, test_n, args.sigma2, test_rng);

  write_dataset_bundle(dir, train, test, args.generator, args.seed, args.sigma2);
  std::cout << "wrote " << args.n << " train and " << test_n
            << " test rows to " << dir.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// run
// ---------------------------------------------------------------------------

struct RunArgs {
  std::string generator;
  std::size_t n = 2000;
  double sigma2 = 9.0;
  double test_frac = 0.25;
  std::size_t test_n = 0;
  std::string data_path;
  std::string test_data_path;
  std::string response = "y";
  std::vector<std::string> methods{"full", "lisa", "modlisa", "cmc"};
  int k = 4;
  std::int64_t iters = 1000;
  std::int64_t burn_in = 500;
  int trees = 50;
  std::uint64_t seed = 42;
  int reps = 1;
  std::string combine_rule = "default";
  unsigned workers = 0;
  std::string out;
  std::string config_path;
};

struct RepData {
  Dataset train;
  Dataset test;
  std::vector<double> truef_train, truef_test;  // empty for real data
  double sigma2_true = 0.0;
  bool has_truth = false;
};

RepData prepare_rep_data(const RunArgs& args, std::uint64_t rep_seed) {
  RepData rep;
  if (!args.generator.empty()) {
    const std::size_t test_n =
        args.test_n ? args.test_n
                    : std::max<std::size_t>(
                          1, static_cast<std::size_t>(
                                 static_cast<double>(args.n) * args.test_frac));
    RngStream train_rng(rep_seed, streams::kTrainData);
    auto train = generate_by_name(args.generator, args.n, args.sigma2, train_rng);
    RngStream test_rng(rep_seed, streams::kTestData);
    auto test = generate_by_name(args.generator, test_n, args.sigma2, test_rng);
    rep.train = std::move(train.data);
    rep.test = std::move(test.data);
    rep.truef_train = std::move(train.true_f);
    rep.truef_test = std::move(test.true_f);
    rep.sigma2_true = args.sigma2;
    rep.has_truth = true;
    return rep;
  }

  const Dataset whole = load_csv(args.data_path, args.response);
  if (!args.test_data_path.empty()) {
    rep.train = whole;
    rep.test = load_csv(args.test_data_path, args.response);
    return rep;
  }
  // Random train/test split at the configured fraction.
  RngStream split_rng(rep_seed, streams::kTestData);
  const std::size_t n_test = std::max<std::size_t>(
      1, static_cast<std::size_t>(static_cast<double>(whole.n()) * args.test_frac));
  std::vector<std::size_t> perm(whole.n());
  for (std::size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  for (std::size_t i = perm.size(); i > 1; --i)
    std::swap(perm[i - 1], perm[split_rng.uniform_index(i)]);
  std::set<std::size_t> test_rows(perm.begin(),
                                  perm.begin() + static_cast<std::ptrdiff_t>(n_test));
  Matrix train_x(whole.n() - n_test, whole.p()), test_x(n_test, whole.p());
  std::vector<double> train_y, test_y;
  std::size_t ti = 0, si = 0;
  for (std::size_t i = 0; i < whole.n(); ++i) {
    if (test_rows.count(i)) {
      for (std::size_t j = 0; j < whole.p(); ++j)
        test_x.at(si, j) = whole.x.at(i, j);
      test_y.push_back(whole.y[i]);
      ++si;
    } else {
      for (std::size_t j = 0; j < whole.p(); ++j)
        train_x.at(ti, j) = whole.x.at(i, j);
      train_y.push_back(whole.y[i]);
      ++ti;
    }
  }
  rep.train = make_dataset(std::move(train_x), std::move(train_y),
                           whole.feature_names);
  rep.test = make_dataset(std::move(test_x), std::move(test_y),
                          whole.feature_names);
  return rep;
}

void apply_config_file(RunArgs& args) {
  if (args.config_path.empty()) return;
  const KvFile cfg = parse_kv_file(args.config_path);
  const auto get = [&](const char* key) -> std::optional<std::string> {
    const auto it = cfg.global.find(key);
    if (it == cfg.global.end()) return std::nullopt;
    return it->second;
  };
  if (auto v = get("generator")) args.generator = *v;
  if (auto v = get("n")) args.n = std::stoull(*v);
  if (auto v = get("sigma2")) args.sigma2 = std::stod(*v);
  if (auto v = get("test_frac")) args.test_frac = std::stod(*v);
  if (auto v = get("test_n")) args.test_n = std::stoull(*v);
  if (auto v = get("data")) args.data_path = *v;
  if (auto v = get("test_data")) args.test_data_path = *v;
  if (auto v = get("response")) args.response = *v;
  if (auto v = get("k")) args.k = std::stoi(*v);
  if (auto v = get("iters")) args.iters = std::stoll(*v);
  if (auto v = get("burn_in")) args.burn_in = std::stoll(*v);
  if (auto v = get("trees")) args.trees = std::stoi(*v);
  if (auto v = get("seed")) args.seed = std::stoull(*v);
  if (auto v = get("reps")) args.reps = std::stoi(*v);
  if (auto v = get("combine_rule")) args.combine_rule = *v;
  if (auto v = get("methods")) {
    args.methods.clear();
    std::stringstream ss(*v);
    std::string tok;
    while (std::getline(ss, tok, ',')) args.methods.push_back(trim(tok));
  }
}

/// Per-method overrides from the config file's [method] sections.
struct MethodOverrides {
  std::optional<int> k;
  std::optional<std::int64_t> iters, burn_in;
  std::optional<int> trees;
  std::optional<std::string> combine_rule;
};

MethodOverrides method_overrides(const RunArgs& args, const std::string& name) {
  MethodOverrides o;
  if (args.config_path.empty()) return o;
  const KvFile cfg = parse_kv_file(args.config_path);
  const auto* sec = cfg.section(name);
  if (!sec) return o;
  const auto get = [&](const char* key) -> std::optional<std::string> {
    const auto it = sec->find(key);
    if (it == sec->end()) return std::nullopt;
    return it->second;
  };
  if (auto v = get("k")) o.k = std::stoi(*v);
  if (auto v = get("iters")) o.iters = std::stoll(*v);
  if (auto v = get("burn_in")) o.burn_in = std::stoll(*v);
  if (auto v = get("trees")) o.trees = std::stoi(*v);
  if (auto v = get("combine_rule")) o.combine_rule = *v;
  return o;
}

int cmd_run(RunArgs args) {
  apply_config_file(args);
  if (args.generator.empty() && args.data_path.empty())
    throw CLI::ValidationError("run", "need either --generator or --data");
  if (args.out.empty()) throw CLI::ValidationError("run", "--out is required");
  if (args.reps < 1) throw CLI::ValidationError("run", "--reps must be >= 1");

  const fs::path root(args.out);
  fs::create_directories(root);

  for (int rep = 0; rep < args.reps; ++rep) {
    const std::uint64_t rep_seed = args.seed + static_cast<std::uint64_t>(rep);
    const fs::path rep_dir = root / rep_dir_name(rep);
    fs::create_directories(rep_dir);

    const RepData data = prepare_rep_data(args, rep_seed);
    save_dataset_csv(rep_dir / "train.csv", data.train);
    save_dataset_csv(rep_dir / "test.csv", data.test);
    if (data.has_truth) {
      save_column_csv(rep_dir / "truef_train.csv", "f", data.truef_train);
      save_column_csv(rep_dir / "truef_test.csv", "f", data.truef_test);
      save_sidecar(rep_dir / "train.meta",
                   {args.generator, rep_seed, data.sigma2_true});
    }

    for (const std::string& mname : args.methods) {
      const Method method = method_from_name(mname);
      const MethodOverrides ovr = method_overrides(args, mname);

      MethodConfig cfg;
      cfg.method = method;
      cfg.k = method == Method::kFull ? 1 : ovr.k.value_or(args.k);
      cfg.iterations = ovr.iters.value_or(args.iters);
      cfg.burn_in = ovr.burn_in.value_or(args.burn_in);
      cfg.seed = rep_seed;
      cfg.bart.m = ovr.trees.value_or(args.trees);
      const CombineRule rule =
          rule_from_name(ovr.combine_rule.value_or(args.combine_rule), method);
      cfg.combine = rule;
      cfg.validate();

      const fs::path mdir = rep_dir / method_name(method);
      fs::create_directories(mdir);

      RunOptions opts;
      opts.workers = args.workers;
      opts.stream_dir = mdir;
      opts.keep_draws = false;  // combine re-reads the streamed files

      std::cout << "rep " << rep << " " << method_name(method) << " (K="
                << cfg.k << ", " << cfg.iterations << " iters)..." << std::flush;
      const auto outs = run_chains(data.train, data.test.x, cfg, opts);

      std::vector<fs::path> files;
      for (const auto& o : outs) files.push_back(o.file);
      const CombinedPosterior comb = combine_files(files, method, rule);
      save_combined(mdir / "combined.bin", comb, method, cfg.k);

      KvWriter meta(mdir / "meta.txt");
      meta.kv("method", method_name(method));
      meta.kv("rep", rep);
      meta.kv("k", cfg.k);
      meta.kv("iterations", cfg.iterations);
      meta.kv("burn_in", cfg.burn_in);
      meta.kv("trees", cfg.bart.m);
      meta.kv("seed", cfg.seed);
      meta.kv("combine_rule", rule_name(rule));
      double sec_mean = 0.0;
      for (const auto& o : outs) sec_mean += o.seconds_per_iteration;
      sec_mean /= static_cast<double>(outs.size());
      meta.kv("seconds_per_iteration", fmt(sec_mean));
      for (const auto& o : outs) {
        const std::string prefix = "chain_" + std::to_string(o.shard_id);
        meta.kv(prefix + ".shard_size", o.shard_size);
        meta.kv(prefix + ".seconds_per_iteration", fmt(o.seconds_per_iteration));
        meta.kv(prefix + ".lambda", fmt(o.hyper.lambda));
        meta.kv(prefix + ".mu_mu", fmt(o.hyper.mu_mu));
        meta.kv(prefix + ".sigma_mu", fmt(o.hyper.sigma_mu));
        for (MoveKind kind : {MoveKind::kGrow, MoveKind::kPrune,
                              MoveKind::kChange, MoveKind::kSwap}) {
          const auto i = static_cast<std::size_t>(kind);
          meta.kv(prefix + ".proposed_" + move_name(kind), o.counters.proposed[i]);
          meta.kv(prefix + ".accepted_" + move_name(kind), o.counters.accepted[i]);
        }
      }
      std::cout << " done (" << fmt2(sec_mean, 5) << " s/iter)\n";
    }
  }

  KvWriter manifest(root / "manifest.txt");
  manifest.kv("command", "run");
  manifest.kv("seed", args.seed);
  manifest.kv("replications", args.reps);
  manifest.kv("workers", args.workers);
  if (!args.generator.empty()) {
    manifest.kv("generator", args.generator);
    manifest.kv("n", args.n);
    manifest.kv("sigma2", fmt(args.sigma2));
  } else {
    manifest.kv("data", args.data_path);
    manifest.kv("response", args.response);
  }
  manifest.kv("test_frac", fmt(args.test_frac));
  std::string mlist;
  for (const auto& m : args.methods) mlist += (mlist.empty() ? "" : ",") + m;
  manifest.kv("methods", mlist);
  for (const std::string& mname : args.methods) {
    const Method method = method_from_name(mname);
    const MethodOverrides ovr = method_overrides(args, mname);
    manifest.section("method " + mname);
    manifest.kv("k", method == Method::kFull ? 1 : ovr.k.value_or(args.k));
    manifest.kv("iterations", ovr.iters.value_or(args.iters));
    manifest.kv("burn_in", ovr.burn_in.value_or(args.burn_in));
    manifest.kv("trees", ovr.trees.value_or(args.trees));
    manifest.kv("combine_rule",
                rule_name(rule_from_name(
                    ovr.combine_rule.value_or(args.combine_rule), method)));
  }
  std::cout << "run directory: " << root.string() << "\n";
  return 0;
}

// ---------------------------------------------------------------------------
// combine (re-combination under a different rule)
// ---------------------------------------------------------------------------

struct CombineArgs {
  std::string run_dir;
  std::string method;
  std::string rule = "default";
};

int cmd_combine(const CombineArgs& args) {
  const fs::path root(args.run_dir);
  const Method method = method_from_name(args.method);
  const CombineRule rule = rule_from_name(args.rule, method);
  bool found = false;
  for (int rep = 0;; ++rep) {
    const fs::path mdir = root / rep_dir_name(rep) / method_name(method);
    if (!fs::exists(mdir)) break;
    found = true;
    const auto files = chain_files_in(mdir);
    if (files.empty())
      throw std::runtime_error("no chain files in " + mdir.string());
    const DrawReader head(files[0]);
    const int k = head.header().k;
    const CombinedPosterior comb = combine_files(files, method, rule);
    save_combined(mdir / "combined.bin", comb, method, k);

    // record the rule actually used
    KvFile meta = parse_kv_file(mdir / "meta.txt");
    meta.global["combine_rule"] = rule_name(rule);
    KvWriter w(mdir / "meta.txt");
    for (const auto& [key, value] : meta.global) w.kv(key, value);
    std::cout << "recombined " << mdir.string() << " with " << rule_name(rule)
              << "\n";
  }
  if (!found)
    throw std::runtime_error("no " + std::string(method_name(method)) +
                             " outputs under " + root.string());
  return 0;
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

struct ReportArgs {
  std::string run_dir;
  int point = 0;
  double level = 0.95;
  int pi_reps = 1000;
};

struct MethodRepMetrics {
  double train_rmse = 0.0, test_rmse = 0.0;
  double tree_nodes = 0.0;
  double sigma2_mean = 0.0;
  Interval sigma2_ci{0.0, 0.0};
  double train_cred = -1.0, test_cred = -1.0;  // -1 = unavailable
  double train_pred = -1.0, test_pred = -1.0;
  MoveCounters counters;
  double seconds_per_iteration = 0.0;
  int k = 1;
  std::string combine_rule;
};

struct ColumnBlock {
  std::size_t begin = 0, end = 0;
  Matrix values;  // draws x (end-begin)
};

/// Extract a block of train or test evaluation columns from a draw file.
ColumnBlock read_columns(const fs::path& file, bool test_side,
                         std::size_t begin, std::size_t end) {
  DrawReader reader(file);
  const std::size_t rows = [&] {
    std::size_t c = 0;
    while (reader.next()) ++c;
    return c;
  }();
  reader.rewind();
  ColumnBlock block;
  block.begin = begin;
  block.end = end;
  block.values = Matrix(rows, end - begin);
  std::size_t s = 0;
  while (auto rec = reader.next()) {
    const auto& src = test_side ? rec->fhat_test : rec->fhat_train;
    for (std::size_t c = begin; c < end; ++c)
      block.values.at(s, c - begin) = src[c];
    ++s;
  }
  return block;
}

struct CombinedStats {
  std::size_t draws = 0;
  std::size_t n_train = 0, n_test = 0;
  std::vector<double> mean_train, mean_test;
  std::vector<double> sigma2;
};

CombinedStats scan_combined(const fs::path& file) {
  DrawReader reader(file);
  CombinedStats s;
  s.n_train = reader.header().n_train_eval;
  s.n_test = reader.header().n_test_eval;
  s.mean_train.assign(s.n_train, 0.0);
  s.mean_test.assign(s.n_test, 0.0);
  while (auto rec = reader.next()) {
    ++s.draws;
    s.sigma2.push_back(rec->sigma2);
    for (std::size_t i = 0; i < s.n_train; ++i) s.mean_train[i] += rec->fhat_train[i];
    for (std::size_t i = 0; i < s.n_test; ++i) s.mean_test[i] += rec->fhat_test[i];
  }
  for (auto& v : s.mean_train) v /= static_cast<double>(s.draws);
  for (auto& v : s.mean_test) v /= static_cast<double>(s.draws);
  return s;
}

constexpr std::size_t kBlockCells = 40'000'000;  // ~320 MB of doubles per pass

/// Per-point credible coverage, streamed in column blocks.
double blockwise_ci_coverage(const fs::path& file, bool test_side,
                             const std::vector<double>& truth, double level) {
  std::size_t covered = 0;
  const std::size_t points = truth.size();
  DrawReader head(file);
  std::size_t rows = 0;
  while (head.next()) ++rows;
  const std::size_t block_cols = std::max<std::size_t>(1, kBlockCells / std::max<std::size_t>(rows, 1));
  std::vector<double> column(rows);
  for (std::size_t begin = 0; begin < points; begin += block_cols) {
    const std::size_t end = std::min(points, begin + block_cols);
    const ColumnBlock block = read_columns(file, test_side, begin, end);
    for (std::size_t c = begin; c < end; ++c) {
      for (std::size_t s = 0; s < rows; ++s)
        column[s] = block.values.at(s, c - begin);
      const Interval ci = quantile_interval(column, level);
      if (truth[c] >= ci.lower && truth[c] <= ci.upper) ++covered;
    }
  }
  return static_cast<double>(covered) / static_cast<double>(points);
}

/// Per-point prediction-interval coverage, streamed in column blocks.
double blockwise_pi_coverage(const fs::path& file, bool test_side,
                             const std::vector<double>& truth,
                             double sigma2_true,
                             const std::vector<double>& sigma2_draws,
                             double level, int n_rep, RngStream& rng) {
  const std::size_t points = truth.size();
  const std::size_t rows = sigma2_draws.size();
  const std::size_t block_cols =
      std::max<std::size_t>(1, kBlockCells / std::max<std::size_t>(rows, 1));
  double total = 0.0;
  std::vector<double> pred(rows);
  const double true_sd = std::sqrt(sigma2_true);
  std::vector<double> noise_sd(rows);
  for (std::size_t s = 0; s < rows; ++s) noise_sd[s] = std::sqrt(sigma2_draws[s]);
  for (std::size_t begin = 0; begin < points; begin += block_cols) {
    const std::size_t end = std::min(points, begin + block_cols);
    const ColumnBlock block = read_columns(file, test_side, begin, end);
    for (std::size_t c = begin; c < end; ++c) {
      double center = 0.0;
      for (std::size_t s = 0; s < rows; ++s)
        center += block.values.at(s, c - begin);
      center /= static_cast<double>(rows);
      for (std::size_t s = 0; s < rows; ++s)
        pred[s] = center + rng.normal(0.0, noise_sd[s]);
      const Interval pi = quantile_interval(pred, level);
      int inside = 0;
      for (int r = 0; r < n_rep; ++r) {
        const double fresh = rng.normal(truth[c], true_sd);
        if (fresh >= pi.lower && fresh <= pi.upper) ++inside;
      }
      total += static_cast<double>(inside) / static_cast<double>(n_rep);
    }
  }
  return total / static_cast<double>(points);
}

std::vector<std::string> detect_methods(const fs::path& rep_dir) {
  std::vector<std::string> found;
  for (const char* name : {"cmc", "lisa", "modlisa", "full"})
    if (fs::exists(rep_dir / name / "combined.bin")) found.emplace_back(name);
  return found;
}

MethodRepMetrics analyze_method_rep(const fs::path& rep_dir,
                                    const std::string& mname,
                                    const ReportArgs& args) {
  MethodRepMetrics m;
  const fs::path mdir = rep_dir / mname;
  const KvFile meta = parse_kv_file(mdir / "meta.txt");
  m.k = std::stoi(meta.global.at("k"));
  m.combine_rule = meta.global.count("combine_rule")
                       ? meta.global.at("combine_rule")
                       : "";
  m.seconds_per_iteration = std::stod(meta.global.at("seconds_per_iteration"));

  const bool has_truth = fs::exists(rep_dir / "truef_train.csv");
  const std::vector<double> truef_train =
      has_truth ? load_column_csv(rep_dir / "truef_train.csv")
                : load_csv(rep_dir / "train.csv", "y").y;
  const std::vector<double> truef_test =
      has_truth ? load_column_csv(rep_dir / "truef_test.csv")
                : load_csv(rep_dir / "test.csv", "y").y;

  // chain-level summaries: tree sizes, acceptance counters, pooled sigma2
  const auto chains = chain_files_in(mdir);
  const int trees = std::stoi(meta.global.at("trees"));
  double node_sum = 0.0;
  std::size_t node_count = 0;
  std::vector<double> pooled_sigma2;
  for (const auto& file : chains) {
    DrawReader reader(file);
    std::array<std::uint64_t, 4> last_prop{}, last_acc{};
    while (auto rec = reader.next()) {
      const double nodes_per_tree =
          (2.0 * static_cast<double>(rec->total_leaves) - trees) / trees;
      node_sum += nodes_per_tree;
      ++node_count;
      pooled_sigma2.push_back(rec->sigma2);
      last_prop = rec->proposed;
      last_acc = rec->accepted;
    }
    for (std::size_t i = 0; i < 4; ++i) {
      m.counters.proposed[i] += last_prop[i];
      m.counters.accepted[i] += last_acc[i];
    }
  }
  m.tree_nodes = node_sum / static_cast<double>(node_count);

  // combined posterior: RMSE from per-point means; sigma2 summary
  const fs::path cfile = mdir / "combined.bin";
  const CombinedStats comb = scan_combined(cfile);
  m.train_rmse = rmse(truef_train, comb.mean_train);
  m.test_rmse = rmse(truef_test, comb.mean_test);

  // full and lisa/modlisa report pooled chain draws; cmc the combined draws
  const Method method = method_from_name(mname);
  const std::vector<double>& sigma2_src =
      (method == Method::kCmc) ? comb.sigma2 : pooled_sigma2;
  m.sigma2_mean = 0.0;
  for (double v : sigma2_src) m.sigma2_mean += v;
  m.sigma2_mean /= static_cast<double>(sigma2_src.size());
  m.sigma2_ci = quantile_interval(sigma2_src, args.level);

  // coverage (needs the generating truth)
  if (has_truth) {
    m.train_cred = blockwise_ci_coverage(cfile, false, truef_train, args.level);
    m.test_cred = blockwise_ci_coverage(cfile, true, truef_test, args.level);
    const auto sidecar = load_sidecar(rep_dir / "train.meta");
    RngStream pi_rng(sidecar.seed, streams::kPredictive);
    m.train_pred =
        blockwise_pi_coverage(cfile, false, truef_train, sidecar.sigma2,
                              comb.sigma2, args.level, args.pi_reps, pi_rng);
    m.test_pred =
        blockwise_pi_coverage(cfile, true, truef_test, sidecar.sigma2,
                              comb.sigma2, args.level, args.pi_reps, pi_rng);
  }
  return m;
}

void emit_ecdf_series(const fs::path& plots, const fs::path& mdir,
                      const std::string& mname, bool test_side, int point) {
  const fs::path cfile = mdir / "combined.bin";
  const ColumnBlock block = read_columns(cfile, test_side, point, point + 1);
  std::vector<double> draws(block.values.rows);
  for (std::size_t s = 0; s < draws.size(); ++s) draws[s] = block.values.at(s, 0);
  const Ecdf f{draws};
  const std::string side = test_side ? "test" : "train";
  std::ofstream out(plots / ("ecdf_" + side + "_point" + std::to_string(point) +
                             "_" + mname + ".csv"));
  out << "t,F\n";
  for (std::size_t i = 0; i < f.sorted.size(); ++i) {
    if (i + 1 < f.sorted.size() && f.sorted[i + 1] == f.sorted[i]) continue;
    out << fmt(f.sorted[i]) << ','
        << fmt(static_cast<double>(i + 1) / static_cast<double>(f.sorted.size()))
        << '\n';
  }
}

/// Per-point Cramer-von Mises distances of one method to the single-machine
/// reference, emitted against the reference's mean prediction.
void emit_omega2_series(const fs::path& plots, const fs::path& rep_dir,
                        const std::string& mname, bool test_side) {
  const fs::path ref_file = rep_dir / "full" / "combined.bin";
  const fs::path mfile = rep_dir / mname / "combined.bin";

  DrawReader head(ref_file);
  const std::size_t points =
      test_side ? head.header().n_test_eval : head.header().n_train_eval;
  std::size_t ref_rows = 0;
  while (head.next()) ++ref_rows;

  const std::size_t block_cols =
      std::max<std::size_t>(1, kBlockCells / (2 * std::max<std::size_t>(ref_rows, 1)));
  const std::string side = test_side ? "test" : "train";
  std::ofstream out(plots / ("omega2_" + side + "_" + mname + ".csv"));
  out << "mean_fhat_single,omega2\n";
  std::vector<std::pair<double, double>> series;
  for (std::size_t begin = 0; begin < points; begin += block_cols) {
    const std::size_t end = std::min(points, begin + block_cols);
    const ColumnBlock ref = read_columns(ref_file, test_side, begin, end);
    const ColumnBlock other = read_columns(mfile, test_side, begin, end);
    for (std::size_t c = begin; c < end; ++c) {
      std::vector<double> a(ref.values.rows), b(other.values.rows);
      double mean_ref = 0.0;
      for (std::size_t s = 0; s < a.size(); ++s) {
        a[s] = ref.values.at(s, c - begin);
        mean_ref += a[s];
      }
      mean_ref /= static_cast<double>(a.size());
      for (std::size_t s = 0; s < b.size(); ++s)
        b[s] = other.values.at(s, c - begin);
      series.emplace_back(mean_ref, cvm_distance(Ecdf{a}, Ecdf{b}));
    }
  }
  std::sort(series.begin(), series.end());
  for (const auto& [x, w2] : series) out << fmt(x) << ',' << fmt(w2) << '\n';
}

std::string pct(double v) {
  if (v < 0.0) return "--";
  return fmt2(100.0 * v, 2) + "%";
}

std::string rate_str(const MoveCounters& c, MoveKind k) {
  const auto rates = acceptance_summary(c);
  const auto r = rates[k];
  if (!r) return "--";
  return fmt2(100.0 * *r, 1) + "%";
}

int cmd_report(const ReportArgs& args) {
  const fs::path root(args.run_dir);
  if (!fs::exists(root / "manifest.txt"))
    throw std::runtime_error("not a run directory (no manifest.txt): " +
                             root.string());

  std::vector<fs::path> rep_dirs;
  for (int rep = 0;; ++rep) {
    const fs::path d = root / rep_dir_name(rep);
    if (!fs::exists(d)) break;
    rep_dirs.push_back(d);
  }
  if (rep_dirs.empty()) throw std::runtime_error("no rep_* directories");

  const auto methods = detect_methods(rep_dirs[0]);
  if (methods.empty()) {
    std::string missing = "run directory incomplete; missing per-method "
                          "combined.bin under " + rep_dirs[0].string();
    throw std::runtime_error(missing);
  }

  // verify every rep has every method before computing anything
  for (const auto& rd : rep_dirs)
    for (const auto& mname : methods)
      if (!fs::exists(rd / mname / "combined.bin") ||
          !fs::exists(rd / mname / "meta.txt"))
        throw std::runtime_error("incomplete run: missing " +
                                 (rd / mname).string());

  std::map<std::string, MethodRepMetrics> averaged;
  for (const auto& mname : methods) {
    MethodRepMetrics acc;
    acc.train_cred = acc.test_cred = acc.train_pred = acc.test_pred = 0.0;
    bool has_coverage = true;
    for (const auto& rd : rep_dirs) {
      const MethodRepMetrics one = analyze_method_rep(rd, mname, args);
      acc.train_rmse += one.train_rmse;
      acc.test_rmse += one.test_rmse;
      acc.tree_nodes += one.tree_nodes;
      acc.sigma2_mean += one.sigma2_mean;
      acc.sigma2_ci.lower += one.sigma2_ci.lower;
      acc.sigma2_ci.upper += one.sigma2_ci.upper;
      if (one.train_cred < 0.0) {
        has_coverage = false;
      } else {
        acc.train_cred += one.train_cred;
        acc.test_cred += one.test_cred;
        acc.train_pred += one.train_pred;
        acc.test_pred += one.test_pred;
      }
      acc.seconds_per_iteration += one.seconds_per_iteration;
      for (std::size_t i = 0; i < 4; ++i) {
        acc.counters.proposed[i] += one.counters.proposed[i];
        acc.counters.accepted[i] += one.counters.accepted[i];
      }
      acc.k = one.k;
      acc.combine_rule = one.combine_rule;
    }
    const double r = static_cast<double>(rep_dirs.size());
    acc.train_rmse /= r;
    acc.test_rmse /= r;
    acc.tree_nodes /= r;
    acc.sigma2_mean /= r;
    acc.sigma2_ci.lower /= r;
    acc.sigma2_ci.upper /= r;
    if (has_coverage) {
      acc.train_cred /= r;
      acc.test_cred /= r;
      acc.train_pred /= r;
      acc.test_pred /= r;
    } else {
      acc.train_cred = acc.test_cred = acc.train_pred = acc.test_pred = -1.0;
    }
    acc.seconds_per_iteration /= r;
    averaged[mname] = acc;
  }

  const fs::path report_dir = root / "report";
  const fs::path plots = report_dir / "plots";
  fs::create_directories(plots);

  std::ostringstream table;
  table << "Summary (averaged over " << rep_dirs.size() << " replication(s))\n";
  table << "Method      K   TrainRMSE  TestRMSE  TreeNodes  AvgSigma2  Sigma2CI95\n";
  for (const auto& mname : methods) {
    const auto& m = averaged[mname];
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %3d  %9.4f  %8.4f  %9.2f  %9.4f  [%.4f, %.4f]\n",
                  mname.c_str(), m.k, m.train_rmse, m.test_rmse, m.tree_nodes,
                  m.sigma2_mean, m.sigma2_ci.lower, m.sigma2_ci.upper);
    table << line;
  }

  table << "\nCoverage of nominal " << fmt2(100.0 * args.level, 0)
        << "% intervals\n";
  table << "Method      TrainPredCov  TestPredCov  TrainCredCov  TestCredCov\n";
  for (const auto& mname : methods) {
    const auto& m = averaged[mname];
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %12s %12s %13s %12s\n", mname.c_str(),
                  pct(m.train_pred).c_str(), pct(m.test_pred).c_str(),
                  pct(m.train_cred).c_str(), pct(m.test_cred).c_str());
    table << line;
  }

  table << "\nAverage acceptance rates of tree proposal moves\n";
  table << "Method      GROW    PRUNE   CHANGE\n";
  for (const auto& mname : methods) {
    const auto& m = averaged[mname];
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %-7s %-7s %-7s\n", mname.c_str(),
                  rate_str(m.counters, MoveKind::kGrow).c_str(),
                  rate_str(m.counters, MoveKind::kPrune).c_str(),
                  rate_str(m.counters, MoveKind::kChange).c_str());
    table << line;
  }

  table << "\nRun time\n";
  table << "Method      Sec/iteration  Speed-up\n";
  const bool have_full = averaged.count("full") > 0;
  for (const auto& mname : methods) {
    const auto& m = averaged[mname];
    std::string speed = "--";
    if (have_full && mname != "full")
      speed = fmt2(speedup_percent(m.seconds_per_iteration,
                                   averaged["full"].seconds_per_iteration),
                   1) + "%";
    char line[256];
    std::snprintf(line, sizeof(line), "%-10s %13.5f  %s\n", mname.c_str(),
                  m.seconds_per_iteration, speed.c_str());
    table << line;
  }

  std::cout << table.str();
  {
    std::ofstream rpt(report_dir / "report.txt");
    rpt << table.str();
  }

  {
    std::ofstream csv(report_dir / "metrics.csv");
    csv << "method,metric,value\n";
    for (const auto& mname : methods) {
      const auto& m = averaged[mname];
      const auto row = [&](const std::string& metric, double v) {
        csv << mname << ',' << metric << ',' << fmt(v) << '\n';
      };
      row("train_rmse", m.train_rmse);
      row("test_rmse", m.test_rmse);
      row("tree_nodes", m.tree_nodes);
      row("sigma2_mean", m.sigma2_mean);
      row("sigma2_ci_lower", m.sigma2_ci.lower);
      row("sigma2_ci_upper", m.sigma2_ci.upper);
      if (m.train_cred >= 0.0) {
        row("train_cred_cov", m.train_cred);
        row("test_cred_cov", m.test_cred);
        row("train_pred_cov", m.train_pred);
        row("test_pred_cov", m.test_pred);
      }
      row("seconds_per_iteration", m.seconds_per_iteration);
      const auto rates = acceptance_summary(m.counters);
      for (MoveKind kind : {MoveKind::kGrow, MoveKind::kPrune, MoveKind::kChange})
        if (rates[kind])
          row(std::string("accept_") + move_name(kind), *rates[kind]);
    }
  }

  // plot data: ECDF series at the chosen point, omega2-vs-mean-prediction
  for (const auto& mname : methods) {
    emit_ecdf_series(plots, rep_dirs[0] / mname, mname, false, args.point);
    emit_ecdf_series(plots, rep_dirs[0] / mname, mname, true, args.point);
  }
  if (have_full) {
    for (const auto& mname : methods) {
      if (mname == "full") continue;
      emit_omega2_series(plots, rep_dirs[0], mname, false);
      emit_omega2_series(plots, rep_dirs[0], mname, true);
    }
  }
  std::cout << "\nreport written to " << report_dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Divide-and-conquer BART: likelihood-inflated sub-posterior "
               "sampling (LISA/modLISA), consensus Monte Carlo, and a "
               "single-machine reference"};
  app.require_subcommand(1);

  SimulateArgs sim;
  auto* simulate = app.add_subcommand("simulate", "generate train/test data");
  simulate->add_option("--generator", sim.generator,
                       "friedman | piecewise | poly");
  simulate->add_option("--n", sim.n, "training rows");
  simulate->add_option("--test-n", sim.test_n, "test rows (default n/4)");
  simulate->add_option("--sigma2", sim.sigma2, "noise variance");
  simulate->add_option("--seed", sim.seed, "root seed");
  simulate->add_option("--out", sim.out, "output directory")->required();

  RunArgs run;
  auto* runc = app.add_subcommand("run", "run chains and combine draws");
  runc->add_option("--generator", run.generator, "simulate data inline");
  runc->add_option("--n", run.n, "training rows (generator mode)");
  runc->add_option("--sigma2", run.sigma2, "noise variance (generator mode)");
  runc->add_option("--test-frac", run.test_frac, "test fraction");
  runc->add_option("--test-n", run.test_n, "test rows (generator mode)");
  runc->add_option("--data", run.data_path, "train CSV (real-data mode)");
  runc->add_option("--test-data", run.test_data_path, "test CSV");
  runc->add_option("--response", run.response, "response column name");
  runc->add_option("--method", run.methods,
                   "methods to run (repeatable)")->delimiter(',');
  runc->add_option("--k", run.k, "number of shards");
  runc->add_option("--iters", run.iters, "MCMC iterations");
  runc->add_option("--burn-in", run.burn_in, "discarded iterations");
  runc->add_option("--trees", run.trees, "trees per forest");
  runc->add_option("--seed", run.seed, "root seed");
  runc->add_option("--reps", run.reps, "data replications");
  runc->add_option("--combine-rule", run.combine_rule,
                   "default | uniform | inverse-variance");
  runc->add_option("--workers", run.workers, "max concurrent chains");
  runc->add_option("--config", run.config_path,
                   "key-value config with per-method sections");
  runc->add_option("--out", run.out, "run directory")->required();

  CombineArgs comb;
  auto* combc = app.add_subcommand("combine", "re-combine chain outputs");
  combc->add_option("--run", comb.run_dir, "run directory")->required();
  combc->add_option("--method", comb.method, "method to recombine")->required();
  combc->add_option("--combine-rule", comb.rule,
                    "default | uniform | inverse-variance");

  ReportArgs rep;
  auto* repc = app.add_subcommand("report", "tables and plot data from a run");
  repc->add_option("--run", rep.run_dir, "run directory")->required();
  repc->add_option("--point", rep.point, "evaluation point for ECDF series");
  repc->add_option("--level", rep.level, "interval level");
  repc->add_option("--pi-reps", rep.pi_reps, "fresh samples per point for PI coverage");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*simulate) return cmd_simulate(sim);
    if (*runc) return cmd_run(run);
    if (*combc) return cmd_combine(comb);
    if (*repc) return cmd_report(rep);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::invalid_argument& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
