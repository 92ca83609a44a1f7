#pragma once

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "lisa/dataset.hpp"

namespace lisa {

enum class CategoricalPolicy { kOneHot, kReject };

/// Ingestion failure carrying the 1-based row and column of the offending cell
/// (0 when the location does not apply).
class CsvError : public std::runtime_error {
 public:
  CsvError(std::string msg, std::size_t row = 0, std::size_t col = 0)
      : std::runtime_error(std::move(msg)), row_(row), col_(col) {}
  std::size_t row() const { return row_; }
  std::size_t col() const { return col_; }

 private:
  std::size_t row_;
  std::size_t col_;
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::optional<double> parse_double(const std::string& s) {
  const std::string t = trim(s);
  if (t.empty()) return std::nullopt;
  double v = 0.0;
  const char* first = t.data();
  const char* last = t.data() + t.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc{} || ptr != last) return std::nullopt;
  return v;
}

inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace detail

/// Load a comma-delimited file with a header row. The response column is
/// extracted by name; other columns become predictors. Non-numeric columns are
/// one-hot encoded (one indicator per level) under kOneHot and rejected under
/// kReject. Empty cells are always rejected.
inline Dataset load_csv(const std::filesystem::path& path,
                        const std::string& response_column,
                        CategoricalPolicy policy = CategoricalPolicy::kOneHot) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());

  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty file: " + path.string());
  std::vector<std::string> header = detail::split_csv_line(line);
  for (auto& h : header) h = detail::trim(h);
  if (header.empty()) throw CsvError("empty header: " + path.string());

  std::ptrdiff_t response_idx = -1;
  for (std::size_t j = 0; j < header.size(); ++j)
    if (header[j] == response_column) response_idx = static_cast<std::ptrdiff_t>(j);
  if (response_idx < 0)
    throw CsvError("response column '" + response_column + "' not found in " +
                   path.string());

  std::vector<std::vector<std::string>> cells;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (detail::trim(line).empty()) continue;
    auto row = detail::split_csv_line(line);
    if (row.size() != header.size())
      throw CsvError("row " + std::to_string(row_no) + " has " +
                         std::to_string(row.size()) + " cells, expected " +
                         std::to_string(header.size()),
                     row_no);
    cells.push_back(std::move(row));
  }
  if (cells.empty()) throw CsvError("no data rows in " + path.string());

  const std::size_t n = cells.size();
  const std::size_t n_cols = header.size();

  // A column is numeric when every cell parses as a double.
  std::vector<bool> numeric(n_cols, true);
  for (std::size_t j = 0; j < n_cols; ++j) {
    for (std::size_t i = 0; i < n; ++i) {
      const std::string cell = detail::trim(cells[i][j]);
      if (cell.empty())
        throw CsvError("empty cell at row " + std::to_string(i + 2) +
                           ", column '" + header[j] + "'",
                       i + 2, j + 1);
      if (!detail::parse_double(cell)) numeric[j] = false;
    }
  }
  if (!numeric[response_idx])
    throw CsvError("response column '" + response_column +
                   "' contains non-numeric cells");

  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i)
    y[i] = *detail::parse_double(cells[i][response_idx]);

  std::vector<std::string> names;
  std::vector<std::vector<double>> columns;
  for (std::size_t j = 0; j < n_cols; ++j) {
    if (static_cast<std::ptrdiff_t>(j) == response_idx) continue;
    if (numeric[j]) {
      std::vector<double> col(n);
      for (std::size_t i = 0; i < n; ++i)
        col[i] = *detail::parse_double(cells[i][j]);
      columns.push_back(std::move(col));
      names.push_back(header[j]);
    } else {
      if (policy == CategoricalPolicy::kReject) {
        std::size_t bad = 0;
        for (std::size_t i = 0; i < n && bad == 0; ++i)
          if (!detail::parse_double(cells[i][j])) bad = i + 2;
        throw CsvError("unparseable cell at row " + std::to_string(bad) +
                           ", column '" + header[j] + "'",
                       bad, j + 1);
      }
      std::set<std::string> levels;
      for (std::size_t i = 0; i < n; ++i) levels.insert(detail::trim(cells[i][j]));
      for (const auto& level : levels) {
        std::vector<double> col(n, 0.0);
        for (std::size_t i = 0; i < n; ++i)
          if (detail::trim(cells[i][j]) == level) col[i] = 1.0;
        columns.push_back(std::move(col));
        names.push_back(header[j] + "=" + level);
      }
    }
  }

  Matrix x(n, columns.size());
  for (std::size_t j = 0; j < columns.size(); ++j)
    for (std::size_t i = 0; i < n; ++i) x.at(i, j) = columns[j][i];
  return make_dataset(std::move(x), std::move(y), std::move(names));
}

/// Write predictors plus response, one header row, 17 significant digits so a
/// load_csv round trip reproduces every double exactly.
inline void save_dataset_csv(const std::filesystem::path& path,
                             const Dataset& data,
                             const std::string& response_name = "y") {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  for (std::size_t j = 0; j < data.p(); ++j) {
    out << (data.feature_names.empty() ? "x" + std::to_string(j + 1)
                                       : data.feature_names[j]);
    out << ',';
  }
  out << response_name << '\n';
  for (std::size_t i = 0; i < data.n(); ++i) {
    for (std::size_t j = 0; j < data.p(); ++j)
      out << detail::format_double(data.x.at(i, j)) << ',';
    out << detail::format_double(data.y[i]) << '\n';
  }
}

/// Single named column, used for true-f sidecars and draw exports.
inline void save_column_csv(const std::filesystem::path& path,
                            const std::string& name,
                            const std::vector<double>& values) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  out << name << '\n';
  for (double v : values) out << detail::format_double(v) << '\n';
}

inline std::vector<double> load_column_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw CsvError("empty file: " + path.string());
  std::vector<double> values;
  std::size_t row_no = 1;
  while (std::getline(in, line)) {
    ++row_no;
    if (detail::trim(line).empty()) continue;
    const auto v = detail::parse_double(line);
    if (!v)
      throw CsvError("unparseable cell at row " + std::to_string(row_no),
                     row_no, 1);
    values.push_back(*v);
  }
  return values;
}

/// Draw matrix export: one row per draw, one column per parameter.
inline void save_draws_csv(const std::filesystem::path& path,
                           const Matrix& draws,
                           const std::vector<std::string>& names = {}) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  for (std::size_t j = 0; j < draws.cols; ++j) {
    if (j) out << ',';
    out << (names.empty() ? "p" + std::to_string(j + 1) : names[j]);
  }
  out << '\n';
  for (std::size_t i = 0; i < draws.rows; ++i) {
    for (std::size_t j = 0; j < draws.cols; ++j) {
      if (j) out << ',';
      out << detail::format_double(draws.at(i, j));
    }
    out << '\n';
  }
}

/// Generation metadata written next to exported datasets.
struct GeneratorSidecar {
  std::string generator;
  std::uint64_t seed = 0;
  double sigma2 = 0.0;
};

inline void save_sidecar(const std::filesystem::path& path,
                         const GeneratorSidecar& meta) {
  std::ofstream out(path);
  if (!out) throw CsvError("cannot write " + path.string());
  out << "generator = " << meta.generator << '\n';
  out << "seed = " << meta.seed << '\n';
  out << "sigma2 = " << detail::format_double(meta.sigma2) << '\n';
}

inline GeneratorSidecar load_sidecar(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw CsvError("cannot open " + path.string());
  GeneratorSidecar meta;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "generator") meta.generator = value;
    if (key == "seed") meta.seed = std::stoull(value);
    if (key == "sigma2") meta.sigma2 = std::stod(value);
  }
  return meta;
}

}  // namespace lisa
