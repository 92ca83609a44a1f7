#pragma once

#include <array>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "lisa/config.hpp"

namespace lisa {

// Append-only binary stream of retained posterior draws, one file per chain.
// Fixed-size header, then fixed-size records; native endianness, re-read
// binary exact.

inline constexpr std::uint32_t kDrawFileMagic = 0x4C495344;  // "LISD"
inline constexpr std::uint32_t kDrawFileVersion = 1;

struct DrawFileHeader {
  std::uint32_t magic = kDrawFileMagic;
  std::uint32_t version = kDrawFileVersion;
  std::int32_t shard_id = 0;  // -1 marks a combined stream
  std::int32_t k = 1;
  std::int32_t method = 0;  // Method enum value
  std::int32_t m = 0;
  std::uint64_t n_train_eval = 0;
  std::uint64_t n_test_eval = 0;
  std::int64_t iterations = 0;
  std::int64_t burn_in = 0;
  std::uint64_t seed = 0;
  std::uint64_t shard_size = 0;
};

/// One retained draw: chain state summary plus f-hat on the designated train
/// and test evaluation points. Counters are cumulative at record time.
struct DrawRecord {
  std::int64_t iteration = 0;
  double sigma2 = 0.0;
  std::int64_t total_leaves = 0;
  std::array<std::uint64_t, 4> proposed{};
  std::array<std::uint64_t, 4> accepted{};
  std::vector<double> fhat_train;
  std::vector<double> fhat_test;
};

class DrawWriter {
 public:
  DrawWriter(const std::filesystem::path& path, const DrawFileHeader& header)
      : header_(header), file_(std::fopen(path.string().c_str(), "wb")) {
    if (!file_) throw std::runtime_error("cannot open for write: " + path.string());
    write_raw(&header_, sizeof(header_));
  }
  ~DrawWriter() {
    if (file_) std::fclose(file_);
  }
  DrawWriter(const DrawWriter&) = delete;
  DrawWriter& operator=(const DrawWriter&) = delete;

  void append(const DrawRecord& rec) {
    if (rec.fhat_train.size() != header_.n_train_eval ||
        rec.fhat_test.size() != header_.n_test_eval)
      throw std::invalid_argument("draw record eval size mismatch");
    write_raw(&rec.iteration, sizeof(rec.iteration));
    write_raw(&rec.sigma2, sizeof(rec.sigma2));
    write_raw(&rec.total_leaves, sizeof(rec.total_leaves));
    write_raw(rec.proposed.data(), sizeof(rec.proposed));
    write_raw(rec.accepted.data(), sizeof(rec.accepted));
    write_raw(rec.fhat_train.data(), rec.fhat_train.size() * sizeof(double));
    write_raw(rec.fhat_test.data(), rec.fhat_test.size() * sizeof(double));
  }

  void flush() {
    if (file_) std::fflush(file_);
  }

 private:
  void write_raw(const void* data, std::size_t bytes) {
    if (std::fwrite(data, 1, bytes, file_) != bytes)
      throw std::runtime_error("draw file write failed");
  }

  DrawFileHeader header_;
  std::FILE* file_;
};

class DrawReader {
 public:
  explicit DrawReader(const std::filesystem::path& path)
      : path_(path), file_(std::fopen(path.string().c_str(), "rb")) {
    if (!file_) throw std::runtime_error("cannot open for read: " + path.string());
    if (std::fread(&header_, sizeof(header_), 1, file_) != 1)
      throw std::runtime_error("truncated draw file: " + path.string());
    if (header_.magic != kDrawFileMagic)
      throw std::runtime_error("not a draw file: " + path.string());
    if (header_.version != kDrawFileVersion)
      throw std::runtime_error("unsupported draw file version: " + path.string());
  }
  ~DrawReader() {
    if (file_) std::fclose(file_);
  }
  DrawReader(const DrawReader&) = delete;
  DrawReader& operator=(const DrawReader&) = delete;

  const DrawFileHeader& header() const { return header_; }

  std::optional<DrawRecord> next() {
    DrawRecord rec;
    if (std::fread(&rec.iteration, sizeof(rec.iteration), 1, file_) != 1)
      return std::nullopt;  // clean EOF boundary
    read_raw(&rec.sigma2, sizeof(rec.sigma2));
    read_raw(&rec.total_leaves, sizeof(rec.total_leaves));
    read_raw(rec.proposed.data(), sizeof(rec.proposed));
    read_raw(rec.accepted.data(), sizeof(rec.accepted));
    rec.fhat_train.resize(header_.n_train_eval);
    rec.fhat_test.resize(header_.n_test_eval);
    read_raw(rec.fhat_train.data(), rec.fhat_train.size() * sizeof(double));
    read_raw(rec.fhat_test.data(), rec.fhat_test.size() * sizeof(double));
    return rec;
  }

  void rewind() {
    if (std::fseek(file_, sizeof(DrawFileHeader), SEEK_SET) != 0)
      throw std::runtime_error("seek failed: " + path_.string());
  }

  std::vector<DrawRecord> read_all() {
    rewind();
    std::vector<DrawRecord> out;
    while (auto rec = next()) out.push_back(std::move(*rec));
    return out;
  }

 private:
  void read_raw(void* data, std::size_t bytes) {
    if (std::fread(data, 1, bytes, file_) != bytes)
      throw std::runtime_error("truncated draw record in " + path_.string());
  }

  std::filesystem::path path_;
  DrawFileHeader header_;
  std::FILE* file_;
};

}  // namespace lisa
