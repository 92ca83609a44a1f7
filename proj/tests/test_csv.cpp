#include <catch2/catch_amalgamated.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "lisa/csv.hpp"
#include "lisa/generate.hpp"

using namespace lisa;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() /
           ("lisa_csv_test_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

}  // namespace

TEST_CASE("numeric csv loads with the response extracted") {
  TempDir tmp;
  const auto p = tmp.path / "a.csv";
  write_file(p, "a,b,y\n1,2,3\n4,5,6\n7,8,9\n");
  const Dataset d = load_csv(p, "y");
  REQUIRE(d.n() == 3);
  REQUIRE(d.p() == 2);
  REQUIRE(d.y == std::vector<double>{3, 6, 9});
  REQUIRE(d.x.at(2, 1) == 8.0);
  REQUIRE(d.feature_names == std::vector<std::string>{"a", "b"});
}

TEST_CASE("categorical column expands to one indicator per level") {
  TempDir tmp;
  const auto p = tmp.path / "c.csv";
  write_file(p, "color,y\nred,1\ngreen,2\nblue,3\nred,4\n");
  const Dataset d = load_csv(p, "y", CategoricalPolicy::kOneHot);
  REQUIRE(d.p() == 3);
  REQUIRE(d.feature_names ==
          std::vector<std::string>{"color=blue", "color=green", "color=red"});
  REQUIRE(d.x.at(0, 2) == 1.0);  // red
  REQUIRE(d.x.at(0, 0) == 0.0);
  REQUIRE(d.x.at(2, 0) == 1.0);  // blue
}

TEST_CASE("csv ingestion error paths carry locations") {
  TempDir tmp;
  const auto p = tmp.path / "bad.csv";

  write_file(p, "a,y\n1,2\n");
  REQUIRE_THROWS_WITH(load_csv(p, "missing"),
                      Catch::Matchers::ContainsSubstring("missing"));

  write_file(p, "");
  REQUIRE_THROWS_AS(load_csv(p, "y"), CsvError);

  write_file(p, "a,y\n1,2\n,3\n");
  try {
    load_csv(p, "y");
    FAIL("expected CsvError");
  } catch (const CsvError& e) {
    REQUIRE(e.row() == 3);
    REQUIRE(e.col() == 1);
  }

  write_file(p, "a,y\nfoo,2\n");
  REQUIRE_THROWS_AS(load_csv(p, "y", CategoricalPolicy::kReject), CsvError);

  write_file(p, "a,y\n1,2,3\n");
  REQUIRE_THROWS_AS(load_csv(p, "y"), CsvError);
}

TEST_CASE("save then load reproduces a generated dataset exactly") {
  TempDir tmp;
  RngStream rng(11, streams::kTrainData);
  const auto sim = generate_friedman(64, 9.0, rng);
  const auto p = tmp.path / "train.csv";
  save_dataset_csv(p, sim.data);
  const Dataset back = load_csv(p, "y");
  REQUIRE(back.x.values == sim.data.x.values);  // bit-exact round trip
  REQUIRE(back.y == sim.data.y);
  REQUIRE(back.feature_names == sim.data.feature_names);
}

TEST_CASE("sidecar round trip") {
  TempDir tmp;
  const auto p = tmp.path / "train.meta";
  save_sidecar(p, {"friedman", 12345, 9.0});
  const auto meta = load_sidecar(p);
  REQUIRE(meta.generator == "friedman");
  REQUIRE(meta.seed == 12345);
  REQUIRE(meta.sigma2 == 9.0);
}

TEST_CASE("column csv round trip") {
  TempDir tmp;
  const auto p = tmp.path / "f.csv";
  const std::vector<double> v{1.5, -2.25, 0.1234567890123456};
  save_column_csv(p, "f", v);
  REQUIRE(load_column_csv(p) == v);
}
