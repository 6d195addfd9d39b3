#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "mdsam/decoder.hpp"
#include "mdsam/trace.hpp"
#include "support/oracles.hpp"
#include "support/random_trace.hpp"

using namespace mdsam;

namespace fs = std::filesystem;

TEST_CASE("image_attention_mass") {
  const AttentionRow uniform{{0.25, 0.25, 0.25, 0.25}, std::nullopt};
  CHECK(image_attention_mass(uniform, {0, 1}) == 0.5);
  CHECK(image_attention_mass(uniform, {0, 3}) == 1.0);
  CHECK(image_attention_mass({{0.0, 0.0}, std::nullopt}, {0, 0}) == 0.0);

  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t n = 2 + trial % 30;
    const AttentionRow row{oracle::stochastic_vec(rng, n), std::nullopt};
    const std::size_t cut = 1 + trial % (n - 1);
    double a = 0.0, all = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      all += row.weights[j];
      if (j < cut) a += row.weights[j];
    }
    const double left = image_attention_mass(row, {0, cut - 1});
    const double right = image_attention_mass(row, {cut, n - 1});
    REQUIRE(std::abs(left - a / all) < 1e-12);
    REQUIRE(left >= 0.0);
    REQUIRE(left <= 1.0);
    REQUIRE(std::abs(left + right - image_attention_mass(row, {0, n - 1})) < 1e-12);
  }
}

TEST_CASE("detect_peaks") {
  CHECK(detect_peaks(std::vector<double>{0.0, 1.0, 0.0}, 0.5).indices ==
        std::vector<std::size_t>{1});
  CHECK(detect_peaks(std::vector<double>{0.1, 0.2, 0.3, 0.4}, 0.0).indices.empty());
  CHECK(detect_peaks(std::vector<double>{0.1, 0.5}, 0.0).indices.empty());
  CHECK(detect_peaks(std::vector<double>{0.0, 1.0, 1.0, 0.0}, 0.0).indices.empty());

  const std::vector<double> series{0.1, 0.5, 0.2, 0.6, 0.3, 0.35, 0.3};
  const auto report = detect_peaks(series, 0.2);
  CHECK(report.indices == std::vector<std::size_t>{1, 3});
  CHECK(std::abs(report.prominences[0] - 0.3) < 1e-12);
  CHECK(std::abs(report.prominences[1] - 0.3) < 1e-12);
  CHECK(detect_peaks(series, 0.01).indices == std::vector<std::size_t>{1, 3, 5});
}

TEST_CASE("detect_peaks: reported peaks re-check independently") {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 500; ++trial) {
    const auto s = oracle::uniform_vec(rng, 3 + trial % 40);
    const double thr = 0.05 * (trial % 5);
    const auto report = detect_peaks(s, thr);
    for (std::size_t p = 0; p < report.count(); ++p) {
      const std::size_t i = report.indices[p];
      REQUIRE(s[i] > s[i - 1]);
      REQUIRE(s[i] > s[i + 1]);
      // Bases by exhaustive window scan: lowest point on each side before a higher sample.
      double left = s[i], right = s[i];
      for (std::size_t j = 0; j < i; ++j) {
        bool blocked = false;
        for (std::size_t m = j; m < i; ++m) blocked = blocked || s[m] > s[i];
        if (!blocked) left = std::min(left, s[j]);
      }
      for (std::size_t j = i + 1; j < s.size(); ++j) {
        bool blocked = false;
        for (std::size_t m = i + 1; m <= j; ++m) blocked = blocked || s[m] > s[i];
        if (!blocked) right = std::min(right, s[j]);
      }
      REQUIRE(std::abs(report.prominences[p] - (s[i] - std::max(left, right))) < 1e-15);
      REQUIRE(report.prominences[p] >= thr);
    }
  }
}

TEST_CASE("compare_traces") {
  std::mt19937_64 rng(14);
  const DecodeTrace base = testing::random_trace(rng, 6, 3);
  const auto self = compare_traces(base, base);
  for (double d : self.deltas) CHECK(d == 0.0);
  CHECK(self.increased_steps == 0);

  DecodeTrace shifted = base;
  for (auto& r : shifted.records) r.image_mass += 0.1;
  const auto cmp = compare_traces(base, shifted);
  for (double d : cmp.deltas) CHECK(std::abs(d - 0.1) < 1e-12);
  CHECK(std::abs(cmp.mean_delta - 0.1) < 1e-12);
  CHECK(cmp.increased_steps == 6);

  CHECK_THROWS_AS(compare_traces(base, testing::random_trace(rng, 5, 3)), ComparisonError);
  CHECK_THROWS_AS(compare_traces(base, testing::random_trace(rng, 6, 2)), ComparisonError);
}

TEST_CASE("trace CSV fixture") {
  const fs::path fixture = fs::path(MDSAM_FIXTURE_DIR) / "three_records.csv";
  const DecodeTrace t = import_trace(fixture);
  REQUIRE(t.records.size() == 3);
  CHECK(t.records[0] == TraceRecord{1, 1, 0.5, 7});
  CHECK(t.records[1] == TraceRecord{2, 1, 0.25, 3});
  CHECK(t.records[2] == TraceRecord{3, 1, 0.125, 3});
}

TEST_CASE("trace serialization") {
  const fs::path dir = fs::temp_directory_path() / "mdsam_trace_test";
  fs::create_directories(dir);

  SUBCASE("empty trace is a header-only CSV") {
    export_trace(DecodeTrace{}, dir / "empty.csv", TraceFormat::kCsv);
    std::ifstream in(dir / "empty.csv");
    std::string text((std::istreambuf_iterator<char>(in)), {});
    CHECK(text == std::string(kTraceCsvHeader) + "\n");
    CHECK(import_trace(dir / "empty.csv").records.empty());
  }
  SUBCASE("decoded trace round-trips through both formats") {
    DecodeSession s(build_model(5, 3, 2, 8, 32), make_prompt(6, 4, 1, 8, 32), MdsamConfig{});
    const auto r = decode_greedy(s, 5);
    export_trace(r.trace, dir / "t.json", TraceFormat::kJson);
    export_trace(r.trace, dir / "t.csv", TraceFormat::kCsv);
    CHECK(import_trace(dir / "t.json") == r.trace);
    CHECK(import_trace(dir / "t.csv").records == r.trace.records);
  }
  SUBCASE("random traces round-trip exactly") {
    std::mt19937_64 rng(15);
    for (int i = 0; i < 200; ++i) {
      const DecodeTrace t = testing::random_trace(rng, i % 9, 1 + i % 5);
      std::stringstream csv, json;
      write_trace_csv(t, csv);
      write_trace_json(t, json);
      REQUIRE(read_trace_csv(csv).records == t.records);
      REQUIRE(read_trace_json(json) == t);
    }
  }
  SUBCASE("malformed CSV reports line and field") {
    std::istringstream in("step,layer,image_mass,token_id\n1,1,0.5,3\n2,1,abc,3\n");
    try {
      read_trace_csv(in, "bad.csv");
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line() == 3);
      CHECK(e.field() == "image_mass");
    }
    std::istringstream short_row("step,layer,image_mass,token_id\n1,1,0.5\n");
    CHECK_THROWS_AS(read_trace_csv(short_row), ParseError);
  }
  SUBCASE("schema errors") {
    std::istringstream missing("step,layer,token_id\n");
    CHECK_THROWS_WITH_AS(read_trace_csv(missing), doctest::Contains("image_mass"), SchemaError);
    std::istringstream unknown("step,layer,image_mass,token_id,extra\n");
    CHECK_THROWS_AS(read_trace_csv(unknown), SchemaError);
    std::istringstream gap("step,layer,image_mass,token_id\n1,1,0.5,3\n3,1,0.5,3\n");
    CHECK_THROWS_AS(read_trace_csv(gap), SchemaError);
    std::istringstream range("step,layer,image_mass,token_id\n1,1,1.5,3\n");
    CHECK_THROWS_AS(read_trace_csv(range), SchemaError);
    std::istringstream json_missing(R"({"metadata": {}, "records": []})");
    CHECK_THROWS_AS(read_trace_json(json_missing), SchemaError);
    std::istringstream json_bad("{ not json");
    CHECK_THROWS_AS(read_trace_json(json_bad), ParseError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(import_trace(dir / "does_not_exist.csv"), IoError);
  }
  fs::remove_all(dir);
}
