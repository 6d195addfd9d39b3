#include <filesystem>
#include <fstream>
#include <sstream>

#include "cli.hpp"
#include "doctest.h"
#include "mdsam/harness.hpp"

using namespace mdsam;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

int run_cli(const std::vector<std::string>& args, std::string* out_text = nullptr,
            std::string* err_text = nullptr) {
  std::ostringstream out, err;
  const int code = cli::cli_main(args, out, err);
  if (out_text) *out_text = out.str();
  if (err_text) *err_text = err.str();
  return code;
}

RunSpec small_spec() {
  RunSpec spec;
  spec.steps = 8;
  return spec;
}

}  // namespace

TEST_CASE("divergence_step") {
  CHECK_FALSE(divergence_step({1, 2, 3}, {1, 2, 3}).has_value());
  CHECK(divergence_step({1, 2, 3}, {1, 5, 3}) == 2);
  CHECK(divergence_step({1, 2}, {1, 2, 3}) == 3);
}

TEST_CASE("run_single") {
  TempDir dir("mdsam_run_single");
  SUBCASE("baseline only") {
    RunSpec spec = small_spec();
    spec.outputs.trace = dir.path / "base.csv";
    spec.outputs.baseline_trace = dir.path / "unused.csv";
    const RunSummary s = run_single(spec);
    CHECK_FALSE(s.baseline.has_value());
    CHECK(fs::exists(dir.path / "base.csv"));
    CHECK_FALSE(fs::exists(dir.path / "unused.csv"));
    CHECK(import_trace(dir.path / "base.csv").records.size() == 8 * 4);
  }
  SUBCASE("beta 0 reproduces the baseline tokens") {
    RunSpec spec = small_spec();
    spec.mdsam = preset("llava");
    spec.mdsam->beta = 0.0;
    const RunSummary s = run_single(spec);
    REQUIRE(s.baseline.has_value());
    CHECK(s.primary.tokens == s.baseline->tokens);
    CHECK_FALSE(s.divergence.has_value());
    CHECK(s.mass_delta == 0.0);
  }
  SUBCASE("identical specs write identical bytes") {
    RunSpec spec = small_spec();
    spec.mdsam = preset("llava");
    spec.outputs.trace = dir.path / "a.json";
    spec.outputs.summary = dir.path / "a_summary.json";
    run_single(spec);
    const std::string first = slurp(dir.path / "a.json");
    const std::string first_summary = slurp(dir.path / "a_summary.json");
    run_single(spec);
    CHECK(slurp(dir.path / "a.json") == first);
    CHECK(slurp(dir.path / "a_summary.json") == first_summary);
    CHECK(first_summary.find("\"mode\": \"mdsam\"") != std::string::npos);
  }
  SUBCASE("unwritable path") {
    RunSpec spec = small_spec();
    spec.outputs.trace = dir.path / "missing_dir" / "t.csv";
    CHECK_THROWS_AS(run_single(spec), IoError);
  }
}

TEST_CASE("run_sweep") {
  SweepGrid grid;
  grid.base = small_spec();
  grid.base.mdsam = preset("llava");
  grid.beta = {1.0, 0.5};
  grid.tau = {0.4, 1.0};

  const SweepTable serial = run_sweep(grid, 1);
  const SweepTable parallel = run_sweep(grid, 3);
  REQUIRE(serial.rows.size() == 5);
  CHECK(serial.rows == parallel.rows);
  CHECK_FALSE(serial.rows[0].cfg.has_value());
  CHECK(serial.rows[1].cfg->beta == 0.5);
  CHECK(serial.rows[1].cfg->tau == 0.4);
  CHECK(serial.rows[4].cfg->beta == 1.0);
  CHECK(serial.rows[4].cfg->tau == 1.0);

  SUBCASE("a cell rerun alone reproduces its row") {
    const RunOutcome base = execute_run(grid.base, std::nullopt);
    for (std::size_t i = 1; i < serial.rows.size(); ++i) {
      CHECK(run_sweep_cell(grid.base, *serial.rows[i].cfg, base) == serial.rows[i]);
    }
  }
  SUBCASE("1x1 grid matches run_single") {
    SweepGrid one;
    one.base = small_spec();
    one.base.mdsam = preset("deepseekvl");
    const SweepTable t = run_sweep(one);
    REQUIRE(t.rows.size() == 2);
    const RunSummary s = run_single(one.base);
    CHECK(t.rows[1].mean_mass == s.primary.mean_mass);
    CHECK(t.rows[1].peaks == s.primary.peaks);
    CHECK(t.rows[1].mass_delta == s.mass_delta);
    CHECK(t.rows[1].divergence == s.divergence);
    CHECK(t.rows[0].mean_mass == s.baseline->mean_mass);
  }
  SUBCASE("table rendering") {
    std::ostringstream csv, text;
    write_sweep_csv(serial, csv);
    write_sweep_text(serial, text);
    const std::string c = csv.str();
    CHECK(c.rfind(std::string(kSweepCsvHeader) + "\nbaseline,-,-,-,-,-,", 0) == 0);
    CHECK(std::count(c.begin(), c.end(), '\n') == 6);
    CHECK(text.str().find("baseline") != std::string::npos);
  }
}

TEST_CASE("cli") {
  TempDir dir("mdsam_cli_test");
  const std::string trace = (dir.path / "t.csv").string();

  SUBCASE("decode writes steps x layers records") {
    std::string out;
    REQUIRE(run_cli({"decode", "--preset", "llava", "--seed", "42", "--steps", "24", "--out",
                     trace},
                    &out) == 0);
    CHECK(import_trace(trace).records.size() == 24 * 4);
    CHECK(out.find("mode: mdsam") != std::string::npos);
  }
  SUBCASE("analyze identical traces") {
    REQUIRE(run_cli({"decode", "--seed", "3", "--steps", "6", "--out", trace}) == 0);
    std::string out;
    REQUIRE(run_cli({"analyze", "--baseline", trace, "--treated", trace}, &out) == 0);
    CHECK(out.find("mean_delta: 0\n") != std::string::npos);
    CHECK(out.find("increased_steps: 0 of 6") != std::string::npos);
    for (int s = 1; s <= 6; ++s) CHECK(out.find(std::to_string(s) + ",0\n") != std::string::npos);
  }
  SUBCASE("sweep twice gives identical bytes") {
    const fs::path grid = dir.path / "grid.cfg";
    std::ofstream(grid) << "[model]\nseed = 42\n[decode]\nsteps = 6\n[sweep]\nbeta = 0.5, 1.0\n";
    const std::string a = (dir.path / "a.csv").string(), b = (dir.path / "b.csv").string();
    REQUIRE(run_cli({"sweep", "--grid", grid.string(), "--out", a}) == 0);
    REQUIRE(run_cli({"sweep", "--grid", grid.string(), "--out", b}) == 0);
    CHECK(slurp(a) == slurp(b));
    CHECK(fs::exists(dir.path / "a.txt"));
  }
  SUBCASE("usage errors exit 2") {
    std::string err;
    CHECK(run_cli({"frobnicate"}, nullptr, &err) == cli::kExitUsage);
    CHECK(err.find("Usage") != std::string::npos);
    CHECK(run_cli({"decode", "--no-such-flag"}) == cli::kExitUsage);
    CHECK(run_cli({}) == cli::kExitUsage);
  }
  SUBCASE("runtime errors exit 1 and name the input") {
    std::string err;
    CHECK(run_cli({"decode", "--preset", "llava", "--tau", "1.5"}, nullptr, &err) ==
          cli::kExitFailure);
    CHECK(err.find("tau") != std::string::npos);
    CHECK(run_cli({"decode", "--preset", "vicuna"}, nullptr, &err) == cli::kExitFailure);
    CHECK(err.find("vicuna") != std::string::npos);
    CHECK(run_cli({"decode", "--tau", "0.5"}, nullptr, &err) == cli::kExitFailure);
    const fs::path bad = dir.path / "bad.csv";
    std::ofstream(bad) << "step,layer\n";
    CHECK(run_cli({"analyze", "--baseline", bad.string()}, nullptr, &err) == cli::kExitFailure);
    CHECK(err.find("bad.csv") != std::string::npos);
  }
}
