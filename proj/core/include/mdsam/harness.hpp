#pragma once

// Single runs and hyperparameter sweeps over the toy decoder.

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <vector>

#include "mdsam/config.hpp"
#include "mdsam/decoder.hpp"
#include "mdsam/trace.hpp"

namespace mdsam {

inline constexpr std::string_view kSweepCsvHeader =
    "beta,tau,alpha,window,reset,renorm,mean_mass,mass_delta,peaks,divergence_step";

struct RunOutcome {
  DecodeTrace trace;
  std::vector<std::size_t> tokens;
  double mean_mass = 0.0;
  std::size_t peaks = 0;
};

// Greedy decode of spec's prompt with cfg (nullopt = baseline).
RunOutcome execute_run(const RunSpec& spec, const std::optional<MdsamConfig>& cfg);

// 1-based step of the first token that differs, nullopt when the sequences agree.
std::optional<std::size_t> divergence_step(const std::vector<std::size_t>& baseline,
                                           const std::vector<std::size_t>& treated);

struct RunSummary {
  RunOutcome primary;                  // MDSAM run, or the baseline when spec.mdsam is empty
  std::optional<RunOutcome> baseline;  // present when spec.mdsam is set
  std::optional<MdsamConfig> mdsam;
  double mass_delta = 0.0;
  std::optional<std::size_t> divergence;
};

// Runs the spec and writes whichever outputs it names (trace, baseline_trace,
// summary). Trace formats follow the file extension. Throws on invalid specs and
// IoError on write failures.
RunSummary run_single(const RunSpec& spec);

void write_summary_json(const RunSummary& summary, std::ostream& out);

struct SweepRow {
  std::optional<MdsamConfig> cfg;  // empty for the baseline row
  double mean_mass = 0.0;
  double mass_delta = 0.0;
  std::size_t peaks = 0;
  std::optional<std::size_t> divergence;

  friend bool operator==(const SweepRow&, const SweepRow&) = default;
};

struct SweepTable {
  std::vector<SweepRow> rows;  // baseline first, then cells in grid order
};

// One cell against a precomputed baseline outcome.
SweepRow run_sweep_cell(const RunSpec& base, const MdsamConfig& cfg, const RunOutcome& baseline);

// Runs every cell (in parallel when threads != 1; 0 picks the hardware count) and
// merges rows in deterministic order. A failing cell aborts the sweep with an Error
// naming its hyperparameters.
SweepTable run_sweep(const SweepGrid& grid, std::size_t threads = 0);

// Machine-readable table with kSweepCsvHeader. The baseline row reads "baseline" in
// the beta column and "-" in the other hyperparameter columns; "none" marks a run
// that never diverged from the baseline tokens.
void write_sweep_csv(const SweepTable& table, std::ostream& out);
// Column-aligned rendering of the same rows.
void write_sweep_text(const SweepTable& table, std::ostream& out);

}  // namespace mdsam
