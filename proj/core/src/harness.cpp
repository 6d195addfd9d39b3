#include "mdsam/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace mdsam {

namespace {

using nlohmann::json;

json outcome_json(const RunOutcome& run) {
  return json{{"tokens", run.tokens},
              {"mean_mass", run.mean_mass},
              {"peaks", run.peaks},
              {"steps", run.tokens.size()}};
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

std::string cell_label(const MdsamConfig& c) {
  return "beta=" + format_double(c.beta) + " tau=" + format_double(c.tau) +
         " alpha=" + format_double(c.alpha) + " window=" + std::to_string(c.window) +
         " reset=" + std::string(to_string(c.reset_policy)) +
         " renorm=" + std::string(to_string(c.renorm_mode));
}

std::vector<std::string> row_fields(const SweepRow& row, bool fixed) {
  auto num = [fixed](double v) {
    if (!fixed) return format_double(v);
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return std::string(buf);
  };
  std::vector<std::string> f;
  if (row.cfg) {
    const MdsamConfig& c = *row.cfg;
    f = {format_double(c.beta), format_double(c.tau), format_double(c.alpha),
         std::to_string(c.window), std::string(to_string(c.reset_policy)),
         std::string(to_string(c.renorm_mode))};
  } else {
    f = {"baseline", "-", "-", "-", "-", "-"};
  }
  f.push_back(num(row.mean_mass));
  f.push_back(num(row.mass_delta));
  f.push_back(std::to_string(row.peaks));
  f.push_back(row.divergence ? std::to_string(*row.divergence) : "none");
  return f;
}

}  // namespace

RunOutcome execute_run(const RunSpec& spec, const std::optional<MdsamConfig>& cfg) {
  spec.validate();
  DecodeSession session(build_model(spec.seed, spec.dims),
                        make_prompt(spec.image_tokens, spec.text_tokens, spec.prompt_seed,
                                    spec.dims.d_model, spec.dims.vocab_size),
                        cfg);
  DecodeResult result = decode_greedy(session, spec.steps);

  RunOutcome out;
  out.tokens = std::move(result.tokens);
  out.trace = std::move(result.trace);
  out.mean_mass = out.trace.mean_mass();
  out.peaks = detect_peaks(out.trace.step_series()).count();
  return out;
}

std::optional<std::size_t> divergence_step(const std::vector<std::size_t>& baseline,
                                           const std::vector<std::size_t>& treated) {
  const std::size_t n = std::min(baseline.size(), treated.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (baseline[i] != treated[i]) return i + 1;
  }
  if (baseline.size() != treated.size()) return n + 1;
  return std::nullopt;
}

RunSummary run_single(const RunSpec& spec) {
  spec.validate();
  RunSummary summary;
  summary.mdsam = spec.mdsam;
  if (spec.mdsam) {
    summary.baseline = execute_run(spec, std::nullopt);
    summary.primary = execute_run(spec, spec.mdsam);
    summary.mass_delta = summary.primary.mean_mass - summary.baseline->mean_mass;
    summary.divergence = divergence_step(summary.baseline->tokens, summary.primary.tokens);
  } else {
    summary.primary = execute_run(spec, std::nullopt);
  }

  const OutputPaths& o = spec.outputs;
  if (o.trace) export_trace(summary.primary.trace, *o.trace, trace_format_for(*o.trace));
  if (o.baseline_trace && summary.baseline) {
    export_trace(summary.baseline->trace, *o.baseline_trace, trace_format_for(*o.baseline_trace));
  }
  if (o.summary) {
    std::ostringstream text;
    write_summary_json(summary, text);
    write_file(*o.summary, text.str());
  }
  return summary;
}

void write_summary_json(const RunSummary& summary, std::ostream& out) {
  json doc = outcome_json(summary.primary);
  doc["mode"] = summary.mdsam ? "mdsam" : "baseline";
  if (summary.mdsam) {
    const MdsamConfig& c = *summary.mdsam;
    doc["config"] = json{{"tau", c.tau},
                         {"alpha", c.alpha},
                         {"beta", c.beta},
                         {"window", c.window},
                         {"renorm_mode", std::string(to_string(c.renorm_mode))},
                         {"reset_policy", std::string(to_string(c.reset_policy))}};
  }
  if (summary.baseline) {
    doc["baseline"] = outcome_json(*summary.baseline);
    doc["mass_delta"] = summary.mass_delta;
    doc["divergence_step"] = summary.divergence ? json(*summary.divergence) : json(nullptr);
  }
  out << doc.dump(2) << '\n';
}

SweepRow run_sweep_cell(const RunSpec& base, const MdsamConfig& cfg, const RunOutcome& baseline) {
  const RunOutcome run = execute_run(base, cfg);
  SweepRow row;
  row.cfg = cfg;
  row.mean_mass = run.mean_mass;
  row.mass_delta = run.mean_mass - baseline.mean_mass;
  row.peaks = run.peaks;
  row.divergence = divergence_step(baseline.tokens, run.tokens);
  return row;
}

SweepTable run_sweep(const SweepGrid& grid, std::size_t threads) {
  grid.validate();
  const std::vector<MdsamConfig> cells = grid.cells();
  const RunOutcome baseline = execute_run(grid.base, std::nullopt);

  std::vector<SweepRow> rows(cells.size());
  std::vector<std::exception_ptr> errors(cells.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      try {
        rows[i] = run_sweep_cell(grid.base, cells[i], baseline);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };

  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, std::max<std::size_t>(cells.size(), 1));
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    pool.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  }

  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (!errors[i]) continue;
    try {
      std::rethrow_exception(errors[i]);
    } catch (const std::exception& e) {
      throw Error("sweep cell " + cell_label(cells[i]) + " failed: " + e.what());
    }
  }

  SweepTable table;
  table.rows.reserve(cells.size() + 1);
  table.rows.push_back(
      {std::nullopt, baseline.mean_mass, 0.0, baseline.peaks, std::nullopt});
  for (auto& r : rows) table.rows.push_back(std::move(r));
  return table;
}

void write_sweep_csv(const SweepTable& table, std::ostream& out) {
  out << kSweepCsvHeader << '\n';
  for (const auto& row : table.rows) {
    const auto f = row_fields(row, false);
    for (std::size_t i = 0; i < f.size(); ++i) out << (i ? "," : "") << f[i];
    out << '\n';
  }
}

void write_sweep_text(const SweepTable& table, std::ostream& out) {
  std::vector<std::vector<std::string>> cells;
  {
    std::vector<std::string> header;
    std::string_view h = kSweepCsvHeader;
    for (std::size_t pos = 0;;) {
      const auto comma = h.find(',', pos);
      header.emplace_back(h.substr(pos, comma - pos));
      if (comma == std::string_view::npos) break;
      pos = comma + 1;
    }
    cells.push_back(std::move(header));
  }
  for (const auto& row : table.rows) cells.push_back(row_fields(row, true));

  std::vector<std::size_t> width(cells.front().size(), 0);
  for (const auto& r : cells) {
    for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
  }
  for (const auto& r : cells) {
    for (std::size_t c = 0; c < r.size(); ++c) {
      if (c != 0) out << "  ";
      out << std::setw(static_cast<int>(width[c])) << r[c];
    }
    out << '\n';
  }
}

}  // namespace mdsam
