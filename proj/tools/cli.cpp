#include "cli.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "mdsam/config.hpp"
#include "mdsam/harness.hpp"
#include "mdsam/trace.hpp"

namespace mdsam::cli {

namespace {

struct DecodeFlags {
  std::string config;
  std::string preset_name;
  std::optional<std::uint64_t> seed, prompt_seed;
  std::optional<std::size_t> steps, layers, heads, d_model, vocab, image_tokens, text_tokens;
  std::optional<double> tau, alpha, beta;
  std::optional<std::size_t> window;
  std::string renorm, reset;
  std::string out, baseline_out, summary;
};

struct SweepFlags {
  std::string grid;
  std::string out;
  std::string text;
  std::size_t threads = 0;
};

struct AnalyzeFlags {
  std::string baseline;
  std::string treated;
  double min_prominence = kDefaultMinProminence;
};

RunSpec build_run_spec(const DecodeFlags& f) {
  RunSpec spec;
  if (!f.config.empty()) {
    auto doc = parse_config(f.config);
    if (!std::holds_alternative<RunSpec>(doc)) {
      throw ConfigError("config", "'" + f.config + "' describes a sweep; use `mdsam sweep`");
    }
    spec = std::get<RunSpec>(std::move(doc));
  }
  if (f.seed) spec.seed = *f.seed;
  if (f.prompt_seed) spec.prompt_seed = *f.prompt_seed;
  if (f.steps) spec.steps = *f.steps;
  if (f.layers) spec.dims.num_layers = *f.layers;
  if (f.heads) spec.dims.num_heads = *f.heads;
  if (f.d_model) spec.dims.d_model = *f.d_model;
  if (f.vocab) spec.dims.vocab_size = *f.vocab;
  if (f.image_tokens) spec.image_tokens = *f.image_tokens;
  if (f.text_tokens) spec.text_tokens = *f.text_tokens;

  if (!f.preset_name.empty()) {
    if (f.preset_name == "none") {
      spec.mdsam.reset();
    } else {
      spec.mdsam = preset(f.preset_name);
    }
  }
  const bool overrides = f.tau || f.alpha || f.beta || f.window || !f.renorm.empty() ||
                         !f.reset.empty();
  if (overrides && !spec.mdsam) {
    if (!(f.tau && f.alpha && f.beta)) {
      throw ConfigError("preset",
                        "steering flags need --preset, a [mdsam] config section, or all of "
                        "--tau, --alpha and --beta");
    }
    spec.mdsam = MdsamConfig{};
  }
  if (spec.mdsam) {
    MdsamConfig& c = *spec.mdsam;
    if (f.tau) c.tau = *f.tau;
    if (f.alpha) c.alpha = *f.alpha;
    if (f.beta) c.beta = *f.beta;
    if (f.window) c.window = *f.window;
    if (!f.renorm.empty()) c.renorm_mode = parse_renorm_mode(f.renorm);
    if (!f.reset.empty()) c.reset_policy = parse_reset_policy(f.reset);
  }
  if (!f.out.empty()) spec.outputs.trace = f.out;
  if (!f.baseline_out.empty()) spec.outputs.baseline_trace = f.baseline_out;
  if (!f.summary.empty()) spec.outputs.summary = f.summary;
  spec.validate();
  return spec;
}

void print_tokens(std::ostream& out, const std::vector<std::size_t>& tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
  out << '\n';
}

int run_decode(const DecodeFlags& f, std::ostream& out) {
  const RunSpec spec = build_run_spec(f);
  const RunSummary summary = run_single(spec);
  out << "mode: " << (summary.mdsam ? "mdsam" : "baseline") << '\n';
  out << "tokens: ";
  print_tokens(out, summary.primary.tokens);
  out << "mean_image_mass: " << format_double(summary.primary.mean_mass) << '\n';
  out << "peaks: " << summary.primary.peaks << '\n';
  if (summary.baseline) {
    out << "baseline_mean_image_mass: " << format_double(summary.baseline->mean_mass) << '\n';
    out << "mass_delta: " << format_double(summary.mass_delta) << '\n';
    out << "divergence_step: "
        << (summary.divergence ? std::to_string(*summary.divergence) : std::string("none"))
        << '\n';
  }
  if (spec.outputs.trace) out << "trace: " << spec.outputs.trace->string() << '\n';
  return kExitOk;
}

int run_sweep_command(const SweepFlags& f, std::ostream& out) {
  auto doc = parse_config(f.grid);
  if (!std::holds_alternative<SweepGrid>(doc)) {
    throw ConfigError("sweep", "'" + f.grid + "' has no [sweep] section");
  }
  const SweepGrid& grid = std::get<SweepGrid>(doc);
  const SweepTable table = run_sweep(grid, f.threads);

  std::filesystem::path csv_path = f.out;
  if (csv_path.empty() && grid.base.outputs.table) csv_path = *grid.base.outputs.table;
  std::filesystem::path text_path = f.text;
  if (text_path.empty() && !csv_path.empty()) {
    text_path = csv_path;
    text_path.replace_extension(".txt");
  }

  std::ostringstream csv;
  write_sweep_csv(table, csv);
  std::ostringstream text;
  write_sweep_text(table, text);

  auto save = [](const std::filesystem::path& path, const std::string& body) {
    std::ofstream file(path, std::ios::binary | std::ios::trunc);
    if (!file) throw IoError("cannot open '" + path.string() + "' for writing");
    file << body;
    if (!file.flush()) throw IoError("failed writing '" + path.string() + "'");
  };
  if (!csv_path.empty()) save(csv_path, csv.str());
  if (!text_path.empty()) save(text_path, text.str());
  out << text.str();
  return kExitOk;
}

void print_peaks(std::ostream& out, const std::string& label, const DecodeTrace& trace,
                 double min_prominence) {
  const PeakReport peaks = detect_peaks(trace.step_series(), min_prominence);
  out << label << ": steps=" << trace.num_steps() << " layers=" << trace.num_layers()
      << " mean_mass=" << format_double(trace.mean_mass()) << " peaks=" << peaks.count()
      << '\n';
  for (std::size_t i = 0; i < peaks.count(); ++i) {
    const std::size_t step = peaks.indices[i] + 1;
    out << "  peak step " << step << " mass=" << format_double(peaks.series[peaks.indices[i]])
        << " prominence=" << format_double(peaks.prominences[i]) << '\n';
  }
}

int run_analyze(const AnalyzeFlags& f, std::ostream& out) {
  const DecodeTrace baseline = import_trace(f.baseline);
  print_peaks(out, "baseline", baseline, f.min_prominence);
  if (f.treated.empty()) return kExitOk;

  const DecodeTrace treated = import_trace(f.treated);
  print_peaks(out, "treated", treated, f.min_prominence);
  const TraceComparison cmp = compare_traces(baseline, treated);
  out << "step,delta\n";
  for (std::size_t s = 0; s < cmp.deltas.size(); ++s) {
    out << s + 1 << ',' << format_double(cmp.deltas[s]) << '\n';
  }
  out << "mean_delta: " << format_double(cmp.mean_delta) << '\n';
  out << "increased_steps: " << cmp.increased_steps << " of " << cmp.deltas.size() << '\n';
  return kExitOk;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Memory-driven sparse attention steering on a toy causal decoder", "mdsam"};
  app.require_subcommand(1);

  DecodeFlags decode;
  auto* dec = app.add_subcommand("decode", "Greedy decode, optionally with attention steering");
  dec->add_option("--config", decode.config, "Run config file")->check(CLI::ExistingFile);
  dec->add_option("--preset", decode.preset_name, "llava, deepseekvl, minigpt4 or none");
  dec->add_option("--seed", decode.seed, "Model seed");
  dec->add_option("--prompt-seed", decode.prompt_seed, "Prompt seed");
  dec->add_option("--steps", decode.steps, "Tokens to generate");
  dec->add_option("--layers", decode.layers, "Decoder layers");
  dec->add_option("--heads", decode.heads, "Attention heads");
  dec->add_option("--d-model", decode.d_model, "Hidden size");
  dec->add_option("--vocab", decode.vocab, "Vocabulary size");
  dec->add_option("--image-tokens", decode.image_tokens, "Image tokens in the prompt");
  dec->add_option("--text-tokens", decode.text_tokens, "Text tokens in the prompt");
  dec->add_option("--tau", decode.tau, "Top-k fraction in (0, 1]");
  dec->add_option("--alpha", decode.alpha, "Decay base in (0, 1)");
  dec->add_option("--beta", decode.beta, "Blend strength >= 0");
  dec->add_option("--window", decode.window, "Memory window length");
  dec->add_option("--renorm", decode.renorm, "verbatim or row_renormalize");
  dec->add_option("--reset", decode.reset, "persistent or per_token");
  dec->add_option("--out", decode.out, "Trace output (.csv or .json)");
  dec->add_option("--baseline-out", decode.baseline_out, "Baseline trace output");
  dec->add_option("--summary", decode.summary, "Summary JSON output");

  SweepFlags sweep;
  auto* swp = app.add_subcommand("sweep", "Run a hyperparameter grid");
  swp->add_option("--grid", sweep.grid, "Grid config file")->required()->check(CLI::ExistingFile);
  swp->add_option("--out", sweep.out, "Table CSV output");
  swp->add_option("--text", sweep.text, "Aligned text table output (default: --out with .txt)");
  swp->add_option("--threads", sweep.threads, "Worker threads (0 = hardware count)");

  AnalyzeFlags analyze;
  auto* ana = app.add_subcommand("analyze", "Peak and delta report for exported traces");
  ana->add_option("--baseline", analyze.baseline, "Baseline trace")
      ->required()
      ->check(CLI::ExistingFile);
  ana->add_option("--treated", analyze.treated, "Treated trace")->check(CLI::ExistingFile);
  ana->add_option("--min-prominence", analyze.min_prominence, "Peak prominence threshold");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    err << app.help();
    return kExitUsage;
  }

  try {
    if (dec->parsed()) return run_decode(decode, out);
    if (swp->parsed()) return run_sweep_command(sweep, out);
    if (ana->parsed()) return run_analyze(analyze, out);
  } catch (const std::exception& e) {
    err << "mdsam: error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace mdsam::cli
