#pragma once

// Run and sweep configuration files.
//
// Grammar: line-oriented INI. Blank lines and lines starting with '#' or ';' are
// ignored. "[name]" opens a section; "key = value" assigns inside the current
// section. Keys may appear once per section, and every key must belong to a
// known section:
//
//   [model]   seed (required), layers, heads, d_model, vocab
//   [prompt]  image_tokens, text_tokens, seed
//   [decode]  steps (required)
//   [mdsam]   preset, tau, alpha, beta, window, renorm, reset
//   [output]  trace, baseline_trace, summary, table
//   [sweep]   tau, alpha, beta, window, reset, renorm  (comma-separated lists)
//             pairs = beta:tau, beta:tau, ...          (replaces the beta x tau product)
//
// Without [mdsam] a run is a plain greedy baseline. Inside [mdsam], either preset or
// all of tau/alpha/beta must be given; explicit keys override the preset. A file with
// a [sweep] section describes a SweepGrid whose unswept values come from [mdsam]
// (or the llava preset when [mdsam] is absent).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "mdsam/decoder.hpp"
#include "mdsam/engine.hpp"

namespace mdsam {

struct OutputPaths {
  std::optional<std::filesystem::path> trace;
  std::optional<std::filesystem::path> baseline_trace;
  std::optional<std::filesystem::path> summary;
  std::optional<std::filesystem::path> table;

  friend bool operator==(const OutputPaths&, const OutputPaths&) = default;
};

struct RunSpec {
  std::uint64_t seed = 42;
  ModelDims dims;
  std::size_t image_tokens = 16;
  std::size_t text_tokens = 8;
  std::uint64_t prompt_seed = 7;
  std::size_t steps = 24;
  std::optional<MdsamConfig> mdsam;  // empty = baseline decoding
  OutputPaths outputs;

  // Throws ConfigError naming the first invalid field.
  void validate() const;

  friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct SweepGrid {
  RunSpec base;  // base.mdsam supplies values for any dimension left unswept
  std::vector<double> tau;
  std::vector<double> alpha;
  std::vector<double> beta;
  std::vector<std::size_t> window;
  std::vector<ResetPolicy> reset;
  std::vector<RenormMode> renorm;
  // When non-empty, these (beta, tau) pairs replace the beta x tau product.
  std::vector<std::pair<double, double>> beta_tau_pairs;

  // Every cell's config, ordered by (beta, tau, alpha, window, reset, renorm).
  std::vector<MdsamConfig> cells() const;
  void validate() const;

  friend bool operator==(const SweepGrid&, const SweepGrid&) = default;
};

using ConfigDocument = std::variant<RunSpec, SweepGrid>;

// Published hyperparameter profiles: "llava", "deepseekvl", "minigpt4". Window 8,
// row renormalization and a persistent memory. Throws ConfigError for other names.
MdsamConfig preset(std::string_view name);
std::vector<std::string_view> preset_names();

// source names the input in error messages. Syntax problems raise ParseError;
// unknown, missing and out-of-range keys raise ConfigError, all with line context.
ConfigDocument parse_config_text(std::string_view text, const std::string& source = "<config>");
ConfigDocument parse_config(const std::filesystem::path& path);

// Text that parse_config_text maps back to an equal value.
std::string serialize_config(const RunSpec& spec);
std::string serialize_config(const SweepGrid& grid);

}  // namespace mdsam
