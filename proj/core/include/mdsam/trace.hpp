#pragma once

// Decode traces: per-(step, layer) image-attention mass, peak analysis of the
// per-step series, baseline/treated comparison, and CSV/JSON persistence.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mdsam/attention.hpp"
#include "mdsam/engine.hpp"

namespace mdsam {

inline constexpr std::string_view kTraceCsvHeader = "step,layer,image_mass,token_id";
inline constexpr double kDefaultMinProminence = 0.02;

struct TraceRecord {
  std::size_t step = 0;   // 1-based
  std::size_t layer = 0;  // 1-based
  double image_mass = 0.0;
  std::size_t token_id = 0;

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

// Run context carried by JSON traces. CSV traces hold records only.
struct TraceMetadata {
  std::uint64_t seed = 0;
  std::uint64_t prompt_seed = 0;
  std::size_t num_layers = 0;
  std::size_t num_heads = 0;
  std::size_t d_model = 0;
  std::size_t vocab_size = 0;
  std::size_t image_tokens = 0;
  std::size_t text_tokens = 0;
  std::optional<MdsamConfig> mdsam;

  friend bool operator==(const TraceMetadata&, const TraceMetadata&) = default;
};

struct DecodeTrace {
  TraceMetadata metadata;
  std::vector<TraceRecord> records;

  // Records are sorted by (step, layer), contiguous from (1, 1), every step has the
  // same layer count and a single token id, and image_mass lies in [0, 1].
  // Throws SchemaError describing the first violation.
  void validate() const;

  std::size_t num_steps() const noexcept;
  std::size_t num_layers() const noexcept;
  // Layer-mean image mass per step, index 0 = step 1.
  std::vector<double> step_series() const;
  // One token per step.
  std::vector<std::size_t> tokens() const;
  double mean_mass() const;

  friend bool operator==(const DecodeTrace&, const DecodeTrace&) = default;
};

// Fraction of the row's total weight that falls inside span; 0 for an all-zero row.
double image_attention_mass(const AttentionRow& row, const TokenSpan& span);

struct PeakReport {
  std::vector<std::size_t> indices;  // 0-based positions in series
  std::vector<double> prominences;
  std::vector<double> series;

  std::size_t count() const noexcept { return indices.size(); }
};

// Strict local maxima whose prominence reaches min_prominence. The prominence of
// series[i] is its height above the higher of the two flanking minima, each taken
// over the stretch between i and the nearest strictly higher sample (or the edge).
PeakReport detect_peaks(std::span<const double> series,
                        double min_prominence = kDefaultMinProminence);

struct TraceComparison {
  std::vector<double> deltas;  // per step: treated layer-mean minus baseline layer-mean
  double mean_delta = 0.0;
  std::size_t increased_steps = 0;
};

// Throws ComparisonError when step or layer counts differ.
TraceComparison compare_traces(const DecodeTrace& baseline, const DecodeTrace& treated);

enum class TraceFormat { kCsv, kJson };

// .json selects JSON, anything else CSV.
TraceFormat trace_format_for(const std::filesystem::path& path);

void write_trace_csv(const DecodeTrace& trace, std::ostream& out);
void write_trace_json(const DecodeTrace& trace, std::ostream& out);
// source names the input in error messages.
DecodeTrace read_trace_csv(std::istream& in, const std::string& source = "<csv>");
DecodeTrace read_trace_json(std::istream& in, const std::string& source = "<json>");

// Throws IoError on file system failures.
void export_trace(const DecodeTrace& trace, const std::filesystem::path& path, TraceFormat format);
// Sniffs the format from the first non-blank character ('{' means JSON).
// Throws IoError, ParseError or SchemaError.
DecodeTrace import_trace(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double value);

}  // namespace mdsam
