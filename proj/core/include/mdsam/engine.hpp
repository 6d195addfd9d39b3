#pragma once

// Memory-driven sparse attention steering for the image-token span.
//
// One layer step takes the last token's attention rows (one per head), averages
// them, min-max normalizes and top-k sparsifies the image slice, pushes it into a
// rolling window of recent slices, aggregates the window with exponentially
// decaying weights and blends the aggregate back into every head's row.

#include <cstddef>
#include <deque>
#include <span>
#include <string_view>
#include <vector>

#include "mdsam/attention.hpp"

namespace mdsam {

enum class RenormMode { kVerbatim, kRowRenormalize };
enum class ResetPolicy { kPersistent, kPerToken };

std::string_view to_string(RenormMode mode) noexcept;
std::string_view to_string(ResetPolicy policy) noexcept;
// Accepts the names produced by to_string. Throws ConfigError otherwise.
RenormMode parse_renorm_mode(std::string_view name);
ResetPolicy parse_reset_policy(std::string_view name);

struct MdsamConfig {
  double tau = 0.7;    // fraction of image positions kept by top-k, in (0, 1]
  double alpha = 0.9;  // decay base, in (0, 1)
  double beta = 0.6;   // blend strength, >= 0
  std::size_t window = 8;
  RenormMode renorm_mode = RenormMode::kRowRenormalize;
  ResetPolicy reset_policy = ResetPolicy::kPersistent;

  // Throws ConfigError naming the first out-of-range field.
  void validate() const;

  friend bool operator==(const MdsamConfig&, const MdsamConfig&) = default;
};

// Top-k sparsified, min-max normalized image slice. `kept` positions were selected;
// a selected position can still hold 0 (the minimum of a normalized slice), so nnz <= kept.
struct SparseImageAttention {
  std::vector<double> values;
  std::size_t nnz = 0;
  std::size_t kept = 0;

  std::size_t size() const noexcept { return values.size(); }
  friend bool operator==(const SparseImageAttention&, const SparseImageAttention&) = default;
};

// Recency-ordered window of at most capacity() entries. entries().front() is the
// most recent push (index 1 in the decay weighting).
class LayerMemory {
 public:
  explicit LayerMemory(std::size_t capacity = 8);

  std::size_t capacity() const noexcept { return capacity_; }
  std::size_t size() const noexcept { return entries_.size(); }
  bool empty() const noexcept { return entries_.empty(); }
  const std::deque<SparseImageAttention>& entries() const noexcept { return entries_; }

  // Pushes since construction, including any dropped or cleared entries.
  std::size_t total_pushes() const noexcept { return total_pushes_; }

  // Same capacity and push count, no entries.
  LayerMemory cleared() const;

  friend LayerMemory memory_push(LayerMemory mem, SparseImageAttention entry);
  friend bool operator==(const LayerMemory&, const LayerMemory&) = default;

 private:
  std::size_t capacity_;
  std::size_t total_pushes_ = 0;
  std::deque<SparseImageAttention> entries_;
};

// (v - min) / (max - min). A constant vector (range below 1e-12) maps to all zeros.
// Throws DomainError on empty input.
std::vector<double> min_max_normalize(std::span<const double> v);

// Number of positions kept for a slice of length n: max(1, floor(tau * n)), capped at n.
std::size_t top_k_count(double tau, std::size_t n);

// Keeps the top_k_count(tau, n) largest entries (lower index wins ties), zeroes the rest.
// Throws ConfigError when tau is outside (0, 1], DomainError for entries outside [0, 1].
SparseImageAttention top_k_sparsify(std::span<const double> v, double tau);

// Returns mem with entry as the most recent element, dropping the oldest at capacity.
// Throws DimensionError when entry length differs from the held entries.
LayerMemory memory_push(LayerMemory mem, SparseImageAttention entry);

// sum_i entry_i * alpha^i / sum_i alpha^i with i = 1 for the most recent entry.
// Throws DomainError on empty memory, ConfigError when alpha is outside (0, 1).
std::vector<double> aggregate_weighted_mean(const LayerMemory& mem, double alpha);

// Blends agg into the span: (slice + beta * agg) / (1 + beta). With kRowRenormalize the
// whole row is then rescaled to sum to 1. beta == 0 returns the row untouched.
AttentionRow align_attention(AttentionRow row, std::span<const double> agg, double beta,
                             const TokenSpan& span, RenormMode mode);

struct LayerStepResult {
  std::vector<AttentionRow> rows;
  LayerMemory memory;
};

// Full per-layer pipeline: average heads, extract, normalize, sparsify, push,
// aggregate over the post-push window, align every head's row. Exactly one push.
LayerStepResult mdsam_layer_step(std::span<const AttentionRow> per_head_rows, LayerMemory mem,
                                 const MdsamConfig& cfg, const TokenSpan& span);

}  // namespace mdsam
