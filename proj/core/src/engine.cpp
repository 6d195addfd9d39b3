#include "mdsam/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace mdsam {

namespace {

constexpr double kDegenerateRange = 1e-12;

}  // namespace

std::string_view to_string(RenormMode mode) noexcept {
  return mode == RenormMode::kVerbatim ? "verbatim" : "row_renormalize";
}

std::string_view to_string(ResetPolicy policy) noexcept {
  return policy == ResetPolicy::kPersistent ? "persistent" : "per_token";
}

RenormMode parse_renorm_mode(std::string_view name) {
  if (name == "verbatim") return RenormMode::kVerbatim;
  if (name == "row_renormalize") return RenormMode::kRowRenormalize;
  throw ConfigError("renorm", "expected verbatim or row_renormalize, got '" +
                                  std::string(name) + "'");
}

ResetPolicy parse_reset_policy(std::string_view name) {
  if (name == "persistent") return ResetPolicy::kPersistent;
  if (name == "per_token") return ResetPolicy::kPerToken;
  throw ConfigError("reset", "expected persistent or per_token, got '" + std::string(name) +
                                 "'");
}

void MdsamConfig::validate() const {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw ConfigError("tau", "must lie in (0, 1], got " + std::to_string(tau));
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha", "must lie in (0, 1), got " + std::to_string(alpha));
  }
  if (!(beta >= 0.0) || !std::isfinite(beta)) {
    throw ConfigError("beta", "must be a finite value >= 0, got " + std::to_string(beta));
  }
  if (window < 1) throw ConfigError("window", "must be at least 1");
}

LayerMemory::LayerMemory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ < 1) throw ConfigError("window", "memory capacity must be at least 1");
}

LayerMemory LayerMemory::cleared() const {
  LayerMemory out(capacity_);
  out.total_pushes_ = total_pushes_;
  return out;
}

std::vector<double> min_max_normalize(std::span<const double> v) {
  if (v.empty()) throw DomainError("min_max_normalize of an empty vector");
  const auto [lo_it, hi_it] = std::minmax_element(v.begin(), v.end());
  const double lo = *lo_it;
  const double range = *hi_it - lo;
  std::vector<double> out(v.size(), 0.0);
  if (range < kDegenerateRange) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / range;
  return out;
}

std::size_t top_k_count(double tau, std::size_t n) {
  const auto k = static_cast<std::size_t>(std::floor(tau * static_cast<double>(n)));
  return std::min(std::max<std::size_t>(1, k), n);
}

SparseImageAttention top_k_sparsify(std::span<const double> v, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) {
    throw ConfigError("tau", "must lie in (0, 1], got " + std::to_string(tau));
  }
  for (double x : v) {
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("top_k_sparsify expects entries in [0, 1]");
  }
  const std::size_t k = top_k_count(tau, v.size());

  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return v[a] > v[b]; });

  SparseImageAttention out{std::vector<double>(v.size(), 0.0), 0, k};
  for (std::size_t r = 0; r < k; ++r) {
    const std::size_t i = order[r];
    out.values[i] = v[i];
    if (v[i] != 0.0) ++out.nnz;
  }
  return out;
}

LayerMemory memory_push(LayerMemory mem, SparseImageAttention entry) {
  if (!mem.entries_.empty() && mem.entries_.front().size() != entry.size()) {
    throw DimensionError("memory entry has length " + std::to_string(entry.size()) +
                         ", held entries have length " +
                         std::to_string(mem.entries_.front().size()));
  }
  if (mem.entries_.size() == mem.capacity_) mem.entries_.pop_back();
  mem.entries_.push_front(std::move(entry));
  ++mem.total_pushes_;
  return mem;
}

std::vector<double> aggregate_weighted_mean(const LayerMemory& mem, double alpha) {
  if (mem.empty()) throw DomainError("aggregate_weighted_mean of an empty memory");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw ConfigError("alpha", "must lie in (0, 1), got " + std::to_string(alpha));
  }
  const auto& entries = mem.entries();

  // Weights alpha^1, alpha^2, ... normalized before mixing so a single entry
  // comes back bit-exact.
  std::vector<double> weights(entries.size());
  double w = alpha;
  double total = 0.0;
  for (double& x : weights) {
    x = w;
    total += w;
    w *= alpha;
  }
  for (double& x : weights) x /= total;

  std::vector<double> out(entries.front().size(), 0.0);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& vals = entries[i].values;
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += vals[j] * weights[i];
  }
  return out;
}

AttentionRow align_attention(AttentionRow row, std::span<const double> agg, double beta,
                             const TokenSpan& span, RenormMode mode) {
  span.check(row.size());
  if (agg.size() != span.size()) {
    throw DimensionError("aggregate has " + std::to_string(agg.size()) +
                         " values for a span of " + std::to_string(span.size()));
  }
  if (!(beta >= 0.0)) throw ConfigError("beta", "must be >= 0");
  if (beta == 0.0) return row;

  const double denom = 1.0 + beta;
  for (std::size_t j = 0; j < agg.size(); ++j) {
    double& w = row.weights[span.start + j];
    w = (w + beta * agg[j]) / denom;
  }
  if (mode == RenormMode::kRowRenormalize) {
    double total = 0.0;
    for (double w : row.weights) total += w;
    if (total > 0.0) {
      for (double& w : row.weights) w /= total;
    }
  }
  return row;
}

LayerStepResult mdsam_layer_step(std::span<const AttentionRow> per_head_rows, LayerMemory mem,
                                 const MdsamConfig& cfg, const TokenSpan& span) {
  cfg.validate();
  if (mem.capacity() != cfg.window) {
    throw ConfigError("window", "memory capacity " + std::to_string(mem.capacity()) +
                                    " does not match configured window " +
                                    std::to_string(cfg.window));
  }
  const AttentionRow averaged = head_average(per_head_rows);
  // Softmax weights are non-negative, so |slice| is the slice itself.
  const auto slice = extract_image_slice(averaged, span);
  auto sparse = top_k_sparsify(min_max_normalize(slice), cfg.tau);
  mem = memory_push(std::move(mem), std::move(sparse));
  const auto agg = aggregate_weighted_mean(mem, cfg.alpha);

  LayerStepResult result{{}, std::move(mem)};
  result.rows.reserve(per_head_rows.size());
  for (const auto& row : per_head_rows) {
    result.rows.push_back(align_attention(row, agg, cfg.beta, span, cfg.renorm_mode));
  }
  return result;
}

}  // namespace mdsam
