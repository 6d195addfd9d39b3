#include "mdsam/attention.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mdsam {

void TokenSpan::check(std::size_t length) const {
  if (start > end) {
    throw IndexError("token span start " + std::to_string(start) + " exceeds end " +
                     std::to_string(end));
  }
  if (end >= length) {
    throw IndexError("token span end " + std::to_string(end) + " out of range for length " +
                     std::to_string(length));
  }
}

AttentionRow HeadedAttention::last_row(std::size_t head) const {
  if (head >= heads.size()) throw IndexError("head index out of range");
  const Matrix& a = heads[head];
  if (a.rows() == 0) throw DomainError("empty attention matrix");
  auto r = a.row(a.rows() - 1);
  return AttentionRow{{r.begin(), r.end()}, head};
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> out(logits.size(), 0.0);
  if (logits.empty()) return out;
  const double peak = *std::max_element(logits.begin(), logits.end());
  if (peak == -std::numeric_limits<double>::infinity()) {
    throw DomainError("softmax over a fully masked row");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(logits[i] - peak);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, bool causal) {
  if (q.rows() != k.rows() || q.cols() != k.cols()) {
    throw DimensionError("Q is " + std::to_string(q.rows()) + "x" + std::to_string(q.cols()) +
                         " but K is " + std::to_string(k.rows()) + "x" +
                         std::to_string(k.cols()));
  }
  if (q.cols() == 0) throw DomainError("d_k must be at least 1");

  const std::size_t n = q.rows();
  const std::size_t d_k = q.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d_k));
  constexpr double kMasked = -std::numeric_limits<double>::infinity();

  Matrix attn(n, n);
  std::vector<double> logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto qi = q.row(i);
    for (std::size_t j = 0; j < n; ++j) {
      if (causal && j > i) {
        logits[j] = kMasked;
        continue;
      }
      const auto kj = k.row(j);
      double dot = 0.0;
      for (std::size_t c = 0; c < d_k; ++c) dot += qi[c] * kj[c];
      logits[j] = dot * scale;
    }
    const auto probs = softmax(logits);
    std::copy(probs.begin(), probs.end(), attn.row(i).begin());
  }
  return attn;
}

AttentionRow head_average(std::span<const AttentionRow> rows) {
  if (rows.empty()) throw DomainError("head_average needs at least one head");
  const std::size_t n = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != n) throw DimensionError("head rows differ in length");
  }
  AttentionRow out{std::vector<double>(n, 0.0), std::nullopt};
  if (rows.size() == 1) {
    out.weights = rows.front().weights;
    return out;
  }
  for (const auto& r : rows) {
    for (std::size_t j = 0; j < n; ++j) out.weights[j] += r.weights[j];
  }
  const double inv = static_cast<double>(rows.size());
  for (double& v : out.weights) v /= inv;
  return out;
}

std::vector<double> extract_image_slice(const AttentionRow& row, const TokenSpan& span) {
  span.check(row.size());
  return {row.weights.begin() + static_cast<std::ptrdiff_t>(span.start),
          row.weights.begin() + static_cast<std::ptrdiff_t>(span.end) + 1};
}

AttentionRow write_image_slice(AttentionRow row, const TokenSpan& span,
                               std::span<const double> values) {
  span.check(row.size());
  if (values.size() != span.size()) {
    throw DimensionError("slice has " + std::to_string(values.size()) +
                         " values for a span of " + std::to_string(span.size()));
  }
  std::copy(values.begin(), values.end(),
            row.weights.begin() + static_cast<std::ptrdiff_t>(span.start));
  return row;
}

}  // namespace mdsam
