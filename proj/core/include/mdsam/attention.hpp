#pragma once

// Scaled dot-product attention and last-row utilities over the image-token span.
//
// Everything here is double precision and pure: inputs are never mutated, so the
// functions can be called from any number of threads.

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "mdsam/errors.hpp"

namespace mdsam {

// Dense row-major matrix. Just enough linear algebra for a desk-scale decoder.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Inclusive [start, end] range of image positions inside a sequence.
struct TokenSpan {
  std::size_t start = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - start + 1; }
  bool contains(std::size_t i) const noexcept { return i >= start && i <= end; }

  // Throws IndexError unless start <= end < length.
  void check(std::size_t length) const;

  friend bool operator==(const TokenSpan&, const TokenSpan&) = default;
};

// One attention distribution. head_id is empty for head-averaged rows.
struct AttentionRow {
  std::vector<double> weights;
  std::optional<std::size_t> head_id;

  std::size_t size() const noexcept { return weights.size(); }
  friend bool operator==(const AttentionRow&, const AttentionRow&) = default;
};

// Per-head causal attention matrices of one layer.
struct HeadedAttention {
  std::vector<Matrix> heads;  // each n x n
  std::size_t n = 0;
  std::size_t d_k = 0;

  std::size_t num_heads() const noexcept { return heads.size(); }
  AttentionRow last_row(std::size_t head) const;
};

// Numerically stable softmax (max-subtracted). -inf entries map to exactly 0.
std::vector<double> softmax(std::span<const double> logits);

// softmax(Q K^T / sqrt(d_k)), optionally with an additive -inf causal mask.
// Throws DimensionError when Q and K shapes differ, DomainError when d_k == 0.
Matrix scaled_dot_attention(const Matrix& q, const Matrix& k, bool causal);

// Elementwise mean of per-head rows. Throws DomainError on empty input and
// DimensionError when lengths differ.
AttentionRow head_average(std::span<const AttentionRow> rows);

// Copy of row[span.start..span.end]. Throws IndexError when the span does not fit.
std::vector<double> extract_image_slice(const AttentionRow& row, const TokenSpan& span);

// row with [span.start..span.end] replaced by values.
// Throws DimensionError when values.size() != span.size(), IndexError on a bad span.
AttentionRow write_image_slice(AttentionRow row, const TokenSpan& span,
                               std::span<const double> values);

}  // namespace mdsam
