#pragma once

// Brute-force reference implementations used only by tests. They share no code with
// the library: softmax without max-shift, top-k by rank counting, decay weights via
// std::pow, and the layer pipeline spelled out step by step on plain vectors.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <vector>

namespace mdsam::oracle {

using Vec = std::vector<double>;
using Mat = std::vector<Vec>;

inline Vec softmax_direct(const Vec& logits) {
  Vec out(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::isinf(logits[i]) ? 0.0 : std::exp(logits[i]);
    total += out[i];
  }
  for (double& v : out) v /= total;
  return out;
}

inline Mat attention(const Mat& q, const Mat& k, bool causal) {
  const std::size_t n = q.size();
  const double d = static_cast<double>(q.front().size());
  Mat out;
  for (std::size_t i = 0; i < n; ++i) {
    Vec logits(n);
    for (std::size_t j = 0; j < n; ++j) {
      if (causal && j > i) {
        logits[j] = -std::numeric_limits<double>::infinity();
        continue;
      }
      double dot = 0.0;
      for (std::size_t c = 0; c < q[i].size(); ++c) dot += q[i][c] * k[j][c];
      logits[j] = dot / std::sqrt(d);
    }
    out.push_back(softmax_direct(logits));
  }
  return out;
}

inline Vec normalize(const Vec& v) {
  double lo = v[0], hi = v[0];
  for (double x : v) {
    lo = x < lo ? x : lo;
    hi = x > hi ? x : hi;
  }
  Vec out(v.size(), 0.0);
  if (hi - lo < 1e-12) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  return out;
}

inline std::size_t k_for(double tau, std::size_t n) {
  std::size_t k = 0;
  // Largest k with k <= tau * n, by counting up.
  while (k + 1 <= n && static_cast<double>(k + 1) <= tau * static_cast<double>(n)) ++k;
  return k == 0 ? 1 : k;
}

// Position i survives iff fewer than k positions outrank it, where j outranks i when
// v[j] > v[i] or (v[j] == v[i] and j < i).
inline Vec topk(const Vec& v, double tau) {
  const std::size_t k = k_for(tau, v.size());
  Vec out(v.size(), 0.0);
  for (std::size_t i = 0; i < v.size(); ++i) {
    std::size_t ahead = 0;
    for (std::size_t j = 0; j < v.size(); ++j) {
      if (v[j] > v[i] || (v[j] == v[i] && j < i)) ++ahead;
    }
    if (ahead < k) out[i] = v[i];
  }
  return out;
}

// entries[0] is the most recent.
inline Vec aggregate(const Mat& entries, double alpha) {
  Vec num(entries.front().size(), 0.0);
  double den = 0.0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const double w = std::pow(alpha, static_cast<double>(i + 1));
    den += w;
    for (std::size_t j = 0; j < num.size(); ++j) num[j] += entries[i][j] * w;
  }
  for (double& x : num) x /= den;
  return num;
}

inline Vec align(Vec row, const Vec& agg, double beta, std::size_t start, bool renormalize) {
  for (std::size_t j = 0; j < agg.size(); ++j) {
    row[start + j] = (row[start + j] + beta * agg[j]) / (1.0 + beta);
  }
  if (renormalize && beta != 0.0) {
    double total = 0.0;
    for (double x : row) total += x;
    for (double& x : row) x /= total;
  }
  return row;
}

struct PipelineResult {
  Mat rows;     // per head
  Mat entries;  // memory after the push, most recent first
};

// One steering step on plain vectors. memory is most-recent-first.
inline PipelineResult layer_step(const Mat& head_rows, Mat memory, double tau, double alpha,
                                 double beta, std::size_t window, bool renormalize,
                                 std::size_t start, std::size_t end) {
  const std::size_t n = head_rows.front().size();
  Vec avg(n, 0.0);
  for (const auto& r : head_rows) {
    for (std::size_t j = 0; j < n; ++j) avg[j] += r[j];
  }
  for (double& x : avg) x /= static_cast<double>(head_rows.size());

  const Vec slice(avg.begin() + static_cast<std::ptrdiff_t>(start),
                  avg.begin() + static_cast<std::ptrdiff_t>(end) + 1);
  memory.insert(memory.begin(), topk(normalize(slice), tau));
  if (memory.size() > window) memory.resize(window);
  const Vec agg = aggregate(memory, alpha);

  PipelineResult out;
  for (const auto& r : head_rows) out.rows.push_back(align(r, agg, beta, start, renormalize));
  out.entries = std::move(memory);
  return out;
}

inline double max_abs_diff(const Vec& a, const Vec& b) {
  double worst = a.size() == b.size() ? 0.0 : std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

// Random helpers shared by property tests.
inline Vec uniform_vec(std::mt19937_64& rng, std::size_t n, double lo = 0.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Vec v(n);
  for (double& x : v) x = dist(rng);
  return v;
}

inline Vec stochastic_vec(std::mt19937_64& rng, std::size_t n) {
  Vec v = uniform_vec(rng, n, 0.01, 1.0);
  double total = 0.0;
  for (double x : v) total += x;
  for (double& x : v) x /= total;
  return v;
}

}  // namespace mdsam::oracle
