#include "mdsam/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

namespace mdsam {

namespace {

constexpr double kNormEps = 1e-6;
constexpr double kPositionBase = 10000.0;

// Uniform double in [lo, hi) built from the top 53 bits so the stream is identical
// across standard library implementations.
class UniformStream {
 public:
  explicit UniformStream(std::uint64_t seed) : gen_(seed) {}

  double next(double lo, double hi) {
    const double unit = static_cast<double>(gen_() >> 11) * 0x1.0p-53;
    return lo + (hi - lo) * unit;
  }

  std::size_t next_index(std::size_t n) {
    return static_cast<std::size_t>(next(0.0, 1.0) * static_cast<double>(n));
  }

 private:
  std::mt19937_64 gen_;
};

Matrix random_matrix(UniformStream& rng, std::size_t rows, std::size_t cols, double range) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.next(-range, range);
  return m;
}

// out = x * w for x (n x a), w (a x b).
Matrix matmul(const Matrix& x, const Matrix& w) {
  Matrix out(x.rows(), w.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < x.cols(); ++k) {
      const double xik = x(i, k);
      const auto wk = w.row(k);
      for (std::size_t j = 0; j < w.cols(); ++j) o[j] += xik * wk[j];
    }
  }
  return out;
}

Matrix rms_norm(const Matrix& x) {
  Matrix out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const auto r = x.row(i);
    double ss = 0.0;
    for (double v : r) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.cols()) + kNormEps);
    auto o = out.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) o[j] = r[j] * inv;
  }
  return out;
}

Matrix head_columns(const Matrix& x, std::size_t head, std::size_t d_k) {
  Matrix out(x.rows(), d_k);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < d_k; ++c) out(i, c) = x(i, head * d_k + c);
  }
  return out;
}

void check_dim(std::size_t value, const char* key) {
  if (value == 0) throw ConfigError(key, "must be at least 1");
}

}  // namespace

ModelParams build_model(std::uint64_t seed, std::size_t num_layers, std::size_t num_heads,
                        std::size_t d_model, std::size_t vocab_size) {
  check_dim(num_layers, "layers");
  check_dim(num_heads, "heads");
  check_dim(d_model, "d_model");
  check_dim(vocab_size, "vocab");
  if (d_model % num_heads != 0) {
    throw ConfigError("d_model", "d_model " + std::to_string(d_model) +
                                     " is not divisible by " + std::to_string(num_heads) +
                                     " heads");
  }

  ModelParams p;
  p.seed = seed;
  p.dims = {num_layers, num_heads, d_model, vocab_size};
  p.d_k = d_model / num_heads;
  p.d_ff = kFeedForwardMultiplier * d_model;

  UniformStream rng(seed);
  p.embedding = random_matrix(rng, vocab_size, d_model, kWeightRange);
  p.layers.reserve(num_layers);
  for (std::size_t l = 0; l < num_layers; ++l) {
    LayerParams layer;
    layer.wq = random_matrix(rng, d_model, d_model, kWeightRange);
    layer.wk = random_matrix(rng, d_model, d_model, kWeightRange);
    layer.wv = random_matrix(rng, d_model, d_model, kWeightRange);
    layer.wo = random_matrix(rng, d_model, d_model, kWeightRange);
    layer.ff_in = random_matrix(rng, d_model, p.d_ff, kWeightRange);
    layer.ff_out = random_matrix(rng, p.d_ff, d_model, kWeightRange);
    p.layers.push_back(std::move(layer));
  }
  p.unembedding = random_matrix(rng, d_model, vocab_size, kWeightRange);
  return p;
}

PromptLayout make_prompt(std::size_t num_image_tokens, std::size_t num_text_tokens,
                         std::uint64_t seed, std::size_t d_model, std::size_t vocab_size) {
  check_dim(num_image_tokens, "image_tokens");
  check_dim(d_model, "d_model");
  check_dim(vocab_size, "vocab");

  PromptLayout layout;
  layout.num_image_tokens = num_image_tokens;
  layout.num_text_tokens = num_text_tokens;
  layout.seed = seed;
  layout.span = {0, num_image_tokens - 1};

  UniformStream rng(seed);
  layout.image_embeddings = random_matrix(rng, num_image_tokens, d_model, 1.0);
  layout.text_tokens.reserve(num_text_tokens);
  for (std::size_t i = 0; i < num_text_tokens; ++i) {
    layout.text_tokens.push_back(rng.next_index(vocab_size));
  }
  return layout;
}

Matrix embed_sequence(const ModelParams& params, const PromptLayout& layout,
                      std::span<const std::size_t> generated) {
  const std::size_t d = params.dims.d_model;
  if (layout.image_embeddings.cols() != d) {
    throw DimensionError("prompt image embeddings have width " +
                         std::to_string(layout.image_embeddings.cols()) + ", model has " +
                         std::to_string(d));
  }
  const std::size_t n = layout.length() + generated.size();
  Matrix x(n, d);

  std::size_t pos = 0;
  for (std::size_t i = 0; i < layout.num_image_tokens; ++i, ++pos) {
    const auto src = layout.image_embeddings.row(i);
    std::copy(src.begin(), src.end(), x.row(pos).begin());
  }
  auto put_token = [&](std::size_t id) {
    if (id >= params.dims.vocab_size) throw IndexError("token id out of vocabulary");
    const auto src = params.embedding.row(id);
    std::copy(src.begin(), src.end(), x.row(pos).begin());
    ++pos;
  };
  for (std::size_t id : layout.text_tokens) put_token(id);
  for (std::size_t id : generated) put_token(id);

  for (std::size_t p = 0; p < n; ++p) {
    for (std::size_t j = 0; j < d; ++j) {
      const double freq =
          std::pow(kPositionBase, static_cast<double>(j - j % 2) / static_cast<double>(d));
      const double angle = static_cast<double>(p) / freq;
      x(p, j) += (j % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return x;
}

ForwardResult forward_pass(const ModelParams& params, const Matrix& embeddings,
                           const std::optional<MdsamConfig>& cfg, LayerMemory memory,
                           const TokenSpan& span) {
  const std::size_t n = embeddings.rows();
  const std::size_t d = params.dims.d_model;
  const std::size_t heads = params.dims.num_heads;
  const std::size_t d_k = params.d_k;
  if (n == 0) throw DomainError("forward_pass needs a non-empty sequence");
  if (embeddings.cols() != d) throw DimensionError("embedding width does not match d_model");
  span.check(n);
  if (cfg) cfg->validate();

  ForwardResult result{{}, {}, {}, std::move(memory)};
  result.layer_rows.reserve(params.layers.size());
  result.layer_head_rows.reserve(params.layers.size());

  Matrix h = embeddings;
  for (const LayerParams& layer : params.layers) {
    const Matrix x = rms_norm(h);
    const Matrix q = matmul(x, layer.wq);
    const Matrix k = matmul(x, layer.wk);
    const Matrix v = matmul(x, layer.wv);

    HeadedAttention attn{{}, n, d_k};
    attn.heads.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      attn.heads.push_back(
          scaled_dot_attention(head_columns(q, hd, d_k), head_columns(k, hd, d_k), true));
    }

    std::vector<AttentionRow> last_rows;
    last_rows.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) last_rows.push_back(attn.last_row(hd));

    if (cfg) {
      auto stepped = mdsam_layer_step(last_rows, std::move(result.memory), *cfg, span);
      result.memory = std::move(stepped.memory);
      last_rows = std::move(stepped.rows);
      for (std::size_t hd = 0; hd < heads; ++hd) {
        const auto& w = last_rows[hd].weights;
        std::copy(w.begin(), w.end(), attn.heads[hd].row(n - 1).begin());
      }
    }

    // Value mixing per head, concatenated into d_model columns.
    Matrix mixed(n, d);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      const Matrix& a = attn.heads[hd];
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
          const double aij = a(i, j);
          for (std::size_t c = 0; c < d_k; ++c) mixed(i, hd * d_k + c) += aij * v(j, hd * d_k + c);
        }
      }
    }
    const Matrix attn_out = matmul(mixed, layer.wo);
    for (std::size_t idx = 0; idx < h.data().size(); ++idx) h.data()[idx] += attn_out.data()[idx];

    Matrix hidden = matmul(rms_norm(h), layer.ff_in);
    for (double& val : hidden.data()) val = std::max(val, 0.0);
    const Matrix ff_out = matmul(hidden, layer.ff_out);
    for (std::size_t idx = 0; idx < h.data().size(); ++idx) h.data()[idx] += ff_out.data()[idx];

    result.layer_rows.push_back(head_average(last_rows));
    result.layer_head_rows.push_back(std::move(last_rows));
  }

  Matrix last(1, d);
  const auto hl = h.row(n - 1);
  std::copy(hl.begin(), hl.end(), last.row(0).begin());
  const Matrix logits = matmul(rms_norm(last), params.unembedding);
  result.logits.assign(logits.data().begin(), logits.data().end());
  return result;
}

std::size_t greedy_token(std::span<const double> logits) {
  if (logits.empty()) throw DomainError("greedy_token over empty logits");
  // max_element keeps the first maximum.
  return static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) -
                                  logits.begin());
}

DecodeSession::DecodeSession(ModelParams params, PromptLayout layout,
                             std::optional<MdsamConfig> cfg)
    : params_(std::move(params)),
      layout_(std::move(layout)),
      cfg_(std::move(cfg)),
      memory_(cfg_ ? cfg_->window : 1) {
  if (cfg_) cfg_->validate();
  if (layout_.image_embeddings.cols() != params_.dims.d_model) {
    throw DimensionError("prompt width does not match the model's d_model");
  }
  TraceMetadata& meta = trace_.metadata;
  meta.seed = params_.seed;
  meta.prompt_seed = layout_.seed;
  meta.num_layers = params_.dims.num_layers;
  meta.num_heads = params_.dims.num_heads;
  meta.d_model = params_.dims.d_model;
  meta.vocab_size = params_.dims.vocab_size;
  meta.image_tokens = layout_.num_image_tokens;
  meta.text_tokens = layout_.num_text_tokens;
  meta.mdsam = cfg_;
}

std::size_t DecodeSession::step() {
  if (cfg_ && cfg_->reset_policy == ResetPolicy::kPerToken) memory_ = memory_.cleared();

  const Matrix x = embed_sequence(params_, layout_, generated_);
  ForwardResult fwd = forward_pass(params_, x, cfg_, std::move(memory_), layout_.span);
  memory_ = std::move(fwd.memory);

  const std::size_t token = greedy_token(fwd.logits);
  generated_.push_back(token);
  const std::size_t step_index = generated_.size();
  for (std::size_t l = 0; l < fwd.layer_rows.size(); ++l) {
    trace_.records.push_back(
        {step_index, l + 1, image_attention_mass(fwd.layer_rows[l], layout_.span), token});
  }
  last_rows_ = std::move(fwd.layer_rows);
  last_head_rows_ = std::move(fwd.layer_head_rows);
  return token;
}

DecodeResult decode_greedy(DecodeSession& session, std::size_t max_new_tokens) {
  if (max_new_tokens == 0) throw DomainError("max_new_tokens must be at least 1");
  DecodeResult out;
  out.tokens.reserve(max_new_tokens);
  for (std::size_t s = 0; s < max_new_tokens; ++s) out.tokens.push_back(session.step());
  out.trace = session.trace();
  return out;
}

}  // namespace mdsam
