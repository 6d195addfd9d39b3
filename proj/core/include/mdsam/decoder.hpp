#pragma once

// Deterministic miniature causal decoder with the steering hook at every layer.
//
// Block structure (per layer, pre-norm):
//   h += W_o * concat_h(A_h V_h)        A_h = causal softmax(Q_h K_h^T / sqrt(d_k))
//   h += W_2 * relu(W_1 * rmsnorm(h))
// Inputs are the prompt embeddings [image | text] followed by generated tokens, plus
// fixed sinusoidal positions. Every weight is uniform in [-0.1, 0.1] from a
// mt19937_64 stream seeded by the model seed; nothing is cached between steps.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "mdsam/attention.hpp"
#include "mdsam/engine.hpp"
#include "mdsam/trace.hpp"

namespace mdsam {

struct ModelDims {
  std::size_t num_layers = 4;
  std::size_t num_heads = 2;
  std::size_t d_model = 16;
  std::size_t vocab_size = 64;

  friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct LayerParams {
  Matrix wq, wk, wv, wo;  // d_model x d_model
  Matrix ff_in;           // d_model x d_ff
  Matrix ff_out;          // d_ff x d_model

  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct ModelParams {
  std::uint64_t seed = 0;
  ModelDims dims;
  std::size_t d_k = 0;
  std::size_t d_ff = 0;
  Matrix embedding;    // vocab_size x d_model
  Matrix unembedding;  // d_model x vocab_size
  std::vector<LayerParams> layers;

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

inline constexpr double kWeightRange = 0.1;
inline constexpr std::size_t kFeedForwardMultiplier = 4;

// Throws ConfigError when a dimension is zero or d_model % num_heads != 0.
ModelParams build_model(std::uint64_t seed, std::size_t num_layers, std::size_t num_heads,
                        std::size_t d_model, std::size_t vocab_size);
inline ModelParams build_model(std::uint64_t seed, const ModelDims& dims) {
  return build_model(seed, dims.num_layers, dims.num_heads, dims.d_model, dims.vocab_size);
}

// Synthetic image+text prompt. Image rows stand in for projected visual features and
// are uniform in [-1, 1]; text ids are uniform over the vocabulary.
struct PromptLayout {
  std::size_t num_image_tokens = 0;
  std::size_t num_text_tokens = 0;
  std::uint64_t seed = 0;
  TokenSpan span;
  Matrix image_embeddings;  // num_image_tokens x d_model
  std::vector<std::size_t> text_tokens;

  std::size_t length() const noexcept { return num_image_tokens + num_text_tokens; }
};

// Throws ConfigError when num_image_tokens == 0 or a dimension is zero.
PromptLayout make_prompt(std::size_t num_image_tokens, std::size_t num_text_tokens,
                         std::uint64_t seed, std::size_t d_model, std::size_t vocab_size);

// Prompt plus generated tokens, with sinusoidal positions added: length x d_model.
Matrix embed_sequence(const ModelParams& params, const PromptLayout& layout,
                      std::span<const std::size_t> generated);

struct ForwardResult {
  std::vector<double> logits;
  // Head-averaged last-token row per layer, after any steering.
  std::vector<AttentionRow> layer_rows;
  // Per-head last-token rows per layer, after any steering.
  std::vector<std::vector<AttentionRow>> layer_head_rows;
  LayerMemory memory;
};

// One full-sequence pass. With cfg set, each layer runs mdsam_layer_step on the last
// token's per-head rows before value mixing; otherwise memory is returned as given.
ForwardResult forward_pass(const ModelParams& params, const Matrix& embeddings,
                           const std::optional<MdsamConfig>& cfg, LayerMemory memory,
                           const TokenSpan& span);

// argmax with ties going to the lowest index.
std::size_t greedy_token(std::span<const double> logits);

// One greedy generation run. Single-threaded; move it between threads freely.
class DecodeSession {
 public:
  DecodeSession(ModelParams params, PromptLayout layout,
                std::optional<MdsamConfig> cfg = std::nullopt);

  const ModelParams& params() const noexcept { return params_; }
  const PromptLayout& layout() const noexcept { return layout_; }
  const std::optional<MdsamConfig>& config() const noexcept { return cfg_; }
  const LayerMemory& memory() const noexcept { return memory_; }
  const std::vector<std::size_t>& generated() const noexcept { return generated_; }
  const DecodeTrace& trace() const noexcept { return trace_; }
  // Per-layer last-token rows (head-averaged and per head) from the most recent step.
  const std::vector<AttentionRow>& last_layer_rows() const noexcept { return last_rows_; }
  const std::vector<std::vector<AttentionRow>>& last_layer_head_rows() const noexcept {
    return last_head_rows_;
  }

  // Generates one token and appends num_layers trace records.
  std::size_t step();

 private:
  ModelParams params_;
  PromptLayout layout_;
  std::optional<MdsamConfig> cfg_;
  LayerMemory memory_;
  std::vector<std::size_t> generated_;
  DecodeTrace trace_;
  std::vector<AttentionRow> last_rows_;
  std::vector<std::vector<AttentionRow>> last_head_rows_;
};

struct DecodeResult {
  std::vector<std::size_t> tokens;
  DecodeTrace trace;
};

// Runs max_new_tokens steps on session. Throws DomainError when max_new_tokens == 0.
DecodeResult decode_greedy(DecodeSession& session, std::size_t max_new_tokens);

}  // namespace mdsam
