#include <cmath>

#include "doctest.h"
#include "mdsam/decoder.hpp"
#include "support/oracles.hpp"

using namespace mdsam;

namespace {

struct Fixture {
  ModelParams params = build_model(42, 4, 2, 16, 64);
  PromptLayout layout = make_prompt(16, 8, 7, 16, 64);
};

}  // namespace

TEST_CASE("build_model") {
  const auto a = build_model(42, 4, 2, 16, 64);
  const auto b = build_model(42, 4, 2, 16, 64);
  CHECK(a == b);
  CHECK_FALSE(a == build_model(43, 4, 2, 16, 64));

  REQUIRE(a.layers.size() == 4);
  CHECK(a.d_k == 8);
  for (const auto& layer : a.layers) {
    for (const Matrix* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo}) {
      CHECK(m->rows() == 16);
      CHECK(m->cols() == 16);
    }
  }
  for (double w : a.embedding.data()) REQUIRE(std::abs(w) <= kWeightRange);

  CHECK_THROWS_AS(build_model(1, 4, 3, 16, 64), ConfigError);
  CHECK_THROWS_AS(build_model(1, 0, 2, 16, 64), ConfigError);
}

TEST_CASE("make_prompt") {
  const auto p = make_prompt(16, 8, 7, 16, 64);
  CHECK(p.length() == 24);
  CHECK(p.span == TokenSpan{0, 15});
  CHECK(p.text_tokens.size() == 8);
  for (auto id : p.text_tokens) CHECK(id < 64);
  CHECK_THROWS_AS(make_prompt(0, 8, 7, 16, 64), ConfigError);
}

TEST_CASE("forward_pass: baseline path") {
  Fixture f;
  const Matrix x = embed_sequence(f.params, f.layout, {});
  LayerMemory mem(8);
  const auto out = forward_pass(f.params, x, std::nullopt, mem, f.layout.span);
  CHECK(out.memory == mem);
  CHECK(out.logits.size() == 64);
  REQUIRE(out.layer_rows.size() == 4);
  for (const auto& row : out.layer_rows) {
    CHECK(row.size() == 24);
    double total = 0.0;
    for (double w : row.weights) total += w;
    CHECK(std::abs(total - 1.0) < 1e-9);
  }
}

TEST_CASE("forward_pass: beta 0 is transparent") {
  Fixture f;
  const Matrix x = embed_sequence(f.params, f.layout, std::vector<std::size_t>{3, 9});
  MdsamConfig cfg;
  cfg.beta = 0.0;
  const auto base = forward_pass(f.params, x, std::nullopt, LayerMemory(8), f.layout.span);
  const auto treated = forward_pass(f.params, x, cfg, LayerMemory(cfg.window), f.layout.span);
  CHECK(base.logits == treated.logits);
  CHECK(base.layer_rows == treated.layer_rows);
  CHECK(treated.memory.total_pushes() == 4);
}

TEST_CASE("forward_pass: first layer equals the oracle applied to baseline rows") {
  Fixture f;
  const Matrix x = embed_sequence(f.params, f.layout, {});
  const MdsamConfig cfg;
  const auto base = forward_pass(f.params, x, std::nullopt, LayerMemory(8), f.layout.span);
  const auto treated = forward_pass(f.params, x, cfg, LayerMemory(cfg.window), f.layout.span);

  oracle::Mat heads;
  for (const auto& r : base.layer_head_rows[0]) heads.push_back(r.weights);
  const auto ref = oracle::layer_step(heads, {}, cfg.tau, cfg.alpha, cfg.beta, cfg.window, true,
                                      f.layout.span.start, f.layout.span.end);
  oracle::Vec avg(heads.front().size(), 0.0);
  for (const auto& r : ref.rows) {
    for (std::size_t j = 0; j < avg.size(); ++j) avg[j] += r[j] / static_cast<double>(ref.rows.size());
  }
  CHECK(oracle::max_abs_diff(treated.layer_rows[0].weights, avg) < 1e-9);
  for (std::size_t h = 0; h < ref.rows.size(); ++h) {
    CHECK(oracle::max_abs_diff(treated.layer_head_rows[0][h].weights, ref.rows[h]) < 1e-9);
  }
}

TEST_CASE("greedy_token breaks ties toward the lowest id") {
  CHECK(greedy_token(std::vector<double>{0.1, 0.7, 0.7, 0.2}) == 1);
  CHECK_THROWS_AS(greedy_token({}), DomainError);
}

TEST_CASE("decode_greedy") {
  Fixture f;
  SUBCASE("one token") {
    DecodeSession s(f.params, f.layout);
    const auto r = decode_greedy(s, 1);
    CHECK(r.tokens.size() == 1);
    CHECK(r.trace.records.size() == 4);
  }
  SUBCASE("determinism") {
    DecodeSession a(f.params, f.layout, MdsamConfig{});
    DecodeSession b(f.params, f.layout, MdsamConfig{});
    const auto ra = decode_greedy(a, 12);
    const auto rb = decode_greedy(b, 12);
    CHECK(ra.tokens == rb.tokens);
    CHECK(ra.trace == rb.trace);
  }
  SUBCASE("baseline and beta 0 agree") {
    MdsamConfig cfg;
    cfg.beta = 0.0;
    DecodeSession base(f.params, f.layout);
    DecodeSession treated(f.params, f.layout, cfg);
    const auto rb = decode_greedy(base, 10);
    const auto rt = decode_greedy(treated, 10);
    CHECK(rb.tokens == rt.tokens);
    CHECK(rb.trace.records == rt.trace.records);
    CHECK(base.memory().total_pushes() == 0);
  }
  SUBCASE("memory accounting") {
    DecodeSession s(f.params, f.layout, MdsamConfig{});
    for (std::size_t step = 1; step <= 5; ++step) {
      s.step();
      CHECK(s.memory().total_pushes() == step * 4);
      CHECK(s.memory().size() == std::min<std::size_t>(step * 4, 8));
      CHECK(s.trace().records.size() == step * 4);
    }
  }
  SUBCASE("per-token reset holds one step of pushes") {
    MdsamConfig cfg;
    cfg.reset_policy = ResetPolicy::kPerToken;
    cfg.window = 16;
    DecodeSession s(f.params, f.layout, cfg);
    for (int step = 0; step < 3; ++step) {
      s.step();
      CHECK(s.memory().size() == 4);
    }
  }
  SUBCASE("zero steps rejected") {
    DecodeSession s(f.params, f.layout);
    CHECK_THROWS_AS(decode_greedy(s, 0), DomainError);
  }
  SUBCASE("trace is well formed") {
    DecodeSession s(f.params, f.layout, MdsamConfig{});
    const auto r = decode_greedy(s, 6);
    CHECK_NOTHROW(r.trace.validate());
    CHECK(r.trace.tokens() == r.tokens);
    CHECK(r.trace.metadata.mdsam.has_value());
    CHECK(r.trace.metadata.num_layers == 4);
  }
}
