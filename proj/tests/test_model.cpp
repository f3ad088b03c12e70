#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "staticquant/model.hpp"
#include "staticquant/pipeline.hpp"

using namespace sq;

namespace {

ToyTransformerConfig small_config() {
  ToyTransformerConfig c;
  c.hidden_dim = 32;
  c.num_heads = 4;
  c.mlp_dim = 64;
  c.num_layers = 2;
  c.vocab_size = 64;
  c.seq_len = 8;
  return c;
}

}  // namespace

TEST_CASE("config invariants are enforced") {
  ToyTransformerConfig c = small_config();
  c.hidden_dim = 48;  // not a power of two
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config();
  c.num_heads = 3;  // does not divide hidden_dim
  CHECK_THROWS_AS(c.validate(), ConfigError);

  c = small_config();
  c.hidden_dim = 64;
  c.num_heads = 2;  // head_dim = 32, fine
  CHECK_NOTHROW(c.validate());

  QuantBits b;
  b.weight_bits = 5;
  CHECK_THROWS_AS(build_model(small_config(), b, 1), ConfigError);
}

TEST_CASE("model construction is deterministic in the seed") {
  Model a = build_model(small_config(), QuantBits{}, 42);
  Model b = build_model(small_config(), QuantBits{}, 42);
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    for (std::size_t i = 0; i < a.layers[l].wq.size(); ++i) {
      CHECK(a.layers[l].wq[i] == b.layers[l].wq[i]);
    }
  }
  for (std::size_t i = 0; i < a.embedding.size(); ++i) {
    CHECK(a.embedding[i] == b.embedding[i]);
  }
  Model c = build_model(small_config(), QuantBits{}, 43);
  bool any_diff = false;
  for (std::size_t i = 0; i < a.embedding.size() && !any_diff; ++i) {
    any_diff = a.embedding[i] != c.embedding[i];
  }
  CHECK(any_diff);
}

TEST_CASE("site enumeration covers every insertion point exactly once") {
  Model m = build_model(small_config(), QuantBits{}, 1);
  // per layer: 7 input acts + 7 weights + 5 output acts + key + value + silu = 22
  CHECK(m.sites.size() == 2 * 22 + 3);
  for (std::size_t i = 0; i < m.sites.size(); ++i) {
    CHECK(m.sites[i].index == static_cast<int>(i));
  }
  // lm_head never quantizes
  for (const QuantSite& s : m.sites) {
    if (s.op == ModelOp::lm_head) CHECK(s.stage == Stage::excluded);
  }
  // stage one only for linear inputs and weights
  for (const QuantSite& s : m.sites) {
    if (s.stage == Stage::one) {
      CHECK((s.role == SiteRole::linear_input_act || s.role == SiteRole::linear_weight));
    }
  }
  // down_proj input is an unrotated site
  const QuantSite& down_in = m.site_at(0, ModelOp::down_proj, SiteRole::linear_input_act);
  CHECK(down_in.spec.tensor_class == TensorClass::unrotated);
  // KV sites carry the KV bit-width, silu sites 16-bit
  CHECK(m.site_at(0, ModelOp::k_proj, SiteRole::key).spec.bits == 8);
  CHECK(m.site_at(0, ModelOp::v_proj, SiteRole::value).spec.bits == 8);
  CHECK(m.site_at(0, ModelOp::silu, SiteRole::silu_output).spec.bits == 16);
  CHECK(m.site_at(0, ModelOp::gate_proj, SiteRole::linear_output_act).spec.bits == 16);
}

TEST_CASE("fp32 forward with rotations matches the unrotated forward within 1e-4") {
  ToyTransformerConfig rotated_cfg = small_config();
  ToyTransformerConfig plain_cfg = rotated_cfg;
  plain_cfg.use_rotation = false;
  Model rotated = build_model(rotated_cfg, QuantBits{}, 5);
  Model plain = build_model(plain_cfg, QuantBits{}, 5);

  TokenSet tokens = synth_tokens(9, 3, rotated_cfg.seq_len, rotated_cfg.vocab_size);
  for (const auto& seq : tokens) {
    Tensor a = forward_logits(rotated, seq, ForwardFlags{});
    Tensor b = forward_logits(plain, seq, ForwardFlags{});
    CHECK(max_abs(sub(a, b)) <= 1e-4f);
  }
}

TEST_CASE("learned cayley rotations keep the fp32 output equivalent") {
  ToyTransformerConfig cfg = small_config();
  Model m = build_model(cfg, QuantBits{}, 6);
  // random nonzero cayley parameters
  Rng rng(7);
  for (std::size_t i = 0; i < m.theta1.size(); ++i) {
    m.theta1[i] = static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  for (std::size_t i = 0; i < m.theta2.size(); ++i) {
    m.theta2[i] = static_cast<float>(rng.uniform(-0.05, 0.05));
  }
  ToyTransformerConfig plain_cfg = cfg;
  plain_cfg.use_rotation = false;
  Model plain = build_model(plain_cfg, QuantBits{}, 6);

  TokenSet tokens = synth_tokens(10, 2, cfg.seq_len, cfg.vocab_size);
  for (const auto& seq : tokens) {
    Tensor a = forward_logits(m, seq, ForwardFlags{});
    Tensor b = forward_logits(plain, seq, ForwardFlags{});
    CHECK(max_abs(sub(a, b)) <= 2e-4f);
  }
}

TEST_CASE("disabled quantizers leave the fp32 output untouched") {
  Model m = build_model(small_config(), QuantBits{}, 8);
  TokenSet calib = synth_tokens(11, 4, m.config.seq_len, m.config.vocab_size);
  Tensor before = forward_logits(m, calib[0], ForwardFlags{});
  initialize_stage_one_sites(m, calib);
  // sites initialized but quantization flags off: bit-identical output
  Tensor after = forward_logits(m, calib[0], ForwardFlags{});
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("token ids outside the vocabulary are rejected") {
  Model m = build_model(small_config(), QuantBits{}, 9);
  std::vector<std::int32_t> bad(m.config.seq_len, 0);
  bad[3] = static_cast<std::int32_t>(m.config.vocab_size);
  CHECK_THROWS_AS(forward_logits(m, bad, ForwardFlags{}), ArgumentError);
}

TEST_CASE("observer sees every site exactly once per forward") {
  Model m = build_model(small_config(), QuantBits{}, 10);
  TokenSet tokens = synth_tokens(12, 1, m.config.seq_len, m.config.vocab_size);
  std::vector<int> seen(m.sites.size(), 0);
  SiteObserver obs = [&](const QuantSite& s, const Tensor&) {
    seen[static_cast<std::size_t>(s.index)] += 1;
  };
  forward_logits(m, tokens[0], ForwardFlags{}, obs);
  for (std::size_t i = 0; i < seen.size(); ++i) {
    CHECK(seen[i] == 1);
  }
}
