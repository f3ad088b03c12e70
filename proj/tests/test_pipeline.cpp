#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "staticquant/pipeline.hpp"

using namespace sq;

namespace {

ToyTransformerConfig test_config() {
  ToyTransformerConfig c;
  c.hidden_dim = 32;
  c.num_heads = 4;
  c.mlp_dim = 64;
  c.num_layers = 2;
  c.vocab_size = 64;
  c.seq_len = 8;
  return c;
}

struct Prepared {
  Model model;
  TokenSet calib;
  CalibrationWorkspace ws;
};

Prepared prepare(std::uint64_t seed, ToyTransformerConfig cfg, QuantBits bits = {},
                 const PipelineOptions& options = {}) {
  Prepared p{build_model(cfg, bits, seed),
             synth_tokens(mix_seed(seed, 22), 8, cfg.seq_len, cfg.vocab_size),
             {}};
  p.ws = initialize_stage_one_sites(p.model, p.calib, options);
  return p;
}

std::vector<float> all_scales(const Model& m) {
  std::vector<float> out;
  for (const QuantSite& s : m.sites) {
    out.insert(out.end(), s.params.scale.begin(), s.params.scale.end());
  }
  return out;
}

}  // namespace

TEST_CASE("initialization follows the policy per tensor class") {
  Prepared p = prepare(1, test_config());
  for (const QuantSite& s : p.model.sites) {
    if (s.stage != Stage::one) continue;
    CHECK(s.initialized);
    if (s.spec.tensor_class == TensorClass::rotated) {
      CHECK(s.init_method == InitMethod::mean_based);
    } else {
      CHECK(s.init_method == InitMethod::max_min);
      CHECK(s.spec.bits >= 8);
    }
    for (float v : s.params.scale) CHECK(v > 0.0f);
  }
  // 4-bit weights stay 4-bit under rotation
  CHECK(p.model.site_at(0, ModelOp::q_proj, SiteRole::linear_weight).spec.bits == 4);
  // per-channel weight params carry one scale per output row
  CHECK(p.model.site_at(0, ModelOp::q_proj, SiteRole::linear_weight).params.scale.size() ==
        p.model.config.hidden_dim);
}

TEST_CASE("empty calibration set is rejected") {
  Model m = build_model(test_config(), QuantBits{}, 2);
  TokenSet empty;
  CHECK_THROWS_AS(initialize_stage_one_sites(m, empty), CalibrationError);
  CHECK_THROWS_AS(stage_two_calibrate(m, empty), CalibrationError);
}

TEST_CASE("sensitivity probe ranks the injected-outlier layer first") {
  ToyTransformerConfig cfg = test_config();
  cfg.num_layers = 4;
  cfg.outlier_layer = 2;
  cfg.outlier_gain = 30.0f;
  Prepared p = prepare(3, cfg);
  auto reports = probe_down_proj_sensitivity(p.model, p.ws);
  REQUIRE(reports.size() == 4);
  const SensitivityReport* best = &reports[0];
  for (const auto& r : reports) {
    if (r.ratio > best->ratio) best = &r;
  }
  CHECK(p.model.sites[static_cast<std::size_t>(best->site_index)].layer == 2);
}

TEST_CASE("plan application re-initializes promoted sites at 16 bits") {
  ToyTransformerConfig cfg = test_config();
  cfg.num_layers = 4;
  Prepared p = prepare(4, cfg);
  auto reports = probe_down_proj_sensitivity(p.model, p.ws);
  PrecisionPlan plan = plan_mixed_precision(reports, 0.25);
  apply_precision_plan(p.model, plan, p.ws);
  std::size_t promoted = 0;
  for (const QuantSite& s : p.model.sites) {
    if (s.role == SiteRole::linear_input_act && s.op == ModelOp::down_proj &&
        s.spec.bits == 16) {
      ++promoted;
    }
  }
  CHECK(promoted == 1);  // ceil(0.25 * 4)
}

TEST_CASE("zero optimization steps leave parameters exactly at initialization") {
  Prepared p = prepare(5, test_config());
  const std::vector<float> scales_before = all_scales(p.model);
  const Tensor theta_before = p.model.theta1;

  OptimConfig optim;
  optim.steps = 0;
  LossTrace trace = stage_one_optimize(p.model, p.calib, optim);
  CHECK(trace.entries.size() == 1);

  const std::vector<float> scales_after = all_scales(p.model);
  REQUIRE(scales_before.size() == scales_after.size());
  for (std::size_t i = 0; i < scales_before.size(); ++i) {
    CHECK(scales_before[i] == scales_after[i]);
  }
  for (std::size_t i = 0; i < theta_before.size(); ++i) {
    CHECK(theta_before[i] == p.model.theta1[i]);
  }
}

TEST_CASE("zero learning rates make stage one a no-op on all parameters") {
  Prepared p = prepare(6, test_config());
  const std::vector<float> scales_before = all_scales(p.model);

  OptimConfig optim;
  optim.steps = 8;
  optim.lr_quant = 0.0f;
  optim.lr_rotation = 0.0f;
  stage_one_optimize(p.model, p.calib, optim);

  const std::vector<float> scales_after = all_scales(p.model);
  for (std::size_t i = 0; i < scales_before.size(); ++i) {
    CHECK(scales_before[i] == scales_after[i]);
  }
  for (std::size_t i = 0; i < p.model.theta1.size(); ++i) {
    CHECK(p.model.theta1[i] == 0.0f);
  }
}

TEST_CASE("stage separation: stage-two parameters untouched by stage one and vice versa") {
  Prepared p = prepare(7, test_config());
  OptimConfig optim;
  optim.steps = 4;
  stage_one_optimize(p.model, p.calib, optim);

  const Tensor theta1_after_one = p.model.theta1;
  stage_two_calibrate(p.model, p.calib);
  // rotations untouched by stage two
  for (std::size_t i = 0; i < theta1_after_one.size(); ++i) {
    CHECK(p.model.theta1[i] == theta1_after_one[i]);
  }
  for (const QuantSite& s : p.model.sites) {
    if (s.stage == Stage::two) {
      CHECK(s.initialized);
      CHECK_FALSE(s.params.learnable);
    }
  }
}

TEST_CASE("rotations stay orthogonal through optimization") {
  Prepared p = prepare(8, test_config());
  OptimConfig optim;
  optim.steps = 24;
  optim.warmup_local_loss_steps = 8;
  stage_one_optimize(p.model, p.calib, optim);
  CHECK(orthogonality_error(p.model.rotation_r1()) <= 1e-4f);
  CHECK(orthogonality_error(p.model.rotation_r2()) <= 1e-4f);
}

TEST_CASE("warmup: local term is zero after warmup_local_loss_steps") {
  Prepared p = prepare(9, test_config());
  OptimConfig optim;
  optim.steps = 12;
  optim.warmup_local_loss_steps = 5;
  LossTrace trace = stage_one_optimize(p.model, p.calib, optim);
  REQUIRE(trace.entries.size() == 13);
  for (std::size_t step = 0; step < trace.entries.size(); ++step) {
    if (step < 5) {
      CHECK(trace.entries[step].local > 0.0);
    } else {
      CHECK(trace.entries[step].local == 0.0);
      CHECK(trace.entries[step].total == trace.entries[step].teacher_mse);
    }
  }
}

TEST_CASE("stage two calibration is deterministic") {
  Prepared p1 = prepare(10, test_config());
  Prepared p2 = prepare(10, test_config());
  OptimConfig optim;
  optim.steps = 2;
  stage_one_optimize(p1.model, p1.calib, optim);
  stage_one_optimize(p2.model, p2.calib, optim);
  stage_two_calibrate(p1.model, p1.calib);
  stage_two_calibrate(p2.model, p2.calib);
  const auto s1 = all_scales(p1.model);
  const auto s2 = all_scales(p2.model);
  REQUIRE(s1.size() == s2.size());
  for (std::size_t i = 0; i < s1.size(); ++i) CHECK(s1[i] == s2[i]);
}

TEST_CASE("stage two assigns KV sites 8-bit and SiLU sites 16-bit specs") {
  Prepared p = prepare(11, test_config());
  OptimConfig optim;
  optim.steps = 0;
  stage_one_optimize(p.model, p.calib, optim);
  stage_two_calibrate(p.model, p.calib);
  CHECK(p.model.site_at(0, ModelOp::k_proj, SiteRole::key).spec.bits == 8);
  CHECK(p.model.site_at(1, ModelOp::v_proj, SiteRole::value).spec.bits == 8);
  CHECK(p.model.site_at(0, ModelOp::silu, SiteRole::silu_output).spec.bits == 16);
  CHECK(p.model.site_at(0, ModelOp::silu, SiteRole::silu_output).init_method ==
        InitMethod::max_min);
}

TEST_CASE("constant activations at a site produce the scale floor") {
  // all-identical tokens make every position identical; the key tensor still
  // varies, but a zero-width distribution appears for padding-free constant
  // sequences only at degenerate sites. Exercise max_min_init directly via a
  // constant stats object instead.
  RunningStats stats;
  for (int i = 0; i < 10; ++i) stats.update(0.0f);
  QuantSpec spec;
  spec.bits = 8;
  QuantParams params = max_min_init(stats, spec);
  CHECK(params.scale[0] == kScaleFloor);
  CHECK(params.zero_point[0] == 0);
}

TEST_CASE("evaluate: all quantizers disabled gives exactly zero MSE") {
  Model m = build_model(test_config(), QuantBits{}, 12);
  TokenSet eval_tokens = synth_tokens(13, 3, m.config.seq_len, m.config.vocab_size);
  // nothing initialized: the quantized forward equals the fp forward
  EvalReport report = evaluate(m, eval_tokens);
  CHECK(report.output_mse == 0.0);
  CHECK(report.sites.empty());
}

TEST_CASE("non-finite losses abort with the failing step index") {
  ToyTransformerConfig cfg = test_config();
  Model m = build_model(cfg, QuantBits{}, 14);
  TokenSet calib = synth_tokens(15, 4, cfg.seq_len, cfg.vocab_size);
  initialize_stage_one_sites(m, calib);
  // poison one weight so the forward overflows to non-finite values
  m.layers[0].wq.at(0, 0) = std::numeric_limits<float>::infinity();
  OptimConfig optim;
  optim.steps = 3;
  bool caught = false;
  try {
    stage_one_optimize(m, calib, optim);
  } catch (const AbortedRunError& e) {
    caught = true;
    CHECK(e.step() == 0);
  }
  CHECK(caught);
}

TEST_CASE("full pipeline smoke: W8A8 tracks the W16A16 floor") {
  ToyTransformerConfig cfg = test_config();
  QuantBits w8a8;
  w8a8.weight_bits = 8;
  w8a8.act_bits = 8;
  QuantBits w16a16;
  w16a16.weight_bits = 16;
  w16a16.act_bits = 16;

  OptimConfig optim;
  optim.steps = 16;
  optim.warmup_local_loss_steps = 8;

  Model m8 = build_model(cfg, w8a8, 20);
  Model m16 = build_model(cfg, w16a16, 20);
  TokenSet calib = synth_tokens(mix_seed(20, 22), 8, cfg.seq_len, cfg.vocab_size);
  TokenSet eval_tokens = synth_tokens(mix_seed(20, 23), 4, cfg.seq_len, cfg.vocab_size);

  CalibrationResult r8 = run_full_calibration(m8, calib, eval_tokens, optim, 0.1);
  CalibrationResult r16 = run_full_calibration(m16, calib, eval_tokens, optim, 0.1);
  // Both configs share the same fixed-precision stage-two floor; W8A8 adds
  // bounded extra error on the varied sites.
  CHECK(r8.eval.output_mse <= 10.0 * r16.eval.output_mse);
  CHECK(r16.eval.output_mse > 0.0);
}
