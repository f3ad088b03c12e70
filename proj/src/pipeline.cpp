#include "staticquant/pipeline.hpp"

#include <cmath>

namespace sq {

TokenSet synth_tokens(std::uint64_t seed, std::size_t num_sequences, std::size_t seq_len,
                      std::size_t vocab_size) {
  Rng rng(mix_seed(seed, 7));
  TokenSet set(num_sequences);
  for (auto& seq : set) {
    seq.resize(seq_len);
    for (auto& tok : seq) {
      tok = static_cast<std::int32_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(vocab_size) - 1));
    }
  }
  return set;
}

namespace {

bool is_stage_one_act(const QuantSite& s) {
  return s.stage == Stage::one && s.role == SiteRole::linear_input_act;
}

bool is_stage_one_weight(const QuantSite& s) {
  return s.stage == Stage::one && s.role == SiteRole::linear_weight;
}

void init_one_site(QuantSite& site, const CalibrationWorkspace& ws,
                   const PipelineOptions& options) {
  InitPolicy policy = select_policy(site.spec.tensor_class, site.spec.bits);
  const bool forced =
      options.init_override == InitOverride::max_min_everywhere ||
      (options.init_override == InitOverride::max_min_low_bit &&
       site.spec.tensor_class == TensorClass::rotated && site.spec.bits < 8);
  if (forced) policy.method = InitMethod::max_min;
  if (options.enforce_min_bits) site.spec.bits = std::max(site.spec.bits, policy.min_bits);
  site.init_method = policy.method;
  if (site.spec.granularity == Granularity::per_channel) {
    site.params = init_params_per_channel(policy.method, ws.weight_stats.at(site.index),
                                          site.spec);
  } else {
    site.params = init_params(policy.method, ws.act_stats.at(site.index), site.spec);
  }
  site.params.learnable = true;
  site.initialized = true;
}

}  // namespace

CalibrationWorkspace initialize_stage_one_sites(Model& model, const TokenSet& calib,
                                                const PipelineOptions& options) {
  if (calib.empty()) {
    throw CalibrationError("initialize_stage_one_sites: empty calibration set");
  }
  CalibrationWorkspace ws;

  SiteObserver observer = [&](const QuantSite& site, const Tensor& value) {
    if (is_stage_one_weight(site)) {
      if (ws.weight_stats.find(site.index) == ws.weight_stats.end()) {
        ws.weight_stats[site.index] =
            collect_stats_per_channel(value, site.spec.channel_axis);
      }
      return;
    }
    if (!is_stage_one_act(site)) return;
    RunningStats& stats = ws.act_stats[site.index];
    for (std::size_t i = 0; i < value.size(); ++i) stats.update(value[i]);
    if (site.op == ModelOp::down_proj) {
      Tensor& cache = ws.down_inputs[site.index];
      std::vector<float> merged = cache.size() == 0 ? std::vector<float>{} : cache.vec();
      merged.insert(merged.end(), value.vec().begin(), value.vec().end());
      const std::size_t n = merged.size();
      cache = Tensor({n}, std::move(merged));
    }
  };

  const ForwardFlags fp_flags{};  // quantizers off
  ad::Tape tape;
  TapeBindings binds = bind_model(tape, model, fp_flags, BindOptions{}, observer);
  for (const auto& tokens : calib) {
    (void)forward_sequence(tape, model, binds, tokens, fp_flags, observer);
  }

  for (QuantSite& site : model.sites) {
    if (is_stage_one_act(site) || is_stage_one_weight(site)) {
      init_one_site(site, ws, options);
    }
  }
  return ws;
}

std::vector<SensitivityReport> probe_down_proj_sensitivity(
    const Model& model, const CalibrationWorkspace& ws, int probe_bits) {
  std::vector<SensitivityReport> reports;
  for (const QuantSite& site : model.sites) {
    if (!is_stage_one_act(site) || site.op != ModelOp::down_proj) continue;
    const auto stats_it = ws.act_stats.find(site.index);
    const auto data_it = ws.down_inputs.find(site.index);
    if (stats_it == ws.act_stats.end() || data_it == ws.down_inputs.end()) {
      throw CalibrationError("sensitivity probe: site " + site.name() +
                             " has no calibration data");
    }
    QuantSpec probe_spec = site.spec;
    probe_spec.bits = probe_bits;
    probe_spec.granularity = Granularity::per_tensor;
    const QuantParams probe_params = max_min_init(stats_it->second, probe_spec);
    SensitivityReport report;
    report.site_index = site.index;
    report.site_name = site.name();
    report.probe_bits = probe_bits;
    report.ratio = sensitivity_ratio(data_it->second, probe_params, probe_spec);
    reports.push_back(std::move(report));
  }
  return reports;
}

void apply_precision_plan(Model& model, const PrecisionPlan& plan,
                          const CalibrationWorkspace& ws) {
  for (std::size_t i = 0; i < plan.site_indices.size(); ++i) {
    QuantSite& site = model.sites.at(static_cast<std::size_t>(plan.site_indices[i]));
    site.spec.bits = plan.bits[i];
    site.params = init_params(site.init_method, ws.act_stats.at(site.index), site.spec);
    site.params.learnable = true;
    site.initialized = true;
  }
}

namespace {

// Element count sharing one quantization parameter, feeding the LSQ-style
// gradient scaling factor: per-channel weights count one output row,
// per-tensor activations count the feature width.
std::size_t elements_per_param(const Model& model, const QuantSite& site) {
  // down_proj consumes (and its weight rows span) the mlp width; every other
  // stage-one site works at the hidden width.
  return site.op == ModelOp::down_proj ? model.config.mlp_dim : model.config.hidden_dim;
}

struct ParamRef {
  enum class Kind { rotation1, rotation2, quant_scale } kind;
  int site_index = -1;
  double grad_factor = 1.0;  // gradient scaling for quant params
};

}  // namespace

LossTrace stage_one_optimize(Model& model, const TokenSet& calib, const OptimConfig& optim,
                             const PipelineOptions& options) {
  if (calib.empty()) throw CalibrationError("stage_one_optimize: empty calibration set");
  const std::size_t warmup = std::min(optim.warmup_local_loss_steps, optim.steps);
  const std::size_t batch_size = std::max<std::size_t>(1, optim.batch_size);
  const std::size_t num_batches = (calib.size() + batch_size - 1) / batch_size;

  // Frozen teacher: fp forward (quantizers off) at the entry rotation state.
  std::vector<Tensor> teacher;
  teacher.reserve(calib.size());
  {
    const ForwardFlags fp_flags{};
    ad::Tape tape;
    TapeBindings binds = bind_model(tape, model, fp_flags, BindOptions{});
    for (const auto& tokens : calib) {
      teacher.push_back(forward_sequence(tape, model, binds, tokens, fp_flags).value());
    }
  }

  // Checksum stage-two params to assert stage separation.
  auto stage_two_checksum = [&]() {
    double sum = 0.0;
    for (const QuantSite& s : model.sites) {
      if (s.stage != Stage::two) continue;
      for (float v : s.params.scale) sum += v;
      for (int z : s.params.zero_point) sum += z;
    }
    return sum;
  };
  const double checksum_before = stage_two_checksum();

  const ForwardFlags train_flags{/*quant_stage_one=*/true, /*quant_stage_two=*/false};
  LossTrace trace;

  auto run_step = [&](std::size_t step, bool update) {
    BindOptions bind_opts;
    bind_opts.learn_rotation = options.learn_rotation && model.config.use_rotation;
    bind_opts.learn_quant = options.learn_quant;
    bind_opts.collect_local_loss = step < warmup;

    ad::Tape tape;
    TapeBindings binds = bind_model(tape, model, train_flags, bind_opts);

    const std::size_t batch = num_batches == 0 ? 0 : step % num_batches;
    const std::size_t begin = batch * batch_size;
    const std::size_t end = std::min(begin + batch_size, calib.size());
    const float inv_batch = 1.0f / static_cast<float>(end - begin);

    std::optional<ad::Var> mse_total;
    for (std::size_t i = begin; i < end; ++i) {
      ad::Var logits = forward_sequence(tape, model, binds, calib[i], train_flags);
      ad::Var target = tape.leaf(teacher[i], false);
      ad::Var seq_mse = tape.mse(logits, target);
      mse_total = mse_total ? tape.add(*mse_total, seq_mse) : seq_mse;
    }
    ad::Var mse = tape.scale(*mse_total, inv_batch);

    std::optional<ad::Var> local_total;
    for (ad::Var term : binds.local_loss_terms) {
      local_total = local_total ? tape.add(*local_total, term) : term;
    }
    ad::Var loss = mse;
    if (local_total) loss = tape.add(mse, tape.scale(*local_total, inv_batch));

    StepLoss entry;
    entry.teacher_mse = mse.value()[0];
    entry.local = local_total ? local_total->value()[0] * inv_batch : 0.0;
    entry.total = loss.value()[0];
    if (!std::isfinite(entry.total)) {
      throw AbortedRunError("stage one: non-finite loss at step " + std::to_string(step),
                            step);
    }
    trace.entries.push_back(entry);
    if (!update) return;

    tape.backward(loss);

    const double lr_factor =
        0.5 * (1.0 + std::cos(3.14159265358979323846 * static_cast<double>(step) /
                              static_cast<double>(optim.steps)));

    if (bind_opts.learn_rotation) {
      const float lr = optim.lr_rotation * static_cast<float>(lr_factor);
      const Tensor& g1 = tape.grad(binds.theta1->id);
      for (std::size_t i = 0; i < model.theta1.size(); ++i) {
        model.theta1[i] -= lr * g1[i];
      }
      const Tensor& g2 = tape.grad(binds.theta2->id);
      for (std::size_t i = 0; i < model.theta2.size(); ++i) {
        model.theta2[i] -= lr * g2[i];
      }
    }
    if (bind_opts.learn_quant) {
      const float lr = optim.lr_quant * static_cast<float>(lr_factor);
      for (QuantSite& site : model.sites) {
        if (site.stage != Stage::one || !site.initialized || !site.params.learnable) {
          continue;
        }
        const auto& leaf = binds.site_scale[static_cast<std::size_t>(site.index)];
        if (!leaf) continue;
        const Tensor& g = tape.grad(leaf->id);
        const double gsf =
            gradient_scale_factor(elements_per_param(model, site), site.spec.q_max());
        for (std::size_t c = 0; c < site.params.scale.size(); ++c) {
          float s = site.params.scale[c] -
                    lr * static_cast<float>(gsf) * g[c];
          site.params.scale[c] = std::max(s, kScaleFloor);
        }
      }
    }
  };

  for (std::size_t step = 0; step < optim.steps; ++step) run_step(step, true);
  run_step(optim.steps, false);  // final loss with the updated parameters

  if (stage_two_checksum() != checksum_before) {
    throw InternalError("stage one mutated stage-two parameters");
  }
  return trace;
}

void stage_two_calibrate(Model& model, const TokenSet& calib) {
  if (calib.empty()) throw CalibrationError("stage_two_calibrate: empty calibration set");

  std::map<int, RunningStats> stats;
  SiteObserver observer = [&](const QuantSite& site, const Tensor& value) {
    if (site.stage != Stage::two) return;
    RunningStats& s = stats[site.index];
    for (std::size_t i = 0; i < value.size(); ++i) s.update(value[i]);
  };

  const ForwardFlags flags{/*quant_stage_one=*/true, /*quant_stage_two=*/false};
  ad::Tape tape;
  TapeBindings binds = bind_model(tape, model, flags, BindOptions{}, observer);
  for (const auto& tokens : calib) {
    (void)forward_sequence(tape, model, binds, tokens, flags, observer);
  }

  for (QuantSite& site : model.sites) {
    if (site.stage != Stage::two) continue;
    const auto it = stats.find(site.index);
    if (it == stats.end() || it->second.empty()) {
      throw CalibrationError("stage two: no statistics for site " + site.name());
    }
    site.init_method = InitMethod::max_min;
    site.params = max_min_init(it->second, site.spec);
    site.params.learnable = false;
    site.initialized = true;
  }
}

EvalReport evaluate(const Model& model, const TokenSet& eval_tokens) {
  if (eval_tokens.empty()) throw CalibrationError("evaluate: empty evaluation set");

  struct Acc {
    double err_sq = 0.0;
    double ref_sq = 0.0;
    ErrorDecomposition decomp;
  };
  std::map<int, Acc> site_acc;

  const ForwardFlags q_flags{/*quant_stage_one=*/true, /*quant_stage_two=*/true};
  SiteObserver observer = [&](const QuantSite& site, const Tensor& value) {
    if (!site.initialized || site.stage == Stage::excluded) return;
    if ((site.stage == Stage::one && !q_flags.quant_stage_one) ||
        (site.stage == Stage::two && !q_flags.quant_stage_two)) {
      return;
    }
    Acc& acc = site_acc[site.index];
    const Tensor fq = fake_quantize(value, site.params, site.spec);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double d = static_cast<double>(fq[i]) - static_cast<double>(value[i]);
      acc.err_sq += d * d;
      acc.ref_sq += static_cast<double>(value[i]) * static_cast<double>(value[i]);
    }
    const ErrorDecomposition d = error_decomposition(value, site.params, site.spec);
    acc.decomp.e_rounding += d.e_rounding;
    acc.decomp.e_clipping += d.e_clipping;
    acc.decomp.e_total = acc.decomp.e_rounding + acc.decomp.e_clipping;
  };

  double mse_sum = 0.0;
  std::size_t mse_count = 0;
  {
    const ForwardFlags fp_flags{};
    ad::Tape fp_tape;
    TapeBindings fp_binds = bind_model(fp_tape, model, fp_flags, BindOptions{});
    ad::Tape q_tape;
    TapeBindings q_binds = bind_model(q_tape, model, q_flags, BindOptions{}, observer);
    for (const auto& tokens : eval_tokens) {
      const Tensor teacher =
          forward_sequence(fp_tape, model, fp_binds, tokens, fp_flags).value();
      const Tensor student =
          forward_sequence(q_tape, model, q_binds, tokens, q_flags, observer).value();
      for (std::size_t i = 0; i < teacher.size(); ++i) {
        const double d = static_cast<double>(student[i]) - static_cast<double>(teacher[i]);
        mse_sum += d * d;
      }
      mse_count += teacher.size();
    }
  }

  EvalReport report;
  report.output_mse = mse_sum / static_cast<double>(mse_count);
  for (const auto& [index, acc] : site_acc) {
    SiteError e;
    e.site_index = index;
    e.name = model.sites[static_cast<std::size_t>(index)].name();
    e.rel_error = acc.ref_sq == 0.0 ? 0.0 : acc.err_sq / acc.ref_sq;
    e.decomposition = acc.decomp;
    report.sites.push_back(std::move(e));
  }
  return report;
}

CalibrationResult run_full_calibration(Model& model, const TokenSet& calib,
                                       const TokenSet& eval_tokens,
                                       const OptimConfig& optim, double promote_fraction,
                                       const PipelineOptions& options) {
  CalibrationResult result;
  CalibrationWorkspace ws = initialize_stage_one_sites(model, calib, options);
  result.reports = probe_down_proj_sensitivity(model, ws);
  result.plan = plan_mixed_precision(result.reports, promote_fraction);
  apply_precision_plan(model, result.plan, ws);
  result.trace = stage_one_optimize(model, calib, optim, options);
  stage_two_calibrate(model, calib);
  result.eval = evaluate(model, eval_tokens);
  return result;
}

}  // namespace sq
