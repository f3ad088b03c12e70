#pragma once

#include <map>

#include "staticquant/model.hpp"
#include "staticquant/sensitivity.hpp"

namespace sq {

using TokenSet = std::vector<std::vector<std::int32_t>>;

/// Seeded synthetic token sequences.
TokenSet synth_tokens(std::uint64_t seed, std::size_t num_sequences, std::size_t seq_len,
                      std::size_t vocab_size);

/// Gradient-optimization settings. The schedule is cosine decay to zero.
struct OptimConfig {
  std::size_t steps = 512;
  std::size_t warmup_local_loss_steps = 128;
  float lr_rotation = 0.1f;
  float lr_quant = 0.01f;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
};

/// Initialization-policy overrides used by ablation runs.
enum class InitOverride {
  none,               // rotation-and-bit-width-aware policy
  max_min_low_bit,    // force max-min on rotated sites below 8 bits
  max_min_everywhere  // force max-min on every stage-one site
};

/// Ablation switches; defaults correspond to the full method.
struct PipelineOptions {
  InitOverride init_override = InitOverride::none;
  bool enforce_min_bits = true;  // apply the policy's bit floor
  bool learn_quant = true;
  bool learn_rotation = true;
};

/// Calibration statistics per site, gathered once and reused by the
/// initialization step, the sensitivity probe and plan application.
struct CalibrationWorkspace {
  std::map<int, RunningStats> act_stats;                     // per-tensor sites
  std::map<int, std::vector<RunningStats>> weight_stats;     // per-channel sites
  std::map<int, Tensor> down_inputs;                         // captured probe tensors
};

/// Runs the calibration set through the fp model, collects statistics and
/// initializes every stage-one site per the rotation-and-bit-width-aware
/// policy (or the forced override).
CalibrationWorkspace initialize_stage_one_sites(Model& model, const TokenSet& calib,
                                                const PipelineOptions& options = {});

/// Eq.-4 style ratios for the down_proj input sites, probed with max-min
/// initialization at `probe_bits`.
std::vector<SensitivityReport> probe_down_proj_sensitivity(
    const Model& model, const CalibrationWorkspace& ws, int probe_bits = 8);

/// Applies the plan's bit assignments to the down_proj input sites and
/// re-initializes them from the cached statistics.
void apply_precision_plan(Model& model, const PrecisionPlan& plan,
                          const CalibrationWorkspace& ws);

struct StepLoss {
  double total = 0.0;
  double teacher_mse = 0.0;
  double local = 0.0;
};

struct LossTrace {
  std::vector<StepLoss> entries;  // entry k = loss with the parameters after k updates

  double initial_mse() const { return entries.front().teacher_mse; }
  double final_mse() const { return entries.back().teacher_mse; }
};

/// Stage One: joint SGD over rotation parameters and stage-one quantizer
/// scales against a frozen fp32 teacher. Stage-two sites stay in full
/// precision throughout. Throws AbortedRunError on a non-finite loss.
LossTrace stage_one_optimize(Model& model, const TokenSet& calib, const OptimConfig& optim,
                             const PipelineOptions& options = {});

/// Stage Two: static calibration of the remaining sites (linear outputs,
/// key/value tensors and silu outputs) on the stage-one-quantized model.
void stage_two_calibrate(Model& model, const TokenSet& calib);

struct SiteError {
  int site_index = 0;
  std::string name;
  double rel_error = 0.0;  // sum ||fq(x)-x||^2 / sum ||x||^2 over the eval set
  ErrorDecomposition decomposition;
};

struct EvalReport {
  double output_mse = 0.0;
  std::vector<SiteError> sites;
};

/// Output MSE of the fully quantized model against the fp teacher (same
/// rotation state, quantizers off), plus per-site error diagnostics.
EvalReport evaluate(const Model& model, const TokenSet& eval_tokens);

struct CalibrationResult {
  LossTrace trace;
  std::vector<SensitivityReport> reports;
  PrecisionPlan plan;
  EvalReport eval;
};

/// Full pipeline: init -> sensitivity plan -> stage one -> stage two -> eval.
CalibrationResult run_full_calibration(Model& model, const TokenSet& calib,
                                       const TokenSet& eval_tokens,
                                       const OptimConfig& optim, double promote_fraction,
                                       const PipelineOptions& options = {});

}  // namespace sq
