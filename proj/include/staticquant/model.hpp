#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "staticquant/init.hpp"
#include "staticquant/quantizer.hpp"
#include "staticquant/rotation.hpp"
#include "staticquant/tape.hpp"

namespace sq {

/// Desk-scale transformer block stack used to exercise the quantization
/// pipeline end to end.
struct ToyTransformerConfig {
  std::size_t hidden_dim = 64;
  std::size_t num_heads = 4;
  std::size_t mlp_dim = 256;
  std::size_t num_layers = 2;
  std::size_t vocab_size = 256;
  std::size_t seq_len = 32;
  bool use_rotation = true;
  // One mlp channel is amplified to reproduce the heavy-tailed down_proj
  // input profile; -1 disables the injection.
  int outlier_layer = 0;
  std::size_t outlier_channel = 7;
  float outlier_gain = 30.0f;

  std::size_t head_dim() const { return hidden_dim / num_heads; }
  void validate() const;  // throws ConfigError
};

/// Per-role bit-width assignment. Weight/activation bits are the tunable
/// knobs; the remaining roles stay at their fixed defaults.
struct QuantBits {
  int weight_bits = 4;
  int act_bits = 8;
  int kv_bits = 8;
  int output_act_bits = 8;
  int gate_output_bits = 16;  // gate outputs stay high-precision
  int silu_bits = 16;

  void validate() const;
};

enum class ModelOp {
  q_proj,
  k_proj,
  v_proj,
  o_proj,
  up_proj,
  gate_proj,
  down_proj,
  lm_head,
  silu
};

enum class SiteRole {
  linear_input_act,
  linear_weight,
  linear_output_act,
  key,
  value,
  silu_output
};

enum class Stage { one, two, excluded };

const char* to_string(ModelOp op);
const char* to_string(SiteRole role);
const char* to_string(Stage stage);

/// One quantizer insertion point.
struct QuantSite {
  int index = 0;
  std::size_t layer = 0;
  ModelOp op = ModelOp::q_proj;
  SiteRole role = SiteRole::linear_input_act;
  QuantSpec spec;
  QuantParams params;
  Stage stage = Stage::two;
  InitMethod init_method = InitMethod::max_min;
  bool initialized = false;

  std::string name() const;
};

struct LayerWeights {
  Tensor wq, wk, wv, wo;       // [hidden, hidden]
  Tensor w_up, w_gate;         // [mlp, hidden]
  Tensor w_down;               // [hidden, mlp]
};

struct Model {
  ToyTransformerConfig config;
  QuantBits bits;
  std::uint64_t seed = 0;

  Tensor embedding;  // [vocab, hidden]
  Tensor lm_head;    // [vocab, hidden]
  std::vector<LayerWeights> layers;

  // Rotation state: fixed randomized-Hadamard bases composed with learnable
  // Cayley perturbations (identity at zero parameters).
  std::uint64_t r1_seed = 0, r2_seed = 0;
  Tensor h1, h2;
  Tensor theta1, theta2;

  std::vector<QuantSite> sites;

  QuantSite& site_at(std::size_t layer, ModelOp op, SiteRole role);
  const QuantSite& site_at(std::size_t layer, ModelOp op, SiteRole role) const;
  int find_site(std::size_t layer, ModelOp op, SiteRole role) const;  // -1 if absent
  std::vector<int> sites_with(SiteRole role, Stage stage) const;

  /// Current effective rotations (cayley(theta) * H).
  Tensor rotation_r1() const;
  Tensor rotation_r2() const;
};

Model build_model(const ToyTransformerConfig& config, const QuantBits& bits,
                  std::uint64_t seed);

struct ForwardFlags {
  bool quant_stage_one = false;
  bool quant_stage_two = false;
};

/// Called with each site's pre-quantization tensor as the forward runs.
using SiteObserver = std::function<void(const QuantSite&, const Tensor&)>;

/// Per-tape bindings: parameter leaves plus the fused (and, when enabled,
/// fake-quantized) weight nodes shared by every sequence on the tape.
struct TapeBindings {
  std::optional<ad::Var> theta1, theta2;
  std::optional<ad::Var> r1, r2;
  struct LayerVars {
    ad::Var wq, wk, wv, wo, w_up, w_gate, w_down;
  };
  std::vector<LayerVars> layers;
  ad::Var lm_head_w;
  // Scale leaf per site index (present when the site quantizes on this tape
  // or exposes a learnable parameter).
  std::vector<std::optional<ad::Var>> site_scale;
  // Stage-one activation reconstruction terms, populated during forward when
  // requested (sum of squared fq error per site application).
  std::vector<ad::Var> local_loss_terms;
  bool collect_local_loss = false;
};

struct BindOptions {
  bool learn_rotation = false;
  bool learn_quant = false;
  bool collect_local_loss = false;
};

TapeBindings bind_model(ad::Tape& tape, const Model& model, const ForwardFlags& flags,
                        const BindOptions& options, const SiteObserver& observer = {});

/// Runs one token sequence through the block stack; returns the logits node.
ad::Var forward_sequence(ad::Tape& tape, const Model& model, TapeBindings& binds,
                         const std::vector<std::int32_t>& tokens,
                         const ForwardFlags& flags, const SiteObserver& observer = {});

/// Convenience non-training forward: fresh tape, returns logits values.
Tensor forward_logits(const Model& model, const std::vector<std::int32_t>& tokens,
                      const ForwardFlags& flags, const SiteObserver& observer = {});

}  // namespace sq
