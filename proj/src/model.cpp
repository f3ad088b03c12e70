#include "staticquant/model.hpp"

#include <cmath>

namespace sq {

void ToyTransformerConfig::validate() const {
  if (hidden_dim == 0 || num_heads == 0 || mlp_dim == 0 || num_layers == 0 ||
      vocab_size == 0 || seq_len == 0) {
    throw ConfigError("model config: all dimensions must be positive");
  }
  if (hidden_dim % num_heads != 0) {
    throw ConfigError("model config: hidden_dim must be divisible by num_heads");
  }
  if (!is_power_of_two(hidden_dim)) {
    throw ConfigError("model config: hidden_dim must be a power of two");
  }
  if (!is_power_of_two(head_dim())) {
    throw ConfigError("model config: head_dim must be a power of two");
  }
  if (outlier_layer >= 0 && outlier_channel >= mlp_dim) {
    throw ConfigError("model config: outlier_channel out of range");
  }
}

void QuantBits::validate() const {
  auto check = [](int bits, const char* field) {
    if (bits != 4 && bits != 8 && bits != 16) {
      throw ConfigError(std::string("model config: ") + field + " must be 4, 8 or 16");
    }
  };
  check(weight_bits, "weight_bits");
  check(act_bits, "act_bits");
  check(kv_bits, "kv_bits");
  check(output_act_bits, "output_act_bits");
  check(gate_output_bits, "gate_output_bits");
  check(silu_bits, "silu_bits");
}

const char* to_string(ModelOp op) {
  switch (op) {
    case ModelOp::q_proj: return "q_proj";
    case ModelOp::k_proj: return "k_proj";
    case ModelOp::v_proj: return "v_proj";
    case ModelOp::o_proj: return "o_proj";
    case ModelOp::up_proj: return "up_proj";
    case ModelOp::gate_proj: return "gate_proj";
    case ModelOp::down_proj: return "down_proj";
    case ModelOp::lm_head: return "lm_head";
    case ModelOp::silu: return "silu";
  }
  return "?";
}

const char* to_string(SiteRole role) {
  switch (role) {
    case SiteRole::linear_input_act: return "linear_input_act";
    case SiteRole::linear_weight: return "linear_weight";
    case SiteRole::linear_output_act: return "linear_output_act";
    case SiteRole::key: return "key";
    case SiteRole::value: return "value";
    case SiteRole::silu_output: return "silu_output";
  }
  return "?";
}

const char* to_string(Stage stage) {
  switch (stage) {
    case Stage::one: return "one";
    case Stage::two: return "two";
    case Stage::excluded: return "excluded";
  }
  return "?";
}

std::string QuantSite::name() const {
  std::string n = "layer" + std::to_string(layer);
  if (op == ModelOp::lm_head) n = "final";
  n += ".";
  n += to_string(op);
  switch (role) {
    case SiteRole::linear_input_act: n += ".input_act"; break;
    case SiteRole::linear_weight: n += ".weight"; break;
    case SiteRole::linear_output_act: n += ".output_act"; break;
    case SiteRole::key: n += ".key"; break;
    case SiteRole::value: n += ".value"; break;
    case SiteRole::silu_output: n += ".output"; break;
  }
  return n;
}

QuantSite& Model::site_at(std::size_t layer, ModelOp op, SiteRole role) {
  const int idx = find_site(layer, op, role);
  if (idx < 0) throw InternalError("site_at: no such site");
  return sites[static_cast<std::size_t>(idx)];
}

const QuantSite& Model::site_at(std::size_t layer, ModelOp op, SiteRole role) const {
  const int idx = find_site(layer, op, role);
  if (idx < 0) throw InternalError("site_at: no such site");
  return sites[static_cast<std::size_t>(idx)];
}

int Model::find_site(std::size_t layer, ModelOp op, SiteRole role) const {
  for (const QuantSite& s : sites) {
    if (s.layer == layer && s.op == op && s.role == role) return s.index;
  }
  return -1;
}

std::vector<int> Model::sites_with(SiteRole role, Stage stage) const {
  std::vector<int> out;
  for (const QuantSite& s : sites) {
    if (s.role == role && s.stage == stage) out.push_back(s.index);
  }
  return out;
}

Tensor Model::rotation_r1() const {
  return matmul(cayley_rotation(theta1, config.hidden_dim).matrix, h1);
}

Tensor Model::rotation_r2() const {
  return matmul(cayley_rotation(theta2, config.head_dim()).matrix, h2);
}

namespace {

void add_site(Model& m, std::size_t layer, ModelOp op, SiteRole role, Stage stage,
              int bits, TensorClass cls, Granularity gran) {
  QuantSite s;
  s.index = static_cast<int>(m.sites.size());
  s.layer = layer;
  s.op = op;
  s.role = role;
  s.stage = stage;
  s.spec.bits = bits;
  s.spec.is_signed = true;
  s.spec.symmetric = true;
  s.spec.granularity = gran;
  s.spec.channel_axis = 0;
  s.spec.tensor_class = cls;
  m.sites.push_back(std::move(s));
}

}  // namespace

Model build_model(const ToyTransformerConfig& config, const QuantBits& bits,
                  std::uint64_t seed) {
  config.validate();
  bits.validate();

  Model m;
  m.config = config;
  m.bits = bits;
  m.seed = seed;

  const std::size_t hid = config.hidden_dim;
  const std::size_t mlp = config.mlp_dim;
  const float w_std = 1.0f / std::sqrt(static_cast<float>(hid));
  const float d_std = 1.0f / std::sqrt(static_cast<float>(mlp));

  Rng emb_rng(mix_seed(seed, 1));
  m.embedding = emb_rng.normal_tensor({config.vocab_size, hid});
  Rng head_rng(mix_seed(seed, 2));
  m.lm_head = head_rng.normal_tensor({config.vocab_size, hid}, w_std);

  for (std::size_t l = 0; l < config.num_layers; ++l) {
    Rng rng(mix_seed(seed, 100 + l));
    LayerWeights w;
    w.wq = rng.normal_tensor({hid, hid}, w_std);
    w.wk = rng.normal_tensor({hid, hid}, w_std);
    w.wv = rng.normal_tensor({hid, hid}, w_std);
    w.wo = rng.normal_tensor({hid, hid}, w_std);
    w.w_up = rng.normal_tensor({mlp, hid}, w_std);
    w.w_gate = rng.normal_tensor({mlp, hid}, w_std);
    w.w_down = rng.normal_tensor({hid, mlp}, d_std);
    if (config.outlier_layer == static_cast<int>(l)) {
      for (std::size_t j = 0; j < hid; ++j) {
        w.w_up.at(config.outlier_channel, j) *= config.outlier_gain;
      }
    }
    m.layers.push_back(std::move(w));
  }

  m.r1_seed = mix_seed(seed, 301);
  m.r2_seed = mix_seed(seed, 302);
  m.h1 = randomized_hadamard(hid, m.r1_seed, FusionSite::r1).matrix;
  m.h2 = randomized_hadamard(config.head_dim(), m.r2_seed, FusionSite::r2).matrix;
  m.theta1 = Tensor({cayley_param_count(hid)});
  m.theta2 = Tensor({cayley_param_count(config.head_dim())});

  const TensorClass stream_cls =
      config.use_rotation ? TensorClass::rotated : TensorClass::unrotated;

  const ModelOp linear_ops[] = {ModelOp::q_proj, ModelOp::k_proj, ModelOp::v_proj,
                                ModelOp::o_proj, ModelOp::up_proj, ModelOp::gate_proj,
                                ModelOp::down_proj};
  for (std::size_t l = 0; l < config.num_layers; ++l) {
    for (ModelOp op : linear_ops) {
      // down_proj consumes the raw mlp hidden (no online rotation).
      const TensorClass in_cls = op == ModelOp::down_proj ? TensorClass::unrotated
                                                          : stream_cls;
      add_site(m, l, op, SiteRole::linear_input_act, Stage::one, bits.act_bits, in_cls,
               Granularity::per_tensor);
      add_site(m, l, op, SiteRole::linear_weight, Stage::one, bits.weight_bits,
               stream_cls, Granularity::per_channel);
      if (op == ModelOp::k_proj) {
        add_site(m, l, op, SiteRole::key, Stage::two, bits.kv_bits,
                 TensorClass::unrotated, Granularity::per_tensor);
      } else if (op == ModelOp::v_proj) {
        add_site(m, l, op, SiteRole::value, Stage::two, bits.kv_bits,
                 TensorClass::unrotated, Granularity::per_tensor);
      } else {
        const int out_bits =
            op == ModelOp::gate_proj ? bits.gate_output_bits : bits.output_act_bits;
        add_site(m, l, op, SiteRole::linear_output_act, Stage::two, out_bits,
                 TensorClass::unrotated, Granularity::per_tensor);
      }
    }
    add_site(m, l, ModelOp::silu, SiteRole::silu_output, Stage::two, bits.silu_bits,
             TensorClass::unrotated, Granularity::per_tensor);
  }
  // lm_head stays in floating point.
  add_site(m, config.num_layers, ModelOp::lm_head, SiteRole::linear_input_act,
           Stage::excluded, 16, stream_cls, Granularity::per_tensor);
  add_site(m, config.num_layers, ModelOp::lm_head, SiteRole::linear_weight,
           Stage::excluded, 16, stream_cls, Granularity::per_channel);
  add_site(m, config.num_layers, ModelOp::lm_head, SiteRole::linear_output_act,
           Stage::excluded, 16, TensorClass::unrotated, Granularity::per_tensor);

  return m;
}

namespace {

bool site_quantizes(const QuantSite& site, const ForwardFlags& flags) {
  if (!site.initialized) return false;
  if (site.stage == Stage::one) return flags.quant_stage_one;
  if (site.stage == Stage::two) return flags.quant_stage_two;
  return false;
}

// Applies one site to a tape value: notifies the observer with the
// pre-quantization tensor and inserts a fake-quantize node when enabled.
ad::Var apply_site(ad::Tape& tape, const Model& model, TapeBindings& binds,
                   const QuantSite& site, ad::Var x, const ForwardFlags& flags,
                   const SiteObserver& observer) {
  if (observer) observer(site, x.value());
  if (!site_quantizes(site, flags)) return x;
  ad::Var scale = *binds.site_scale[static_cast<std::size_t>(site.index)];
  ad::Var fq = fake_quantize_node(tape, x, scale, site.params.zero_point, site.spec);
  if (binds.collect_local_loss && site.stage == Stage::one &&
      site.role == SiteRole::linear_input_act) {
    // Per-element mean keeps the reconstruction term commensurate with the
    // teacher-MSE term; the raw sum grows with tensor size and its clipped
    // branch carries a q_max factor that destabilizes 16-bit sites.
    const float inv_n = 1.0f / static_cast<float>(x.value().size());
    binds.local_loss_terms.push_back(tape.scale(tape.sum_squares(tape.sub(fq, x)), inv_n));
  }
  (void)model;
  return fq;
}

ad::Var fuse_and_quantize_weight(ad::Tape& tape, const Model& model, TapeBindings& binds,
                                 std::size_t layer, ModelOp op, const Tensor& raw,
                                 const ForwardFlags& flags, const SiteObserver& observer) {
  ad::Var w = tape.leaf(raw, false);
  if (model.config.use_rotation) {
    const std::size_t heads = model.config.num_heads;
    switch (op) {
      case ModelOp::q_proj:
      case ModelOp::k_proj:
      case ModelOp::up_proj:
      case ModelOp::gate_proj:
      case ModelOp::lm_head:
        w = tape.matmul(w, *binds.r1);  // consumes the rotated stream
        break;
      case ModelOp::v_proj:
        // input side R1, per-head output side R2
        w = tape.matmul(tape.transpose(tape.block_diag(*binds.r2, heads)),
                        tape.matmul(w, *binds.r1));
        break;
      case ModelOp::o_proj:
        // per-head input side R2, output side R1 (emits into the stream)
        w = tape.matmul(tape.matmul(tape.transpose(*binds.r1), w),
                        tape.block_diag(*binds.r2, heads));
        break;
      case ModelOp::down_proj:
        w = tape.matmul(tape.transpose(*binds.r1), w);  // output side only
        break;
      case ModelOp::silu:
        throw InternalError("silu has no weight");
    }
  }
  const int idx = model.find_site(layer, op, SiteRole::linear_weight);
  if (idx >= 0) {
    return apply_site(tape, model, binds, model.sites[static_cast<std::size_t>(idx)], w,
                      flags, observer);
  }
  return w;
}

}  // namespace

TapeBindings bind_model(ad::Tape& tape, const Model& model, const ForwardFlags& flags,
                        const BindOptions& options, const SiteObserver& observer) {
  TapeBindings binds;
  binds.collect_local_loss = options.collect_local_loss;
  binds.site_scale.resize(model.sites.size());

  for (const QuantSite& site : model.sites) {
    if (site.initialized) {
      Tensor scales({site.params.scale.size()}, site.params.scale);
      const bool learn = options.learn_quant && site.params.learnable;
      binds.site_scale[static_cast<std::size_t>(site.index)] =
          tape.leaf(std::move(scales), learn);
    }
  }

  if (model.config.use_rotation) {
    binds.theta1 = tape.leaf(model.theta1, options.learn_rotation);
    binds.theta2 = tape.leaf(model.theta2, options.learn_rotation);
    ad::Var h1 = tape.leaf(model.h1, false);
    ad::Var h2 = tape.leaf(model.h2, false);
    binds.r1 = tape.matmul(cayley_node(tape, *binds.theta1, model.config.hidden_dim), h1);
    binds.r2 = tape.matmul(cayley_node(tape, *binds.theta2, model.config.head_dim()), h2);
  }

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const LayerWeights& w = model.layers[l];
    TapeBindings::LayerVars vars{
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::q_proj, w.wq, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::k_proj, w.wk, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::v_proj, w.wv, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::o_proj, w.wo, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::up_proj, w.w_up, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::gate_proj, w.w_gate, flags, observer),
        fuse_and_quantize_weight(tape, model, binds, l, ModelOp::down_proj, w.w_down, flags, observer)};
    binds.layers.push_back(vars);
  }
  binds.lm_head_w = fuse_and_quantize_weight(tape, model, binds, model.config.num_layers,
                                             ModelOp::lm_head, model.lm_head, flags,
                                             observer);
  return binds;
}

namespace {

Tensor causal_mask(std::size_t seq) {
  Tensor mask({seq, seq});
  for (std::size_t i = 0; i < seq; ++i) {
    for (std::size_t j = i + 1; j < seq; ++j) mask.at(i, j) = -1e9f;
  }
  return mask;
}

}  // namespace

ad::Var forward_sequence(ad::Tape& tape, const Model& model, TapeBindings& binds,
                         const std::vector<std::int32_t>& tokens,
                         const ForwardFlags& flags, const SiteObserver& observer) {
  const std::size_t seq = tokens.size();
  const std::size_t hid = model.config.hidden_dim;
  const std::size_t heads = model.config.num_heads;
  const std::size_t hd = model.config.head_dim();

  Tensor embedded({seq, hid});
  for (std::size_t t = 0; t < seq; ++t) {
    const auto tok = static_cast<std::size_t>(tokens[t]);
    if (tok >= model.config.vocab_size) {
      throw ArgumentError("forward: token id out of vocabulary range");
    }
    for (std::size_t j = 0; j < hid; ++j) embedded.at(t, j) = model.embedding.at(tok, j);
  }
  ad::Var x = tape.leaf(std::move(embedded), false);
  if (model.config.use_rotation) x = tape.matmul(x, *binds.r1);

  const Tensor mask = causal_mask(seq);
  const float inv_sqrt_d = 1.0f / std::sqrt(static_cast<float>(hd));

  auto site = [&](std::size_t layer, ModelOp op, SiteRole role) -> const QuantSite& {
    return model.site_at(layer, op, role);
  };

  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    const TapeBindings::LayerVars& w = binds.layers[l];

    // attention
    ad::Var u = tape.rmsnorm_rows(x);
    ad::Var q_in = apply_site(tape, model, binds, site(l, ModelOp::q_proj, SiteRole::linear_input_act), u, flags, observer);
    ad::Var k_in = apply_site(tape, model, binds, site(l, ModelOp::k_proj, SiteRole::linear_input_act), u, flags, observer);
    ad::Var v_in = apply_site(tape, model, binds, site(l, ModelOp::v_proj, SiteRole::linear_input_act), u, flags, observer);
    ad::Var q = tape.matmul(q_in, tape.transpose(w.wq));
    ad::Var k = tape.matmul(k_in, tape.transpose(w.wk));
    ad::Var v = tape.matmul(v_in, tape.transpose(w.wv));
    q = apply_site(tape, model, binds, site(l, ModelOp::q_proj, SiteRole::linear_output_act), q, flags, observer);
    k = apply_site(tape, model, binds, site(l, ModelOp::k_proj, SiteRole::key), k, flags, observer);
    v = apply_site(tape, model, binds, site(l, ModelOp::v_proj, SiteRole::value), v, flags, observer);

    std::vector<ad::Var> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t h = 0; h < heads; ++h) {
      ad::Var qh = tape.slice_cols(q, h * hd, hd);
      ad::Var kh = tape.slice_cols(k, h * hd, hd);
      ad::Var vh = tape.slice_cols(v, h * hd, hd);
      ad::Var scores = tape.scale(tape.matmul(qh, tape.transpose(kh)), inv_sqrt_d);
      scores = tape.add_constant(scores, mask);
      ad::Var probs = tape.softmax_rows(scores);
      head_outputs.push_back(tape.matmul(probs, vh));
    }
    ad::Var attn = tape.concat_cols(head_outputs);
    ad::Var o_in = apply_site(tape, model, binds, site(l, ModelOp::o_proj, SiteRole::linear_input_act), attn, flags, observer);
    ad::Var o = tape.matmul(o_in, tape.transpose(w.wo));
    o = apply_site(tape, model, binds, site(l, ModelOp::o_proj, SiteRole::linear_output_act), o, flags, observer);
    x = tape.add(x, o);

    // mlp
    ad::Var m = tape.rmsnorm_rows(x);
    ad::Var gate_in = apply_site(tape, model, binds, site(l, ModelOp::gate_proj, SiteRole::linear_input_act), m, flags, observer);
    ad::Var up_in = apply_site(tape, model, binds, site(l, ModelOp::up_proj, SiteRole::linear_input_act), m, flags, observer);
    ad::Var gate = tape.matmul(gate_in, tape.transpose(w.w_gate));
    gate = apply_site(tape, model, binds, site(l, ModelOp::gate_proj, SiteRole::linear_output_act), gate, flags, observer);
    ad::Var up = tape.matmul(up_in, tape.transpose(w.w_up));
    up = apply_site(tape, model, binds, site(l, ModelOp::up_proj, SiteRole::linear_output_act), up, flags, observer);
    ad::Var act = tape.silu(gate);
    act = apply_site(tape, model, binds, site(l, ModelOp::silu, SiteRole::silu_output), act, flags, observer);
    ad::Var mix = tape.mul(act, up);
    ad::Var down_in = apply_site(tape, model, binds, site(l, ModelOp::down_proj, SiteRole::linear_input_act), mix, flags, observer);
    ad::Var down = tape.matmul(down_in, tape.transpose(w.w_down));
    down = apply_site(tape, model, binds, site(l, ModelOp::down_proj, SiteRole::linear_output_act), down, flags, observer);
    x = tape.add(x, down);
  }

  ad::Var final_norm = tape.rmsnorm_rows(x);
  // lm_head sites are excluded from quantization but still observed.
  const QuantSite& head_in = model.site_at(model.config.num_layers, ModelOp::lm_head,
                                           SiteRole::linear_input_act);
  final_norm = apply_site(tape, model, binds, head_in, final_norm, flags, observer);
  ad::Var logits = tape.matmul(final_norm, tape.transpose(binds.lm_head_w));
  const QuantSite& head_out = model.site_at(model.config.num_layers, ModelOp::lm_head,
                                            SiteRole::linear_output_act);
  logits = apply_site(tape, model, binds, head_out, logits, flags, observer);
  return logits;
}

Tensor forward_logits(const Model& model, const std::vector<std::int32_t>& tokens,
                      const ForwardFlags& flags, const SiteObserver& observer) {
  ad::Tape tape;
  TapeBindings binds = bind_model(tape, model, flags, BindOptions{}, observer);
  ad::Var logits = forward_sequence(tape, model, binds, tokens, flags, observer);
  return logits.value();
}

}  // namespace sq
