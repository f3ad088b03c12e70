#include "staticquant/quantizer.hpp"

#include <algorithm>
#include <cmath>

namespace sq {

namespace {

// nearbyintf under the default FE_TONEAREST mode implements the
// round-half-to-even contract.
inline float round_half_even(float v) { return std::nearbyintf(v); }

inline float fq_element(float x, float s, int zp, int q_min, int q_max) {
  float t = round_half_even(x / s + static_cast<float>(zp));
  t = std::min(std::max(t, static_cast<float>(q_min)), static_cast<float>(q_max));
  return (t - static_cast<float>(zp)) * s;
}

void check_params(const QuantParams& params, const Tensor& x, const QuantSpec& spec) {
  const std::size_t channels =
      spec.granularity == Granularity::per_channel ? x.shape().at(spec.channel_axis) : 1;
  if (params.scale.size() != channels || params.zero_point.size() != channels) {
    throw DimensionError("quantizer: params size does not match tensor channels");
  }
  for (float s : params.scale) {
    if (!(s > 0.0f)) throw ArgumentError("quantizer: scale must be positive");
  }
}

}  // namespace

std::size_t channel_of_index(const Tensor& x, const QuantSpec& spec, std::size_t flat) {
  if (spec.granularity == Granularity::per_tensor) return 0;
  const auto& shape = x.shape();
  std::size_t inner = 1;
  for (std::size_t a = spec.channel_axis + 1; a < shape.size(); ++a) inner *= shape[a];
  return (flat / inner) % shape[spec.channel_axis];
}

QuantParams symmetric_scale(const RunningStats& stats, const QuantSpec& spec) {
  if (!spec.symmetric) throw ArgumentError("symmetric_scale: spec is not symmetric");
  if (stats.empty()) throw CalibrationError("symmetric_scale: empty statistics");
  const float denom = static_cast<float>((1 << (spec.bits - 1)) - 1);
  float s = stats.abs_max() / denom;
  if (!(s > 0.0f)) s = kScaleFloor;
  QuantParams p;
  p.scale = {s};
  p.zero_point = {0};
  return p;
}

QuantParams asymmetric_params(const RunningStats& stats, const QuantSpec& spec) {
  if (spec.symmetric) throw ArgumentError("asymmetric_params: spec is symmetric");
  if (stats.empty()) throw CalibrationError("asymmetric_params: empty statistics");
  const float levels = static_cast<float>((1 << spec.bits) - 1);
  const float range = stats.max - stats.min;
  QuantParams p;
  if (!(range > 0.0f)) {
    p.scale = {kScaleFloor};
    p.zero_point = {spec.q_min()};
    return p;
  }
  const float s = range / levels;
  // zero_point = round(-min / scale); evaluated as -min * levels / range so
  // exact-arithmetic ties (e.g. 127.5) survive the float division.
  float zp = round_half_even(-stats.min * levels / range);
  zp = std::min(std::max(zp, static_cast<float>(spec.q_min())),
                static_cast<float>(spec.q_max()));
  p.scale = {s};
  p.zero_point = {static_cast<int>(zp)};
  return p;
}

TensorI32 quantize(const Tensor& x, const QuantParams& params, const QuantSpec& spec) {
  check_params(params, x, spec);
  TensorI32 out;
  out.shape = x.shape();
  out.data.resize(x.size());
  const int q_min = spec.q_min(), q_max = spec.q_max();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = channel_of_index(x, spec, i);
    float t = round_half_even(x[i] / params.scale[c] +
                              static_cast<float>(params.zero_point[c]));
    t = std::min(std::max(t, static_cast<float>(q_min)), static_cast<float>(q_max));
    out.data[i] = static_cast<std::int32_t>(t);
  }
  return out;
}

Tensor dequantize(const TensorI32& q, const QuantParams& params, const QuantSpec& spec) {
  Tensor out(q.shape);
  for (std::size_t i = 0; i < q.data.size(); ++i) {
    const std::size_t c = channel_of_index(out, spec, i);
    out[i] = static_cast<float>(q.data[i] - params.zero_point[c]) * params.scale[c];
  }
  return out;
}

Tensor fake_quantize(const Tensor& x, const QuantParams& params, const QuantSpec& spec) {
  check_params(params, x, spec);
  Tensor out(x.shape());
  const int q_min = spec.q_min(), q_max = spec.q_max();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = channel_of_index(x, spec, i);
    out[i] = fq_element(x[i], params.scale[c], params.zero_point[c], q_min, q_max);
  }
  return out;
}

float ste_grad_scale(float x, float s, int zp, int q_min, int q_max) {
  const float t = x / s + static_cast<float>(zp);
  if (t > static_cast<float>(q_min) && t < static_cast<float>(q_max)) {
    return round_half_even(t) - t;
  }
  // Boundary points take the clipped branch.
  if (t <= static_cast<float>(q_min)) return static_cast<float>(q_min - zp);
  return static_cast<float>(q_max - zp);
}

float ste_grad_zero_point(float x, float s, int zp, int q_min, int q_max) {
  const float t = x / s + static_cast<float>(zp);
  if (t > static_cast<float>(q_min) && t < static_cast<float>(q_max)) return 0.0f;
  return -s;
}

double gradient_scale_factor(std::size_t num_elements, int q_max) {
  if (num_elements == 0 || q_max <= 0) {
    throw ArgumentError("gradient_scale_factor: arguments must be positive");
  }
  return 1.0 / std::sqrt(static_cast<double>(num_elements) * static_cast<double>(q_max));
}

double local_quant_loss(const Tensor& x, const QuantParams& params, const QuantSpec& spec) {
  const Tensor fq = fake_quantize(x, params, spec);
  double loss = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(fq[i]) - static_cast<double>(x[i]);
    loss += d * d;
  }
  return loss;
}

ad::Var fake_quantize_node(ad::Tape& tape, ad::Var x, ad::Var scale_var,
                           const std::vector<int>& zero_point, const QuantSpec& spec,
                           std::optional<ad::Var> zp_var) {
  const Tensor& xv = x.value();
  const Tensor& sv = scale_var.value();
  std::vector<int> zp = zero_point;
  if (zp_var.has_value()) {
    const Tensor& zv = zp_var->value();
    zp.resize(zv.size());
    for (std::size_t i = 0; i < zv.size(); ++i) {
      zp[i] = static_cast<int>(round_half_even(zv[i]));
    }
  }
  QuantParams params;
  params.scale = sv.vec();
  params.zero_point = zp;
  Tensor out = fake_quantize(xv, params, spec);

  std::vector<std::size_t> parents{x.id, scale_var.id};
  if (zp_var.has_value()) parents.push_back(zp_var->id);
  const int q_min = spec.q_min(), q_max = spec.q_max();
  const std::size_t x_id = x.id, s_id = scale_var.id;
  const std::optional<std::size_t> zp_id =
      zp_var.has_value() ? std::optional<std::size_t>(zp_var->id) : std::nullopt;

  return tape.custom(std::move(parents), std::move(out),
                     [x_id, s_id, zp_id, zp, spec, q_min, q_max](ad::Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    const Tensor& xv = t.value(x_id);
    const Tensor& sv = t.value(s_id);
    const bool need_x = t.requires_grad(x_id);
    const bool need_s = t.requires_grad(s_id);
    const bool need_zp = zp_id.has_value() && t.requires_grad(*zp_id);

    Tensor gx(xv.shape());
    Tensor gs(sv.shape());
    Tensor gzp = need_zp ? Tensor(sv.shape()) : Tensor();
    for (std::size_t i = 0; i < xv.size(); ++i) {
      const std::size_t c = channel_of_index(xv, spec, i);
      const float s = sv[c];
      const float t_val = xv[i] / s + static_cast<float>(zp[c]);
      const bool in_range = t_val > static_cast<float>(q_min) &&
                            t_val < static_cast<float>(q_max);
      if (in_range) {
        if (need_x) gx[i] = g[i];
        if (need_s) gs[c] += g[i] * (round_half_even(t_val) - t_val);
      } else {
        const int bound = t_val <= static_cast<float>(q_min) ? q_min : q_max;
        if (need_s) gs[c] += g[i] * static_cast<float>(bound - zp[c]);
        if (need_zp) gzp[c] += g[i] * (-s);
      }
    }
    if (need_x) t.accumulate_grad(x_id, gx);
    if (need_s) t.accumulate_grad(s_id, gs);
    if (need_zp) t.accumulate_grad(*zp_id, gzp);
  });
}

}  // namespace sq
