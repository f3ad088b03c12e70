#pragma once

#include <optional>
#include <vector>

#include "staticquant/stats.hpp"
#include "staticquant/tape.hpp"
#include "staticquant/tensor.hpp"

namespace sq {

enum class Granularity { per_tensor, per_channel };
enum class TensorClass { rotated, unrotated };

/// Static configuration of one quantizer: bit-width, signedness, symmetry,
/// granularity and the rotated/unrotated classification of its tensor.
struct QuantSpec {
  int bits = 8;
  bool is_signed = true;
  bool symmetric = true;
  Granularity granularity = Granularity::per_tensor;
  std::size_t channel_axis = 0;
  TensorClass tensor_class = TensorClass::unrotated;

  int q_min() const { return is_signed ? -(1 << (bits - 1)) : 0; }
  int q_max() const { return is_signed ? (1 << (bits - 1)) - 1 : (1 << bits) - 1; }
};

/// Scale(s) and zero-point(s) of one quantizer. Vectors hold one entry for
/// per-tensor granularity and one per channel otherwise. Symmetric
/// quantizers keep every zero-point at 0.
struct QuantParams {
  std::vector<float> scale{1.0f};
  std::vector<int> zero_point{0};
  bool learnable = false;

  std::size_t channels() const { return scale.size(); }
};

// Degenerate (constant / all-zero) tensors get this scale instead of 0.
inline constexpr float kScaleFloor = 1e-8f;

QuantParams symmetric_scale(const RunningStats& stats, const QuantSpec& spec);
QuantParams asymmetric_params(const RunningStats& stats, const QuantSpec& spec);

TensorI32 quantize(const Tensor& x, const QuantParams& params, const QuantSpec& spec);
Tensor dequantize(const TensorI32& q, const QuantParams& params, const QuantSpec& spec);
Tensor fake_quantize(const Tensor& x, const QuantParams& params, const QuantSpec& spec);

/// Eq.-style scale gradient of the fake-quantized value w.r.t. its scale.
/// In the open interval (q_min, q_max) this is round(x/s+zp) - (x/s+zp);
/// at or beyond a boundary it is the clipped constant q_min-zp or q_max-zp.
float ste_grad_scale(float x, float s, int zp, int q_min, int q_max);

/// Zero-point gradient: 0 strictly in range, -s otherwise.
float ste_grad_zero_point(float x, float s, int zp, int q_min, int q_max);

/// LSQ-style factor 1/sqrt(num_elements * q_max) applied to scale and
/// zero-point gradients before the optimizer step.
double gradient_scale_factor(std::size_t num_elements, int q_max);

/// Squared L2 reconstruction error ||fake_quantize(x) - x||^2.
double local_quant_loss(const Tensor& x, const QuantParams& params, const QuantSpec& spec);

// Maps a flat element index to its channel index (0 for per-tensor).
std::size_t channel_of_index(const Tensor& x, const QuantSpec& spec, std::size_t flat);

/// Tape node for fake quantization with the STE rules above. `scale_var`
/// holds one element per channel. `zero_point` is fixed; pass `zp_var` to
/// make it differentiable as well (its value is then read from the tape and
/// rounded on use).
ad::Var fake_quantize_node(ad::Tape& tape, ad::Var x, ad::Var scale_var,
                           const std::vector<int>& zero_point, const QuantSpec& spec,
                           std::optional<ad::Var> zp_var = std::nullopt);

}  // namespace sq
