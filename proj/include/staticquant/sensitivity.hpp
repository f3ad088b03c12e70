#pragma once

#include <string>
#include <vector>

#include "staticquant/quantizer.hpp"

namespace sq {

/// Mean relative dequantization error of one probe site. A ratio near 1
/// signals severe outlier-induced error; near 0 the site is almost lossless.
struct SensitivityReport {
  int site_index = 0;
  std::string site_name;
  int probe_bits = 8;
  double ratio = 0.0;
};

/// Per-site 8/16-bit assignments. Exactly ceil(promote_fraction * n) sites
/// are promoted to 16-bit; ties break toward the lower site index.
struct PrecisionPlan {
  double promote_fraction = 0.10;
  std::vector<int> site_indices;  // aligned with bits
  std::vector<int> bits;

  std::size_t promoted_count() const;
};

/// mean_i |dq_i - x_i| / (|x_i| + 1e-8) where dq = fake_quantize(x, params).
double sensitivity_ratio(const Tensor& x, const QuantParams& params, const QuantSpec& spec);

/// Same metric from a precomputed dequantized tensor.
double relative_error_ratio(const Tensor& x, const Tensor& dequantized);

PrecisionPlan plan_mixed_precision(const std::vector<SensitivityReport>& reports,
                                   double promote_fraction);

/// Exact split of the squared reconstruction error by whether x/s + zp lies
/// inside [q_min, q_max]. e_total is e_rounding + e_clipping by construction.
struct ErrorDecomposition {
  double e_rounding = 0.0;
  double e_clipping = 0.0;
  double e_total = 0.0;
};

ErrorDecomposition error_decomposition(const Tensor& x, const QuantParams& params,
                                       const QuantSpec& spec);

struct ScaleSweepPoint {
  float scale = 0.0f;
  ErrorDecomposition decomposition;
};

/// Evaluates the rounding/clipping trade-off across a grid of scales
/// (symmetric quantizer, zero-point 0).
std::vector<ScaleSweepPoint> sweep_scale_tradeoff(const Tensor& x, const QuantSpec& spec,
                                                  const std::vector<float>& scale_grid);

}  // namespace sq
