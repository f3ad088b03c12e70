#include "staticquant/sensitivity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sq {

double relative_error_ratio(const Tensor& x, const Tensor& dequantized) {
  if (!x.same_shape(dequantized)) throw DimensionError("relative_error_ratio: shape mismatch");
  if (x.size() == 0) throw ArgumentError("relative_error_ratio: empty tensor");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double num = std::fabs(static_cast<double>(dequantized[i]) - static_cast<double>(x[i]));
    const double den = std::fabs(static_cast<double>(x[i])) + 1e-8;
    acc += num / den;
  }
  return acc / static_cast<double>(x.size());
}

double sensitivity_ratio(const Tensor& x, const QuantParams& params, const QuantSpec& spec) {
  const Tensor dq = fake_quantize(x, params, spec);
  return relative_error_ratio(x, dq);
}

std::size_t PrecisionPlan::promoted_count() const {
  std::size_t n = 0;
  for (int b : bits) {
    if (b == 16) ++n;
  }
  return n;
}

PrecisionPlan plan_mixed_precision(const std::vector<SensitivityReport>& reports,
                                   double promote_fraction) {
  if (reports.empty()) throw ArgumentError("plan_mixed_precision: no reports");
  if (promote_fraction < 0.0 || promote_fraction > 1.0) {
    throw ArgumentError("plan_mixed_precision: fraction must lie in [0, 1]");
  }
  const std::size_t n = reports.size();
  // ceil with a tolerance so fractions like 0.1 * 30 do not round up to 4.
  const std::size_t promoted = static_cast<std::size_t>(
      std::ceil(promote_fraction * static_cast<double>(n) - 1e-9));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (reports[a].ratio != reports[b].ratio) return reports[a].ratio > reports[b].ratio;
    return reports[a].site_index < reports[b].site_index;
  });

  PrecisionPlan plan;
  plan.promote_fraction = promote_fraction;
  plan.site_indices.resize(n);
  plan.bits.resize(n);
  for (std::size_t rank = 0; rank < n; ++rank) {
    const SensitivityReport& rep = reports[order[rank]];
    plan.site_indices[rank] = rep.site_index;
    plan.bits[rank] = rank < promoted ? 16 : 8;
  }
  return plan;
}

ErrorDecomposition error_decomposition(const Tensor& x, const QuantParams& params,
                                       const QuantSpec& spec) {
  const Tensor dq = fake_quantize(x, params, spec);
  const int q_min = spec.q_min(), q_max = spec.q_max();
  ErrorDecomposition out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const std::size_t c = channel_of_index(x, spec, i);
    const float t = x[i] / params.scale[c] + static_cast<float>(params.zero_point[c]);
    const double d = static_cast<double>(dq[i]) - static_cast<double>(x[i]);
    const double sq_err = d * d;
    if (t >= static_cast<float>(q_min) && t <= static_cast<float>(q_max)) {
      out.e_rounding += sq_err;
    } else {
      out.e_clipping += sq_err;
    }
  }
  out.e_total = out.e_rounding + out.e_clipping;
  return out;
}

std::vector<ScaleSweepPoint> sweep_scale_tradeoff(const Tensor& x, const QuantSpec& spec,
                                                  const std::vector<float>& scale_grid) {
  if (scale_grid.empty()) throw ArgumentError("sweep_scale_tradeoff: empty scale grid");
  std::vector<ScaleSweepPoint> curve;
  curve.reserve(scale_grid.size());
  for (float s : scale_grid) {
    QuantParams params;
    params.scale = {s};
    params.zero_point = {0};
    ScaleSweepPoint point;
    point.scale = s;
    point.decomposition = error_decomposition(x, params, spec);
    curve.push_back(point);
  }
  return curve;
}

}  // namespace sq
