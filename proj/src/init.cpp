#include "staticquant/init.hpp"

#include <algorithm>
#include <cmath>

namespace sq {

QuantParams mean_based_init(const RunningStats& stats, const QuantSpec& spec) {
  if (stats.empty()) throw CalibrationError("mean_based_init: empty statistics");
  const double mu = stats.mean;
  const double sigma = stats.stddev();
  const double reach = std::max(std::fabs(mu - 3.0 * sigma), std::fabs(mu + 3.0 * sigma));
  float s = static_cast<float>(reach / static_cast<double>(1 << (spec.bits - 1)));
  if (!(s > 0.0f)) s = kScaleFloor;
  QuantParams p;
  p.scale = {s};
  p.zero_point = {0};
  return p;
}

QuantParams max_min_init(const RunningStats& stats, const QuantSpec& spec) {
  if (stats.empty()) throw CalibrationError("max_min_init: empty statistics");
  if (spec.symmetric) return symmetric_scale(stats, spec);
  return asymmetric_params(stats, spec);
}

QuantParams init_params(InitMethod method, const RunningStats& stats, const QuantSpec& spec) {
  return method == InitMethod::mean_based ? mean_based_init(stats, spec)
                                          : max_min_init(stats, spec);
}

namespace {

QuantParams concat_channel_params(const std::vector<QuantParams>& per_channel) {
  QuantParams out;
  out.scale.clear();
  out.zero_point.clear();
  for (const QuantParams& p : per_channel) {
    out.scale.push_back(p.scale[0]);
    out.zero_point.push_back(p.zero_point[0]);
  }
  return out;
}

}  // namespace

QuantParams mean_based_init_per_channel(const std::vector<RunningStats>& stats,
                                        const QuantSpec& spec) {
  std::vector<QuantParams> per_channel;
  per_channel.reserve(stats.size());
  for (const RunningStats& s : stats) per_channel.push_back(mean_based_init(s, spec));
  return concat_channel_params(per_channel);
}

QuantParams max_min_init_per_channel(const std::vector<RunningStats>& stats,
                                     const QuantSpec& spec) {
  std::vector<QuantParams> per_channel;
  per_channel.reserve(stats.size());
  for (const RunningStats& s : stats) per_channel.push_back(max_min_init(s, spec));
  return concat_channel_params(per_channel);
}

QuantParams init_params_per_channel(InitMethod method,
                                    const std::vector<RunningStats>& stats,
                                    const QuantSpec& spec) {
  return method == InitMethod::mean_based ? mean_based_init_per_channel(stats, spec)
                                          : max_min_init_per_channel(stats, spec);
}

InitPolicy select_policy(TensorClass tensor_class, int requested_bits) {
  InitPolicy policy;
  if (tensor_class == TensorClass::rotated) {
    policy.method = InitMethod::mean_based;
    policy.min_bits = requested_bits;
  } else {
    policy.method = InitMethod::max_min;
    policy.min_bits = std::max(requested_bits, 8);
  }
  return policy;
}

namespace {

float percentile_abs(const Tensor& x, double pct) {
  std::vector<float> mags(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) mags[i] = std::fabs(x[i]);
  std::sort(mags.begin(), mags.end());
  const double pos = pct / 100.0 * static_cast<double>(mags.size() - 1);
  const std::size_t idx = static_cast<std::size_t>(pos);
  return mags[std::min(idx, mags.size() - 1)];
}

QuantParams probe_params(const Tensor& x, const QuantSpec& spec, ProbeMethod method) {
  if (method == ProbeMethod::mean_based || method == ProbeMethod::max_min) {
    const RunningStats stats = collect_stats(x);
    return init_params(method == ProbeMethod::mean_based ? InitMethod::mean_based
                                                         : InitMethod::max_min,
                       stats, spec);
  }
  const double pct = method == ProbeMethod::clip99 ? 99.0
                     : method == ProbeMethod::clip999 ? 99.9
                                                      : 99.99;
  float s = percentile_abs(x, pct) / static_cast<float>((1 << (spec.bits - 1)) - 1);
  if (!(s > 0.0f)) s = kScaleFloor;
  QuantParams p;
  p.scale = {s};
  p.zero_point = {0};
  return p;
}

}  // namespace

double init_quality_probe(const Tensor& x, const QuantSpec& spec, ProbeMethod method) {
  QuantSpec probe_spec = spec;
  probe_spec.granularity = Granularity::per_tensor;
  const QuantParams params = probe_params(x, probe_spec, method);
  const Tensor fq = fake_quantize(x, params, probe_spec);
  const double denom = sum_squares(x);
  if (denom == 0.0) return 0.0;
  double err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(fq[i]) - static_cast<double>(x[i]);
    err += d * d;
  }
  return err / denom;
}

double init_quality_probe(const Tensor& x, const QuantSpec& spec, const InitPolicy& policy) {
  QuantSpec probe_spec = spec;
  probe_spec.bits = std::max(spec.bits, policy.min_bits);
  return init_quality_probe(x, probe_spec,
                            policy.method == InitMethod::mean_based
                                ? ProbeMethod::mean_based
                                : ProbeMethod::max_min);
}

}  // namespace sq
