#pragma once

#include <vector>

#include "staticquant/quantizer.hpp"
#include "staticquant/stats.hpp"

namespace sq {

enum class InitMethod { mean_based, max_min };

/// Initialization choice produced by the rotation-and-bit-width-aware rule.
struct InitPolicy {
  InitMethod method = InitMethod::max_min;
  int min_bits = 8;
};

/// Symmetric scale from distribution statistics:
/// s = max(|mean - 3*std|, |mean + 3*std|) / 2^(bits-1), floored at 1e-8.
QuantParams mean_based_init(const RunningStats& stats, const QuantSpec& spec);

/// Full-range scale. Asymmetric specs also get the zero-point of the affine
/// scheme; symmetric specs use max(|min|, |max|) / (2^(bits-1) - 1).
QuantParams max_min_init(const RunningStats& stats, const QuantSpec& spec);

QuantParams init_params(InitMethod method, const RunningStats& stats, const QuantSpec& spec);

/// Per-channel variants: one scale (and zero-point) per channel statistic.
QuantParams mean_based_init_per_channel(const std::vector<RunningStats>& stats,
                                        const QuantSpec& spec);
QuantParams max_min_init_per_channel(const std::vector<RunningStats>& stats,
                                     const QuantSpec& spec);
QuantParams init_params_per_channel(InitMethod method,
                                    const std::vector<RunningStats>& stats,
                                    const QuantSpec& spec);

/// Rotated tensors keep the requested bit-width and use mean-based
/// initialization; unrotated tensors use max-min and never drop below 8 bits.
InitPolicy select_policy(TensorClass tensor_class, int requested_bits);

/// Probe methods include fixed-percentile clipping baselines used only for
/// comparisons; they are not selectable production policies.
enum class ProbeMethod { mean_based, max_min, clip99, clip999, clip9999 };

/// Relative reconstruction error ||fq(x) - x||^2 / ||x||^2 after initializing
/// the quantizer on x itself with the given method.
double init_quality_probe(const Tensor& x, const QuantSpec& spec, ProbeMethod method);
double init_quality_probe(const Tensor& x, const QuantSpec& spec, const InitPolicy& policy);

}  // namespace sq
