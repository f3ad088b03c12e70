#pragma once

#include <span>
#include <vector>

#include "staticquant/tensor.hpp"

namespace sq {

/// Streaming min/max/mean/variance accumulator (Welford update, Chan merge).
/// Variance is the population variance m2/count.
struct RunningStats {
  std::size_t count = 0;
  float min = 0.0f;
  float max = 0.0f;
  double mean = 0.0;
  double m2 = 0.0;

  void update(float x);
  void merge(const RunningStats& other);

  bool empty() const { return count == 0; }
  double variance() const { return count == 0 ? 0.0 : m2 / static_cast<double>(count); }
  double stddev() const;
  float abs_max() const;
};

/// Folds every element of every batch into one accumulator.
/// Throws CalibrationError when no element was seen.
RunningStats collect_stats(std::span<const Tensor> batches);
RunningStats collect_stats(const Tensor& tensor);

/// Per-channel variant: reduces over all axes except `channel_axis`.
std::vector<RunningStats> collect_stats_per_channel(const Tensor& tensor,
                                                    std::size_t channel_axis);

}  // namespace sq
