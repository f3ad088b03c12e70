#include "staticquant/stats.hpp"

#include <cmath>

namespace sq {

void RunningStats::update(float x) {
  if (count == 0) {
    min = x;
    max = x;
  } else {
    min = std::min(min, x);
    max = std::max(max, x);
  }
  count += 1;
  const double delta = static_cast<double>(x) - mean;
  mean += delta / static_cast<double>(count);
  m2 += delta * (static_cast<double>(x) - mean);
}

void RunningStats::merge(const RunningStats& other) {
  if (other.count == 0) return;
  if (count == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count);
  const double nb = static_cast<double>(other.count);
  const double n = na + nb;
  const double delta = other.mean - mean;
  mean += delta * nb / n;
  m2 += other.m2 + delta * delta * na * nb / n;
  min = std::min(min, other.min);
  max = std::max(max, other.max);
  count += other.count;
}

double RunningStats::stddev() const {
  return std::sqrt(variance());
}

float RunningStats::abs_max() const {
  return std::max(std::fabs(min), std::fabs(max));
}

RunningStats collect_stats(std::span<const Tensor> batches) {
  RunningStats stats;
  for (const Tensor& t : batches) {
    for (std::size_t i = 0; i < t.size(); ++i) stats.update(t[i]);
  }
  if (stats.empty()) {
    throw CalibrationError("collect_stats: no elements seen (empty calibration set)");
  }
  return stats;
}

RunningStats collect_stats(const Tensor& tensor) {
  return collect_stats(std::span<const Tensor>(&tensor, 1));
}

std::vector<RunningStats> collect_stats_per_channel(const Tensor& tensor,
                                                    std::size_t channel_axis) {
  if (channel_axis >= tensor.rank()) {
    throw ArgumentError("collect_stats_per_channel: axis out of range");
  }
  const auto& shape = tensor.shape();
  const std::size_t channels = shape[channel_axis];
  std::size_t inner = 1;
  for (std::size_t a = channel_axis + 1; a < shape.size(); ++a) inner *= shape[a];

  std::vector<RunningStats> per_channel(channels);
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const std::size_t c = (i / inner) % channels;
    per_channel[c].update(tensor[i]);
  }
  if (tensor.size() == 0) {
    throw CalibrationError("collect_stats_per_channel: empty tensor");
  }
  return per_channel;
}

}  // namespace sq
