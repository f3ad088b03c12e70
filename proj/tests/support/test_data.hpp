#pragma once

#include <cmath>
#include <cstdint>

#include "staticquant/tensor.hpp"

namespace sq::testdata {

/// Standard normal samples with one element replaced by `outlier`.
/// Desk-scale stand-in for a rotated activation with a residual outlier.
inline Tensor gaussian_with_outlier(std::uint64_t seed, std::size_t n, float outlier) {
  Rng rng(seed);
  Tensor x = rng.normal_tensor({n});
  x[n / 2] = outlier;
  return x;
}

/// Heavy-tailed mixture with roughly equal energy per amplitude octave:
/// octave j holds count_scale * 4^(octaves-1-j) samples of N(0, 4^j), then
/// the whole vector is shuffled. Total energy is spread across all scales,
/// which no 16-level grid can cover.
inline Tensor heavy_tailed_octaves(std::uint64_t seed, std::size_t octaves = 12,
                                   std::size_t count_scale = 1) {
  Rng rng(seed);
  std::vector<float> values;
  for (std::size_t j = 0; j < octaves; ++j) {
    std::size_t count = count_scale;
    for (std::size_t k = j + 1; k < octaves; ++k) count *= 4;
    const float sigma = static_cast<float>(1u << j);
    for (std::size_t i = 0; i < count; ++i) {
      values.push_back(static_cast<float>(rng.normal()) * sigma);
    }
  }
  // Fisher-Yates with the same stream.
  for (std::size_t i = values.size(); i-- > 1;) {
    const std::size_t k = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i)));
    std::swap(values[i], values[k]);
  }
  const std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

/// Student-t samples via z / sqrt(chi2_df / df); df=2 gives the classic
/// heavy-tail profile with infinite variance.
inline Tensor student_t(std::uint64_t seed, double df, std::size_t n) {
  Rng rng(seed);
  Tensor x({n});
  for (std::size_t i = 0; i < n; ++i) {
    const double z = rng.normal();
    double chi2 = 0.0;
    for (int k = 0; k < static_cast<int>(df); ++k) {
      const double g = rng.normal();
      chi2 += g * g;
    }
    x[i] = static_cast<float>(z / std::sqrt(chi2 / df));
  }
  return x;
}

/// Excess-free sample kurtosis (fourth standardized moment).
inline double kurtosis(const Tensor& x) {
  const double n = static_cast<double>(x.size());
  double mean = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) mean += x[i];
  mean /= n;
  double m2 = 0.0, m4 = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - mean;
    m2 += d * d;
    m4 += d * d * d * d;
  }
  m2 /= n;
  m4 /= n;
  return m4 / (m2 * m2);
}

}  // namespace sq::testdata
