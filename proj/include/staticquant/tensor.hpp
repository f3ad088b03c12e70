#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "staticquant/common.hpp"

namespace sq {

/// Dense row-major float32 tensor. Values are stored and accumulated in
/// 32-bit floats with a fixed reduction order so results are reproducible
/// bit-for-bit across runs.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);
  Tensor(std::vector<std::size_t> shape, float fill);

  static Tensor scalar(float v) { return Tensor({1}, std::vector<float>{v}); }
  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }

  // 2-D convenience accessors; most of the pipeline works on matrices.
  std::size_t rows() const;
  std::size_t cols() const;
  float& at(std::size_t r, std::size_t c);
  float at(std::size_t r, std::size_t c) const;

  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::vector<float>& vec() { return data_; }
  const std::vector<float>& vec() const { return data_; }
  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool is_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
};

/// Integer tensor used for quantized payloads and token sequences.
struct TensorI32 {
  std::vector<std::size_t> shape;
  std::vector<std::int32_t> data;

  std::size_t size() const { return data.size(); }
};

std::size_t shape_product(const std::vector<std::size_t>& shape);

// Matrix kernels. All throw DimensionError on shape mismatch.
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, float c);

// Elementwise / row-wise nonlinearities shared by the model and the tape.
float sigmoid_scalar(float x);
Tensor silu(const Tensor& a);
Tensor softmax_rows(const Tensor& a);
Tensor rmsnorm_rows(const Tensor& a, float eps = 1e-6f);

float max_abs(const Tensor& a);
double sum_squares(const Tensor& a);       // double accumulator, fixed order
double l2_norm(const Tensor& a);
double mean_value(const Tensor& a);

/// Deterministic random stream. Gaussian samples come from a hand-rolled
/// Box-Muller so sequences do not depend on the standard library's
/// distribution implementation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform();                        // [0, 1)
  double uniform(double lo, double hi);
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);  // inclusive
  double normal();
  bool coin_flip() { return (next_u64() >> 63) != 0; }

  Tensor normal_tensor(std::vector<std::size_t> shape, float stddev = 1.0f);

 private:
  std::mt19937_64 engine_;
};

}  // namespace sq
