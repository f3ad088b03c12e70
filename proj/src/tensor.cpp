#include "staticquant/tensor.hpp"

#include <cmath>
#include <cstddef>

namespace sq {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
    n *= d;
  }
  return n;
}

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0f) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != shape_product(shape_)) {
    throw DimensionError("tensor data length does not match shape product");
  }
}

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(shape_product(shape_), fill) {}

std::size_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D");
  return shape_[1];
}

float& Tensor::at(std::size_t r, std::size_t c) {
  return data_[r * cols() + c];
}

float Tensor::at(std::size_t r, std::size_t c) const {
  return data_[r * cols() + c];
}

bool Tensor::is_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: operands must be 2-D");
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul: inner dimensions disagree (" +
                         std::to_string(k) + " vs " + std::to_string(b.rows()) + ")");
  }
  Tensor c({m, n});
  const float* pa = a.data();
  const float* pb = b.data();
  float* pc = c.data();
  // i-k-j loop: per output element the k accumulation order is fixed and
  // ascending, which keeps float32 sums reproducible.
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t kk = 0; kk < k; ++kk) {
      const float av = pa[i * k + kk];
      const float* brow = pb + kk * n;
      float* crow = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) {
        crow[j] += av * brow[j];
      }
    }
  }
  return c;
}

Tensor transpose(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      t.at(j, i) = a.at(i, j);
    }
  }
  return t;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shape mismatch");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] += b[i];
  return c;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] -= b[i];
  return c;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c[i] *= b[i];
  return c;
}

Tensor scale(const Tensor& a, float c) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
  return out;
}

float sigmoid_scalar(float x) {
  return 1.0f / (1.0f + std::exp(-x));
}

Tensor silu(const Tensor& a) {
  Tensor out = a;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = a[i] * sigmoid_scalar(a[i]);
  }
  return out;
}

Tensor softmax_rows(const Tensor& a) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    float row_max = a.at(i, 0);
    for (std::size_t j = 1; j < n; ++j) row_max = std::max(row_max, a.at(i, j));
    float denom = 0.0f;
    for (std::size_t j = 0; j < n; ++j) {
      const float e = std::exp(a.at(i, j) - row_max);
      out.at(i, j) = e;
      denom += e;
    }
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) /= denom;
  }
  return out;
}

Tensor rmsnorm_rows(const Tensor& a, float eps) {
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    float ss = 0.0f;
    for (std::size_t j = 0; j < n; ++j) ss += a.at(i, j) * a.at(i, j);
    const float inv = 1.0f / std::sqrt(ss / static_cast<float>(n) + eps);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * inv;
  }
  return out;
}

float max_abs(const Tensor& a) {
  float m = 0.0f;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
  return m;
}

double sum_squares(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += static_cast<double>(a[i]) * static_cast<double>(a[i]);
  }
  return s;
}

double l2_norm(const Tensor& a) {
  return std::sqrt(sum_squares(a));
}

double mean_value(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i];
  return a.size() == 0 ? 0.0 : s / static_cast<double>(a.size());
}

double Rng::uniform() {
  // 53 random bits -> [0, 1)
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

std::int64_t Rng::uniform_int(std::int64_t lo, std::int64_t hi) {
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::normal() {
  // Box-Muller, cosine branch only; deterministic across standard libraries.
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  return r * std::cos(2.0 * 3.14159265358979323846 * u2);
}

Tensor Rng::normal_tensor(std::vector<std::size_t> shape, float stddev) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) {
    t[i] = static_cast<float>(normal()) * stddev;
  }
  return t;
}

}  // namespace sq
