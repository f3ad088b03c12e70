#include "staticquant/rotation.hpp"

#include <cmath>

namespace sq {

bool is_power_of_two(std::size_t n) {
  return n != 0 && (n & (n - 1)) == 0;
}

namespace {

Tensor sylvester_matrix(std::size_t n) {
  // Recursive doubling: H_{2m} = [[H_m, H_m], [H_m, -H_m]].
  Tensor h({n, n});
  h.at(0, 0) = 1.0f;
  for (std::size_t m = 1; m < n; m *= 2) {
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) {
        const float v = h.at(i, j);
        h.at(i, j + m) = v;
        h.at(i + m, j) = v;
        h.at(i + m, j + m) = -v;
      }
    }
  }
  const float norm = 1.0f / std::sqrt(static_cast<float>(n));
  for (std::size_t i = 0; i < h.size(); ++i) h[i] *= norm;
  return h;
}

}  // namespace

RotationHandle sylvester_hadamard(std::size_t n, FusionSite site) {
  if (!is_power_of_two(n)) {
    throw ArgumentError("sylvester_hadamard: size must be a power of two, got " +
                        std::to_string(n));
  }
  RotationHandle r;
  r.size = n;
  r.kind = RotationKind::sylvester;
  r.site = site;
  r.matrix = sylvester_matrix(n);
  return r;
}

RotationHandle randomized_hadamard(std::size_t n, std::uint64_t seed, FusionSite site) {
  RotationHandle r = sylvester_hadamard(n, site);
  r.kind = RotationKind::randomized;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    if (rng.coin_flip()) {
      for (std::size_t j = 0; j < n; ++j) r.matrix.at(i, j) = -r.matrix.at(i, j);
    }
  }
  return r;
}

std::size_t cayley_param_count(std::size_t n) {
  return n * (n - 1) / 2;
}

Tensor skew_from_free_params(const Tensor& free_params, std::size_t n) {
  if (free_params.size() != cayley_param_count(n)) {
    throw DimensionError("cayley: expected " + std::to_string(cayley_param_count(n)) +
                         " free parameters for size " + std::to_string(n));
  }
  Tensor a({n, n});
  std::size_t k = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j, ++k) {
      a.at(i, j) = free_params[k];
      a.at(j, i) = -free_params[k];
    }
  }
  return a;
}

Tensor solve_linear(const Tensor& a, const Tensor& b) {
  const std::size_t n = a.rows();
  if (a.cols() != n || b.rows() != n) {
    throw DimensionError("solve_linear: incompatible shapes");
  }
  const std::size_t m = b.cols();
  // Work in double so the solve itself does not limit orthogonality.
  std::vector<double> lu(n * n);
  std::vector<double> rhs(n * m);
  for (std::size_t i = 0; i < n * n; ++i) lu[i] = a.data()[i];
  for (std::size_t i = 0; i < n * m; ++i) rhs[i] = b.data()[i];

  double max_pivot = 0.0, min_pivot = 0.0;
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot_row = col;
    double best = std::fabs(lu[col * n + col]);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double v = std::fabs(lu[r * n + col]);
      if (v > best) {
        best = v;
        pivot_row = r;
      }
    }
    if (best == 0.0) throw SingularMatrixError("solve_linear: exactly singular matrix");
    if (pivot_row != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu[col * n + j], lu[pivot_row * n + j]);
      for (std::size_t j = 0; j < m; ++j) std::swap(rhs[col * m + j], rhs[pivot_row * m + j]);
    }
    const double pivot = lu[col * n + col];
    max_pivot = col == 0 ? std::fabs(pivot) : std::max(max_pivot, std::fabs(pivot));
    min_pivot = col == 0 ? std::fabs(pivot) : std::min(min_pivot, std::fabs(pivot));
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = lu[r * n + col] / pivot;
      if (f == 0.0) continue;
      lu[r * n + col] = 0.0;
      for (std::size_t j = col + 1; j < n; ++j) lu[r * n + j] -= f * lu[col * n + j];
      for (std::size_t j = 0; j < m; ++j) rhs[r * m + j] -= f * rhs[col * m + j];
    }
  }
  if (min_pivot > 0.0 && max_pivot / min_pivot > 1e8) {
    throw SingularMatrixError("solve_linear: condition estimate exceeds 1e8");
  }
  Tensor x({n, m});
  for (std::size_t r = n; r-- > 0;) {
    for (std::size_t j = 0; j < m; ++j) {
      double acc = rhs[r * m + j];
      for (std::size_t k = r + 1; k < n; ++k) {
        acc -= lu[r * n + k] * static_cast<double>(x.at(k, j));
      }
      x.at(r, j) = static_cast<float>(acc / lu[r * n + r]);
    }
  }
  return x;
}

Tensor invert_matrix(const Tensor& a) {
  const std::size_t n = a.rows();
  Tensor eye({n, n});
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0f;
  return solve_linear(a, eye);
}

namespace {

Tensor cayley_matrix(const Tensor& free_params, std::size_t n) {
  const Tensor a = skew_from_free_params(free_params, n);
  Tensor i_minus({n, n}), i_plus({n, n});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < n; ++c) {
      i_minus.at(r, c) = (r == c ? 1.0f : 0.0f) - a.at(r, c);
      i_plus.at(r, c) = (r == c ? 1.0f : 0.0f) + a.at(r, c);
    }
  }
  // R = (I - A)(I + A)^{-1}, computed as the solution of (I + A)^T X^T = (I - A)^T.
  // Equivalent: solve (I+A)^T Y = (I-A)^T, then R = Y^T.
  Tensor y = solve_linear(transpose(i_plus), transpose(i_minus));
  return transpose(y);
}

}  // namespace

RotationHandle cayley_rotation(const Tensor& free_params, std::size_t n, FusionSite site) {
  RotationHandle r;
  r.size = n;
  r.kind = RotationKind::cayley;
  r.site = site;
  r.cayley_params = free_params;
  r.matrix = cayley_matrix(free_params, n);
  return r;
}

Tensor fuse_into_weight(const Tensor& w, const RotationHandle& r, FuseSide side) {
  if (side == FuseSide::input) {
    if (w.cols() != r.size) {
      throw DimensionError("fuse_into_weight: weight columns do not match rotation size");
    }
    return matmul(w, r.matrix);
  }
  if (w.rows() != r.size) {
    throw DimensionError("fuse_into_weight: weight rows do not match rotation size");
  }
  return matmul(transpose(r.matrix), w);
}

RotationStatReport rotation_stat_check(const Tensor& x, const RotationHandle& r) {
  if (x.size() != r.size) {
    throw DimensionError("rotation_stat_check: vector length does not match rotation");
  }
  Tensor row({1, x.size()}, x.vec());
  Tensor rotated = matmul(row, r.matrix);
  RotationStatReport report;
  const double in_norm = l2_norm(row);
  report.norm_ratio = in_norm == 0.0 ? 1.0 : l2_norm(rotated) / in_norm;
  report.mean_in = mean_value(row);
  report.mean_out = mean_value(rotated);
  return report;
}

float orthogonality_error(const Tensor& r) {
  Tensor prod = matmul(transpose(r), r);
  const std::size_t n = prod.rows();
  float err = 0.0f;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const float target = i == j ? 1.0f : 0.0f;
      err = std::max(err, std::fabs(prod.at(i, j) - target));
    }
  }
  return err;
}

ad::Var cayley_node(ad::Tape& tape, ad::Var free_params, std::size_t n) {
  const Tensor& p = free_params.value();
  Tensor r_val = cayley_matrix(p, n);
  // Saved for backward: R and (I + A)^{-1}.
  const Tensor a = skew_from_free_params(p, n);
  Tensor i_plus({n, n});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      i_plus.at(i, j) = (i == j ? 1.0f : 0.0f) + a.at(i, j);
    }
  }
  Tensor b_inv = invert_matrix(i_plus);
  Tensor r_saved = r_val;
  const std::size_t p_id = free_params.id;

  return tape.custom({p_id}, std::move(r_val),
                     [p_id, n, b_inv, r_saved](ad::Tape& t, std::size_t id) {
    if (!t.requires_grad(p_id)) return;
    const Tensor& g = t.grad(id);
    // dR = -(I + R) dA B^{-1}  =>  dL/dA = -(I + R)^T G (B^{-1})^T.
    Tensor i_plus_r = r_saved;
    for (std::size_t i = 0; i < n; ++i) i_plus_r.at(i, i) += 1.0f;
    Tensor ga = matmul(matmul(transpose(i_plus_r), g), transpose(b_inv));
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = -ga[i];
    // Map onto the free strictly-upper parameters: dp = dA_ij - dA_ji.
    Tensor gp({cayley_param_count(n)});
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = i + 1; j < n; ++j, ++k) {
        gp[k] = ga.at(i, j) - ga.at(j, i);
      }
    }
    t.accumulate_grad(p_id, gp);
  });
}

}  // namespace sq
