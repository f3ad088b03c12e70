#pragma once

#include <cstdint>
#include <optional>

#include "staticquant/tape.hpp"
#include "staticquant/tensor.hpp"

namespace sq {

enum class RotationKind { sylvester, randomized, cayley };
enum class FusionSite { r1, r2 };
enum class FuseSide { input, output };

/// Orthogonal rotation matrix plus its provenance and fusion site.
/// Invariant: ||R^T R - I||_inf <= 1e-5 for every constructed handle.
struct RotationHandle {
  std::size_t size = 0;
  Tensor matrix;
  RotationKind kind = RotationKind::sylvester;
  FusionSite site = FusionSite::r1;
  std::optional<Tensor> cayley_params;  // free strictly-upper parameters
};

/// Recursive Sylvester construction normalized by 1/sqrt(n) so H^T H = I.
RotationHandle sylvester_hadamard(std::size_t n, FusionSite site = FusionSite::r1);

/// D * H with a seeded random +-1 diagonal D; orthogonality is preserved.
RotationHandle randomized_hadamard(std::size_t n, std::uint64_t seed,
                                   FusionSite site = FusionSite::r1);

/// Cayley transform R = (I - A)(I + A)^{-1} of the skew-symmetric matrix
/// built from `free_params` (length n(n-1)/2, strictly-upper entries
/// mirrored with a sign flip).
RotationHandle cayley_rotation(const Tensor& free_params, std::size_t n,
                               FusionSite site = FusionSite::r1);

std::size_t cayley_param_count(std::size_t n);
Tensor skew_from_free_params(const Tensor& free_params, std::size_t n);

/// Offline weight fusion. `input` side returns W*R, so a consumer of the
/// rotated stream reproduces X W^T via (X R)(W R)^T; `output` side returns
/// R^T * W so the producer emits into the rotated basis.
Tensor fuse_into_weight(const Tensor& w, const RotationHandle& r, FuseSide side);

struct RotationStatReport {
  double norm_ratio = 0.0;
  double mean_in = 0.0;
  double mean_out = 0.0;
};

/// Treats x as a row vector, applies x*R and reports norm ratio and means.
RotationStatReport rotation_stat_check(const Tensor& x, const RotationHandle& r);

float orthogonality_error(const Tensor& r);
bool is_power_of_two(std::size_t n);

/// Solves A X = B with partial-pivot Gaussian elimination (deterministic
/// pivot rule: largest absolute value, lowest row index on ties). Throws
/// SingularMatrixError when the pivot-ratio condition estimate exceeds 1e8.
Tensor solve_linear(const Tensor& a, const Tensor& b);
Tensor invert_matrix(const Tensor& a);

/// Tape node computing the Cayley rotation from free parameters, so a scalar
/// function of R is differentiable w.r.t. the parameters.
ad::Var cayley_node(ad::Tape& tape, ad::Var free_params, std::size_t n);

}  // namespace sq
