#pragma once

#include <functional>
#include <vector>

#include "staticquant/tensor.hpp"

namespace sq::ad {

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
};

/// Reverse-mode tape. Forward values are computed eagerly when an op is
/// recorded; backward() replays the recorded closures in reverse creation
/// order, which is a reverse topological order because every op's parents
/// are created before the op itself. One optimization step owns one tape.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t node_id)>;

  Var leaf(Tensor value, bool requires_grad = false);

  // Registers a custom node. `parents` must already live on this tape.
  // The backward closure reads grad(node_id) and accumulates into the
  // parents via accumulate_grad().
  Var custom(std::vector<std::size_t> parents, Tensor value, BackwardFn backward);

  // Differentiable primitives.
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, float c);
  Var add_constant(Var a, Tensor c);
  Var matmul(Var a, Var b);
  Var transpose(Var a);
  Var slice_cols(Var a, std::size_t start, std::size_t len);
  Var concat_cols(const std::vector<Var>& parts);
  Var block_diag(Var a, std::size_t blocks);
  Var silu(Var a);
  Var softmax_rows(Var a);
  Var rmsnorm_rows(Var a, float eps = 1e-6f);
  Var sum(Var a);
  Var sum_squares(Var a);
  Var mse(Var a, Var b);

  /// Runs the backward pass from a scalar loss. Each node is visited
  /// exactly once, in reverse topological order. Gradients of leaves that
  /// do not influence the loss stay exactly zero.
  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id);
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  void accumulate_grad(std::size_t id, const Tensor& g);
  /// Adds g scaled elementwise; helper for sparse-ish accumulations.
  Tensor& grad_buffer(std::size_t id);
  std::size_t num_nodes() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;  // allocated lazily; empty means "all zeros"
    std::vector<std::size_t> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  std::size_t push(Node node);
  void check_same_tape(Var v) const;

  std::vector<Node> nodes_;
  bool ran_backward_ = false;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

}  // namespace sq::ad
