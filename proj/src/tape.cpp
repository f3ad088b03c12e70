#include "staticquant/tape.hpp"

#include <cmath>

namespace sq::ad {

std::size_t Tape::push(Node node) {
  const std::size_t id = nodes_.size();
  for (std::size_t p : node.parents) {
    if (p >= id) {
      throw InternalError("tape: node references a parent that does not precede it");
    }
    node.requires_grad = node.requires_grad || nodes_[p].requires_grad;
  }
  nodes_.push_back(std::move(node));
  return id;
}

void Tape::check_same_tape(Var v) const {
  if (v.tape != this) throw InternalError("tape: variable belongs to another tape");
}

Var Tape::leaf(Tensor value, bool requires_grad) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  return Var{this, push(std::move(n))};
}

Var Tape::custom(std::vector<std::size_t> parents, Tensor value, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  n.parents = std::move(parents);
  n.backward = std::move(backward);
  return Var{this, push(std::move(n))};
}

const Tensor& Tape::grad(std::size_t id) {
  // Untouched gradients read as zeros, matching the "unused parameters get
  // exactly zero" contract.
  return grad_buffer(id);
}

Tensor& Tape::grad_buffer(std::size_t id) {
  Node& n = nodes_[id];
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  return n.grad;
}

void Tape::accumulate_grad(std::size_t id, const Tensor& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) n.grad = Tensor(n.value.shape());
  if (!n.grad.same_shape(g)) throw InternalError("tape: gradient shape mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

void Tape::backward(Var loss) {
  check_same_tape(loss);
  if (ran_backward_) throw InternalError("tape: backward already ran");
  ran_backward_ = true;
  const Node& l = nodes_[loss.id];
  if (l.value.size() != 1) {
    throw ArgumentError("backward: loss must be a scalar");
  }
  grad_buffer(loss.id)[0] = 1.0f;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.backward) continue;
    if (n.grad.size() == 0) continue;  // node did not influence the loss
    n.backward(*this, i);
  }
}

Var Tape::add(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  Tensor out = sq::add(a.value(), b.value());
  return custom({a.id, b.id}, std::move(out), [a, b](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    t.accumulate_grad(a.id, g);
    t.accumulate_grad(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  Tensor out = sq::sub(a.value(), b.value());
  return custom({a.id, b.id}, std::move(out), [a, b](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    t.accumulate_grad(a.id, g);
    Tensor neg = sq::scale(g, -1.0f);
    t.accumulate_grad(b.id, neg);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  Tensor out = sq::mul(a.value(), b.value());
  return custom({a.id, b.id}, std::move(out), [a, b](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    t.accumulate_grad(a.id, sq::mul(g, t.value(b.id)));
    t.accumulate_grad(b.id, sq::mul(g, t.value(a.id)));
  });
}

Var Tape::scale(Var a, float c) {
  check_same_tape(a);
  Tensor out = sq::scale(a.value(), c);
  return custom({a.id}, std::move(out), [a, c](Tape& t, std::size_t id) {
    t.accumulate_grad(a.id, sq::scale(t.grad(id), c));
  });
}

Var Tape::add_constant(Var a, Tensor c) {
  check_same_tape(a);
  Tensor out = sq::add(a.value(), c);
  return custom({a.id}, std::move(out), [a](Tape& t, std::size_t id) {
    t.accumulate_grad(a.id, t.grad(id));
  });
}

Var Tape::matmul(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  Tensor out = sq::matmul(a.value(), b.value());
  return custom({a.id, b.id}, std::move(out), [a, b](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    if (t.requires_grad(a.id)) {
      t.accumulate_grad(a.id, sq::matmul(g, sq::transpose(t.value(b.id))));
    }
    if (t.requires_grad(b.id)) {
      t.accumulate_grad(b.id, sq::matmul(sq::transpose(t.value(a.id)), g));
    }
  });
}

Var Tape::transpose(Var a) {
  check_same_tape(a);
  Tensor out = sq::transpose(a.value());
  return custom({a.id}, std::move(out), [a](Tape& t, std::size_t id) {
    t.accumulate_grad(a.id, sq::transpose(t.grad(id)));
  });
}

Var Tape::slice_cols(Var a, std::size_t start, std::size_t len) {
  check_same_tape(a);
  const Tensor& v = a.value();
  const std::size_t m = v.rows(), n = v.cols();
  if (start + len > n) throw DimensionError("slice_cols: range out of bounds");
  Tensor out({m, len});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < len; ++j) out.at(i, j) = v.at(i, start + j);
  }
  return custom({a.id}, std::move(out), [a, start, len, m, n](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    if (!t.requires_grad(a.id)) return;
    Tensor& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < len; ++j) {
        ga.vec()[i * n + start + j] += g.at(i, j);
      }
    }
  });
}

Var Tape::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ArgumentError("concat_cols: no parts");
  std::vector<std::size_t> parents;
  const std::size_t m = parts[0].value().rows();
  std::size_t total = 0;
  for (Var p : parts) {
    check_same_tape(p);
    if (p.value().rows() != m) throw DimensionError("concat_cols: row mismatch");
    total += p.value().cols();
    parents.push_back(p.id);
  }
  Tensor out({m, total});
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& v = p.value();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < v.cols(); ++j) out.at(i, off + j) = v.at(i, j);
    }
    off += v.cols();
  }
  std::vector<Var> saved = parts;
  return custom(std::move(parents), std::move(out), [saved, m](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    std::size_t off = 0;
    for (Var p : saved) {
      const std::size_t w = t.value(p.id).cols();
      if (t.requires_grad(p.id)) {
        Tensor gp({m, w});
        for (std::size_t i = 0; i < m; ++i) {
          for (std::size_t j = 0; j < w; ++j) gp.at(i, j) = g.at(i, off + j);
        }
        t.accumulate_grad(p.id, gp);
      }
      off += w;
    }
  });
}

Var Tape::block_diag(Var a, std::size_t blocks) {
  check_same_tape(a);
  const Tensor& v = a.value();
  const std::size_t d = v.rows();
  if (v.cols() != d) throw DimensionError("block_diag: block must be square");
  const std::size_t n = d * blocks;
  Tensor out({n, n});
  for (std::size_t h = 0; h < blocks; ++h) {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        out.at(h * d + i, h * d + j) = v.at(i, j);
      }
    }
  }
  return custom({a.id}, std::move(out), [a, d, blocks](Tape& t, std::size_t id) {
    if (!t.requires_grad(a.id)) return;
    const Tensor& g = t.grad(id);
    Tensor ga({d, d});
    for (std::size_t h = 0; h < blocks; ++h) {
      for (std::size_t i = 0; i < d; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          ga.at(i, j) += g.at(h * d + i, h * d + j);
        }
      }
    }
    t.accumulate_grad(a.id, ga);
  });
}

Var Tape::silu(Var a) {
  check_same_tape(a);
  Tensor out = sq::silu(a.value());
  return custom({a.id}, std::move(out), [a](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    const Tensor& x = t.value(a.id);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) {
      const float s = sigmoid_scalar(x[i]);
      ga[i] = g[i] * (s * (1.0f + x[i] * (1.0f - s)));
    }
    t.accumulate_grad(a.id, ga);
  });
}

Var Tape::softmax_rows(Var a) {
  check_same_tape(a);
  Tensor out = sq::softmax_rows(a.value());
  Tensor saved = out;
  return custom({a.id}, std::move(out), [a, saved](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    const std::size_t m = saved.rows(), n = saved.cols();
    Tensor ga({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      float dot = 0.0f;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * saved.at(i, j);
      for (std::size_t j = 0; j < n; ++j) {
        ga.at(i, j) = saved.at(i, j) * (g.at(i, j) - dot);
      }
    }
    t.accumulate_grad(a.id, ga);
  });
}

Var Tape::rmsnorm_rows(Var a, float eps) {
  check_same_tape(a);
  Tensor out = sq::rmsnorm_rows(a.value(), eps);
  return custom({a.id}, std::move(out), [a, eps](Tape& t, std::size_t id) {
    const Tensor& g = t.grad(id);
    const Tensor& x = t.value(a.id);
    const std::size_t m = x.rows(), n = x.cols();
    const float fn = static_cast<float>(n);
    Tensor ga({m, n});
    for (std::size_t i = 0; i < m; ++i) {
      float ss = 0.0f, xg = 0.0f;
      for (std::size_t j = 0; j < n; ++j) {
        ss += x.at(i, j) * x.at(i, j);
        xg += x.at(i, j) * g.at(i, j);
      }
      const float ms = ss / fn + eps;
      const float inv = 1.0f / std::sqrt(ms);
      const float inv3 = inv * inv * inv;
      for (std::size_t j = 0; j < n; ++j) {
        ga.at(i, j) = g.at(i, j) * inv - x.at(i, j) * xg * inv3 / fn;
      }
    }
    t.accumulate_grad(a.id, ga);
  });
}

Var Tape::sum(Var a) {
  check_same_tape(a);
  float s = 0.0f;
  const Tensor& v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i];
  return custom({a.id}, Tensor::scalar(s), [a](Tape& t, std::size_t id) {
    const float g = t.grad(id)[0];
    t.accumulate_grad(a.id, Tensor(t.value(a.id).shape(), g));
  });
}

Var Tape::sum_squares(Var a) {
  check_same_tape(a);
  float s = 0.0f;
  const Tensor& v = a.value();
  for (std::size_t i = 0; i < v.size(); ++i) s += v[i] * v[i];
  return custom({a.id}, Tensor::scalar(s), [a](Tape& t, std::size_t id) {
    const float g = t.grad(id)[0];
    const Tensor& x = t.value(a.id);
    Tensor ga(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) ga[i] = 2.0f * g * x[i];
    t.accumulate_grad(a.id, ga);
  });
}

Var Tape::mse(Var a, Var b) {
  check_same_tape(a);
  check_same_tape(b);
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (!va.same_shape(vb)) throw DimensionError("mse: shape mismatch");
  float s = 0.0f;
  for (std::size_t i = 0; i < va.size(); ++i) {
    const float d = va[i] - vb[i];
    s += d * d;
  }
  const float inv_n = 1.0f / static_cast<float>(va.size());
  return custom({a.id, b.id}, Tensor::scalar(s * inv_n),
                [a, b, inv_n](Tape& t, std::size_t id) {
    const float g = t.grad(id)[0];
    const Tensor& va = t.value(a.id);
    const Tensor& vb = t.value(b.id);
    if (t.requires_grad(a.id)) {
      Tensor ga(va.shape());
      for (std::size_t i = 0; i < va.size(); ++i) {
        ga[i] = 2.0f * g * inv_n * (va[i] - vb[i]);
      }
      t.accumulate_grad(a.id, ga);
    }
    if (t.requires_grad(b.id)) {
      Tensor gb(vb.shape());
      for (std::size_t i = 0; i < vb.size(); ++i) {
        gb[i] = -2.0f * g * inv_n * (va[i] - vb[i]);
      }
      t.accumulate_grad(b.id, gb);
    }
  });
}

}  // namespace sq::ad
