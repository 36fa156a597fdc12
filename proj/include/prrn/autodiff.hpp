#pragma once

// Reverse-mode automatic differentiation over dense double matrices. A Tape
// owns the computation graph; nodes are created in topological order, so the
// backward pass is a single reverse scan with a fixed, deterministic
// accumulation order. Gradients accumulate until reset_grads() is called.

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <utility>
#include <vector>

#include "prrn/errors.hpp"
#include "prrn/mat.hpp"

namespace prrn::ad {

struct Node {
  std::uint32_t idx = std::numeric_limits<std::uint32_t>::max();
  bool valid() const { return idx != std::numeric_limits<std::uint32_t>::max(); }
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// A differentiable input (parameters, anchors). Leaves have no parents;
  /// their gradient is read back after backward().
  Node leaf(Mat value) { return push(std::move(value), nullptr); }

  /// A fixed input that participates in the graph but whose gradient is
  /// never consumed. Identical to leaf(); the distinction is documentation.
  Node constant(Mat value) { return push(std::move(value), nullptr); }

  const Mat& value(Node n) const { return recs_[n.idx].value; }
  const Mat& grad(Node n) const { return recs_[n.idx].grad; }

  double scalar(Node n) const {
    const Mat& v = value(n);
    if (v.rows != 1 || v.cols != 1) throw shape_error("scalar: node is " + shape_str(v));
    return v.data[0];
  }

  void reset_grads() {
    for (auto& r : recs_) std::fill(r.grad.data.begin(), r.grad.data.end(), 0.0);
  }

  /// Seed d(loss)/d(loss) = 1 and sweep the tape in reverse creation order.
  /// Each call propagates through pass-local adjoints and then adds them to
  /// the stored gradients, so repeated calls without reset_grads() accumulate
  /// one clean contribution per call.
  void run_backward(Node loss) {
    const Mat& v = value(loss);
    if (v.rows != 1 || v.cols != 1)
      throw shape_error("backward: loss must be 1x1, got " + shape_str(v));
    std::vector<Mat> adj(loss.idx + 1);
    for (std::uint32_t i = 0; i <= loss.idx; ++i)
      adj[i] = Mat(recs_[i].value.rows, recs_[i].value.cols);
    adj_ = &adj;
    adj[loss.idx](0, 0) = 1.0;
    for (std::uint32_t i = loss.idx + 1; i-- > 0;) {
      if (recs_[i].back) recs_[i].back(*this, i);
    }
    adj_ = nullptr;
    for (std::uint32_t i = 0; i <= loss.idx; ++i) add_inplace(recs_[i].grad, adj[i]);
  }

  std::size_t size() const { return recs_.size(); }

  // -- plumbing for op implementations --
  using BackFn = std::function<void(Tape&, std::uint32_t)>;
  Node push(Mat value, BackFn back) {
    Rec r;
    r.grad = Mat(value.rows, value.cols);
    r.value = std::move(value);
    r.back = std::move(back);
    recs_.push_back(std::move(r));
    return Node{(std::uint32_t)(recs_.size() - 1)};
  }
  // During a backward sweep these resolve to the pass-local adjoints.
  Mat& grad_mut(Node n) { return grad_mut(n.idx); }
  Mat& grad_mut(std::uint32_t i) { return adj_ ? (*adj_)[i] : recs_[i].grad; }
  const Mat& value_at(std::uint32_t i) const { return recs_[i].value; }
  const Mat& grad_at(std::uint32_t i) const { return adj_ ? (*adj_)[i] : recs_[i].grad; }

 private:
  struct Rec {
    Mat value;
    Mat grad;
    BackFn back;
  };
  std::vector<Rec> recs_;
  std::vector<Mat>* adj_ = nullptr;
};

inline void backward(Tape& t, Node loss) { t.run_backward(loss); }

// ---------------------------------------------------------------------------
// Ops. Each checks shapes up front and registers a closure that accumulates
// into its parents' gradients.
// ---------------------------------------------------------------------------

inline Node matmul(Tape& t, Node a, Node b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.cols != bv.rows)
    throw shape_error("matmul: inner dimensions disagree " + shape_str(av) + " * " +
                      shape_str(bv));
  Mat out(av.rows, bv.cols);
  acc_matmul(out, av, bv);
  const std::uint32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    acc_matmul_nt(tp.grad_mut(ai), g, tp.value_at(bi));  // dA += g * B^T
    acc_matmul_tn(tp.grad_mut(bi), tp.value_at(ai), g);  // dB += A^T * g
  });
}

inline Node add(Tape& t, Node a, Node b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  require_same_shape(av, bv, "add");
  Mat out = av;
  add_inplace(out, bv);
  const std::uint32_t ai = a.idx, bi = b.idx;
  return t.push(std::move(out), [ai, bi](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    add_inplace(tp.grad_mut(ai), g);
    add_inplace(tp.grad_mut(bi), g);
  });
}

inline Node scale(Tape& t, Node a, double c) {
  Mat out = scaled(t.value(a), c);
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, c](Tape& tp, std::uint32_t self) {
    axpy(tp.grad_mut(ai), c, tp.grad_at(self));
  });
}

inline Node sub(Tape& t, Node a, Node b) { return add(t, a, scale(t, b, -1.0)); }

/// Elementwise x >= 0 ? x : slope * x. Slope must lie in (0, 1).
inline Node leaky_relu(Tape& t, Node a, double slope) {
  if (!(slope > 0.0 && slope < 1.0))
    throw numeric_error("leaky_relu: slope must lie in (0, 1), got " + std::to_string(slope));
  const Mat& av = t.value(a);
  Mat out = av;
  for (double& v : out.data) v = v > 0.0 ? v : slope * v;
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, slope](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    const Mat& x = tp.value_at(ai);
    Mat& gx = tp.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i)
      gx.data[i] += g.data[i] * (x.data[i] > 0.0 ? 1.0 : slope);
  });
}

/// x / ||x||_2 for a column vector. Requires ||x|| > 1e-12.
inline Node l2_normalize(Tape& t, Node a) {
  const Mat& av = t.value(a);
  if (av.cols != 1) throw shape_error("l2_normalize: expected column vector, got " + shape_str(av));
  const double n = frobenius_norm(av);
  if (n <= 1e-12) throw numeric_error("l2_normalize: vanishing norm");
  Mat out = scaled(av, 1.0 / n);
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, n](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    const Mat& x = tp.value_at(ai);
    const double xg = dot_flat(x, g);
    Mat& gx = tp.grad_mut(ai);
    const double inv = 1.0 / n;
    const double inv3 = inv * inv * inv;
    for (std::size_t i = 0; i < g.size(); ++i)
      gx.data[i] += g.data[i] * inv - x.data[i] * xg * inv3;
  });
}

/// Frobenius norm as a 1x1 node. Gradient at the origin is defined as zero.
inline Node frobenius(Tape& t, Node a) {
  const double n = frobenius_norm(t.value(a));
  Mat out(1, 1);
  out(0, 0) = n;
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, n](Tape& tp, std::uint32_t self) {
    if (n <= 1e-12) return;
    const double g = tp.grad_at(self)(0, 0);
    axpy(tp.grad_mut(ai), g / n, tp.value_at(ai));
  });
}

/// log(sum(exp(x_i))) of a column vector, computed with the max-shift trick.
inline Node logsumexp(Tape& t, Node a) {
  const Mat& av = t.value(a);
  if (av.cols != 1 || av.rows == 0)
    throw shape_error("logsumexp: expected nonempty column vector, got " + shape_str(av));
  double m = av.data[0];
  for (double v : av.data) m = std::max(m, v);
  double acc = 0.0;
  for (double v : av.data) acc += std::exp(v - m);
  Mat out(1, 1);
  out(0, 0) = m + std::log(acc);
  const std::uint32_t ai = a.idx;
  const double lse = out(0, 0);
  return t.push(std::move(out), [ai, lse](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_at(self)(0, 0);
    const Mat& x = tp.value_at(ai);
    Mat& gx = tp.grad_mut(ai);
    for (std::size_t i = 0; i < x.size(); ++i) gx.data[i] += g * std::exp(x.data[i] - lse);
  });
}

/// Row-major reinterpretation with a new shape of equal size.
inline Node reshape(Tape& t, Node a, std::size_t rows, std::size_t cols) {
  Mat out = reshaped(t.value(a), rows, cols);
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    Mat& gx = tp.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i];
  });
}

/// Elementwise product with a fixed matrix (used for visibility masking).
inline Node mask_elems(Tape& t, Node a, Mat m) {
  const Mat& av = t.value(a);
  require_same_shape(av, m, "mask_elems");
  Mat out = hadamard(av, m);
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, m = std::move(m)](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    Mat& gx = tp.grad_mut(ai);
    for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += g.data[i] * m.data[i];
  });
}

/// Nearest matrix with orthonormal rows for a 2x3 input, u * v^T of its SVD.
/// Degenerate inputs (smallest singular value or the gap below 1e-8) are
/// perturbed once by 1e-6 deterministic gaussian noise and retried; if still
/// degenerate the op raises. After a retry, value and gradient refer to the
/// perturbed matrix.
///
/// Backward: with A = U diag(s1,s2) V^T and Y = U V^T,
///   dY = ((P12 - P21)/(s1+s2)) * U J V^T + U diag(1/s) U^T dA (I - V V^T),
/// where P = U^T dA V and J = [[0,1],[-1,0]]; the 1/(s1^2 - s2^2) factors of
/// the individual SVD-factor derivatives cancel in the product.
inline Node svd_orthogonalize(Tape& t, Node a) {
  const Mat& av = t.value(a);
  if (av.rows != 2 || av.cols != 3)
    throw shape_error("svd_orthogonalize: expected 2x3, got " + shape_str(av));
  Svd2x3 f = svd_2x3_checked(av);
  Mat out(2, 3);
  acc_matmul_nt(out, f.u, f.v);
  const std::uint32_t ai = a.idx;
  return t.push(std::move(out), [ai, f = std::move(f)](Tape& tp, std::uint32_t self) {
    const Mat& g = tp.grad_at(self);
    // K = U J V^T
    Mat uj(2, 2);
    uj(0, 0) = -f.u(0, 1);
    uj(0, 1) = f.u(0, 0);
    uj(1, 0) = -f.u(1, 1);
    uj(1, 1) = f.u(1, 0);
    Mat k(2, 3);
    acc_matmul_nt(k, uj, f.v);
    const double alpha = dot_flat(g, k) / (f.s1 + f.s2);

    // B = U diag(1/s) U^T
    Mat us(2, 2);
    us(0, 0) = f.u(0, 0) / f.s1;
    us(0, 1) = f.u(0, 1) / f.s2;
    us(1, 0) = f.u(1, 0) / f.s1;
    us(1, 1) = f.u(1, 1) / f.s2;
    Mat b(2, 2);
    acc_matmul_nt(b, us, f.u);

    // C = I - V V^T
    Mat c = Mat::identity(3);
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j)
        c(i, j) -= f.v(i, 0) * f.v(j, 0) + f.v(i, 1) * f.v(j, 1);

    Mat bg(2, 3);
    acc_matmul(bg, b, g);
    Mat& gx = tp.grad_mut(ai);
    acc_matmul(gx, bg, c);
    axpy(gx, alpha, k);
  });
}

/// Left-to-right sum of same-shaped nodes.
inline Node sum_nodes(Tape& t, const std::vector<Node>& nodes) {
  if (nodes.empty()) throw shape_error("sum_nodes: empty list");
  Node acc = nodes[0];
  for (std::size_t i = 1; i < nodes.size(); ++i) acc = add(t, acc, nodes[i]);
  return acc;
}

}  // namespace prrn::ad
