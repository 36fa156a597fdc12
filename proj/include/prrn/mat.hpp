#pragma once

// Dense double-precision matrices (row-major) plus the small-matrix numerics
// the rest of the library is built on: symmetric Jacobi eigendecomposition,
// Gaussian elimination, Cholesky, and a closed-form SVD of 2x3 matrices via
// the eigendecomposition of their 2x2 Gram matrix.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <string>
#include <utility>
#include <vector>

#include "prrn/errors.hpp"

namespace prrn {

struct Mat {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;  // row-major, rows*cols entries

  Mat() = default;
  Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Mat(std::size_t r, std::size_t c, std::vector<double> d)
      : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != rows * cols) throw shape_error("Mat: data length does not match rows*cols");
  }
  Mat(std::initializer_list<std::initializer_list<double>> init) {
    rows = init.size();
    cols = rows ? init.begin()->size() : 0;
    data.reserve(rows * cols);
    for (const auto& r : init) {
      if (r.size() != cols) throw shape_error("Mat: ragged initializer");
      data.insert(data.end(), r.begin(), r.end());
    }
  }

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

  std::size_t size() const { return data.size(); }
  bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }

  static Mat identity(std::size_t n) {
    Mat m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }
  static Mat filled(std::size_t r, std::size_t c, double v) {
    Mat m(r, c);
    std::fill(m.data.begin(), m.data.end(), v);
    return m;
  }
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows) + "x" + std::to_string(m.cols);
}

inline void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (!a.same_shape(b))
    throw shape_error(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols != b.rows)
    throw shape_error("matmul: inner dimensions disagree " + shape_str(a) + " * " + shape_str(b));
  Mat out(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &out.data[i * b.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
  return out;
}

/// into += a * b
inline void acc_matmul(Mat& into, const Mat& a, const Mat& b) {
  if (a.cols != b.rows || into.rows != a.rows || into.cols != b.cols)
    throw shape_error("acc_matmul: shape mismatch");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &into.data[i * into.cols];
    for (std::size_t k = 0; k < a.cols; ++k) {
      const double aik = arow[k];
      const double* brow = &b.data[k * b.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aik * brow[j];
    }
  }
}

/// into += a * b^T
inline void acc_matmul_nt(Mat& into, const Mat& a, const Mat& b) {
  if (a.cols != b.cols || into.rows != a.rows || into.cols != b.rows)
    throw shape_error("acc_matmul_nt: shape mismatch");
  for (std::size_t i = 0; i < a.rows; ++i) {
    const double* arow = &a.data[i * a.cols];
    double* orow = &into.data[i * into.cols];
    for (std::size_t j = 0; j < b.rows; ++j) {
      const double* brow = &b.data[j * b.cols];
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols; ++k) acc += arow[k] * brow[k];
      orow[j] += acc;
    }
  }
}

/// into += a^T * b
inline void acc_matmul_tn(Mat& into, const Mat& a, const Mat& b) {
  if (a.rows != b.rows || into.rows != a.cols || into.cols != b.cols)
    throw shape_error("acc_matmul_tn: shape mismatch");
  for (std::size_t k = 0; k < a.rows; ++k) {
    const double* arow = &a.data[k * a.cols];
    const double* brow = &b.data[k * b.cols];
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double aki = arow[i];
      double* orow = &into.data[i * into.cols];
      for (std::size_t j = 0; j < b.cols; ++j) orow[j] += aki * brow[j];
    }
  }
}

inline Mat transpose(const Mat& a) {
  Mat out(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j) out(j, i) = a(i, j);
  return out;
}

inline Mat add(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "add");
  Mat out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
  return out;
}

inline Mat sub(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "sub");
  Mat out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
  return out;
}

inline Mat scaled(const Mat& a, double c) {
  Mat out = a;
  for (double& v : out.data) v *= c;
  return out;
}

inline void add_inplace(Mat& a, const Mat& b) {
  require_same_shape(a, b, "add_inplace");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += b.data[i];
}

/// a += c * b
inline void axpy(Mat& a, double c, const Mat& b) {
  require_same_shape(a, b, "axpy");
  for (std::size_t i = 0; i < a.size(); ++i) a.data[i] += c * b.data[i];
}

inline Mat hadamard(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "hadamard");
  Mat out = a;
  for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
  return out;
}

/// Reinterpret the row-major buffer with a new shape of equal size.
inline Mat reshaped(const Mat& a, std::size_t r, std::size_t c) {
  if (r * c != a.size())
    throw shape_error("reshaped: size mismatch " + shape_str(a) + " -> " + std::to_string(r) +
                      "x" + std::to_string(c));
  Mat out = a;
  out.rows = r;
  out.cols = c;
  return out;
}

inline double dot_flat(const Mat& a, const Mat& b) {
  require_same_shape(a, b, "dot_flat");
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a.data[i] * b.data[i];
  return acc;
}

inline double frobenius_norm(const Mat& a) { return std::sqrt(dot_flat(a, a)); }

inline double det3(const Mat& m) {
  if (m.rows != 3 || m.cols != 3) throw shape_error("det3: expected 3x3, got " + shape_str(m));
  return m(0, 0) * (m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1)) -
         m(0, 1) * (m(1, 0) * m(2, 2) - m(1, 2) * m(2, 0)) +
         m(0, 2) * (m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0));
}

// ---------------------------------------------------------------------------
// Symmetric eigendecomposition (cyclic Jacobi).
// ---------------------------------------------------------------------------

/// Eigenvalues of a symmetric matrix in descending order. When `eigenvectors`
/// is non-null it receives the matching orthonormal eigenvectors as columns.
inline std::vector<double> symmetric_eigen(const Mat& A, Mat* eigenvectors = nullptr) {
  const std::size_t n = A.rows;
  if (A.cols != n) throw shape_error("symmetric_eigen: expected square, got " + shape_str(A));
  Mat a = A;
  Mat v = Mat::identity(n);
  const double scale = frobenius_norm(A);

  for (int sweep = 0; sweep < 128; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (std::sqrt(2.0 * off) <= 1e-15 * (scale + 1e-300)) break;

    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-18 * (scale + 1e-300)) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        // rows/columns p and q of a (keeping symmetry), columns of v
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  std::vector<double> diag(n);
  for (std::size_t i = 0; i < n; ++i) diag[i] = a(i, i);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return diag[x] > diag[y]; });

  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = diag[order[i]];
  if (eigenvectors) {
    *eigenvectors = Mat(n, n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t i = 0; i < n; ++i) (*eigenvectors)(i, j) = v(i, order[j]);
  }
  return eig;
}

/// Singular values of an arbitrary matrix in descending order, computed from
/// the Gram matrix of its smaller side.
inline std::vector<double> singular_values(const Mat& X) {
  const bool tall = X.rows >= X.cols;
  const std::size_t n = tall ? X.cols : X.rows;
  Mat g(n, n);
  if (tall)
    acc_matmul_tn(g, X, X);  // X^T X
  else
    acc_matmul_nt(g, X, X);  // X X^T
  std::vector<double> eig = symmetric_eigen(g);
  for (double& v : eig) v = std::sqrt(std::max(v, 0.0));
  return eig;
}

// ---------------------------------------------------------------------------
// Linear solves.
// ---------------------------------------------------------------------------

/// Solve A X = B by Gaussian elimination with partial pivoting.
inline Mat solve_linear(Mat a, Mat b) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw shape_error("solve_linear: A must be square, got " + shape_str(a));
  if (b.rows != n) throw shape_error("solve_linear: B row count must match A");
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t piv = col;
    for (std::size_t r = col + 1; r < n; ++r)
      if (std::abs(a(r, col)) > std::abs(a(piv, col))) piv = r;
    if (std::abs(a(piv, col)) < 1e-300) throw numeric_error("solve_linear: singular matrix");
    if (piv != col) {
      for (std::size_t j = 0; j < n; ++j) std::swap(a(col, j), a(piv, j));
      for (std::size_t j = 0; j < b.cols; ++j) std::swap(b(col, j), b(piv, j));
    }
    const double d = a(col, col);
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = a(r, col) / d;
      if (f == 0.0) continue;
      for (std::size_t j = col; j < n; ++j) a(r, j) -= f * a(col, j);
      for (std::size_t j = 0; j < b.cols; ++j) b(r, j) -= f * b(col, j);
    }
  }
  Mat x(n, b.cols);
  for (std::size_t r = n; r-- > 0;) {
    for (std::size_t j = 0; j < b.cols; ++j) {
      double acc = b(r, j);
      for (std::size_t k = r + 1; k < n; ++k) acc -= a(r, k) * x(k, j);
      x(r, j) = acc / a(r, r);
    }
  }
  return x;
}

/// Cholesky factorization A = L L^T. Returns false when A is not positive
/// definite (L is then unspecified).
inline bool cholesky(const Mat& a, Mat& l) {
  const std::size_t n = a.rows;
  if (a.cols != n) throw shape_error("cholesky: expected square, got " + shape_str(a));
  l = Mat(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double acc = a(i, j);
      for (std::size_t k = 0; k < j; ++k) acc -= l(i, k) * l(j, k);
      if (i == j) {
        if (acc <= 0.0) return false;
        l(i, i) = std::sqrt(acc);
      } else {
        l(i, j) = acc / l(j, j);
      }
    }
  }
  return true;
}

// ---------------------------------------------------------------------------
// Closed-form SVD of a 2x3 matrix.
// ---------------------------------------------------------------------------

struct Svd2x3 {
  Mat u;      // 2x2 orthogonal, columns are left singular vectors
  double s1;  // larger singular value
  double s2;  // smaller singular value
  Mat v;      // 3x2, orthonormal columns (right singular vectors)
};

/// SVD of a 2x3 matrix through the eigendecomposition of the 2x2 Gram matrix
/// A A^T. The right singular vectors are re-orthonormalized with one
/// Gram-Schmidt pass so that u * v^T has orthonormal rows to machine
/// precision even for poorly conditioned inputs.
inline Svd2x3 svd_2x3(const Mat& m) {
  if (m.rows != 2 || m.cols != 3) throw shape_error("svd_2x3: expected 2x3, got " + shape_str(m));
  const double a = m(0, 0) * m(0, 0) + m(0, 1) * m(0, 1) + m(0, 2) * m(0, 2);
  const double b = m(0, 0) * m(1, 0) + m(0, 1) * m(1, 1) + m(0, 2) * m(1, 2);
  const double c = m(1, 0) * m(1, 0) + m(1, 1) * m(1, 1) + m(1, 2) * m(1, 2);

  const double phi = 0.5 * std::atan2(2.0 * b, a - c);
  double cp = std::cos(phi), sp = std::sin(phi);
  double l1 = a * cp * cp + 2.0 * b * cp * sp + c * sp * sp;
  double l2 = a * sp * sp - 2.0 * b * cp * sp + c * cp * cp;
  // order eigenpairs descending; u1 = (cp, sp), u2 = (-sp, cp)
  double u1x = cp, u1y = sp, u2x = -sp, u2y = cp;
  if (l1 < l2) {
    std::swap(l1, l2);
    std::swap(u1x, u2x);
    std::swap(u1y, u2y);
  }

  Svd2x3 out;
  out.s1 = std::sqrt(std::max(l1, 0.0));
  out.s2 = std::sqrt(std::max(l2, 0.0));
  out.u = Mat{{u1x, u2x}, {u1y, u2y}};

  out.v = Mat(3, 2);
  const double inv1 = out.s1 > 0.0 ? 1.0 / out.s1 : 0.0;
  const double inv2 = out.s2 > 0.0 ? 1.0 / out.s2 : 0.0;
  for (std::size_t j = 0; j < 3; ++j) {
    out.v(j, 0) = (m(0, j) * u1x + m(1, j) * u1y) * inv1;
    out.v(j, 1) = (m(0, j) * u2x + m(1, j) * u2y) * inv2;
  }
  // Gram-Schmidt touch-up of the right singular vectors.
  double n1 = std::sqrt(out.v(0, 0) * out.v(0, 0) + out.v(1, 0) * out.v(1, 0) +
                        out.v(2, 0) * out.v(2, 0));
  if (n1 > 0.0)
    for (std::size_t j = 0; j < 3; ++j) out.v(j, 0) /= n1;
  double d = out.v(0, 0) * out.v(0, 1) + out.v(1, 0) * out.v(1, 1) + out.v(2, 0) * out.v(2, 1);
  for (std::size_t j = 0; j < 3; ++j) out.v(j, 1) -= d * out.v(j, 0);
  double n2 = std::sqrt(out.v(0, 1) * out.v(0, 1) + out.v(1, 1) * out.v(1, 1) +
                        out.v(2, 1) * out.v(2, 1));
  if (n2 > 0.0)
    for (std::size_t j = 0; j < 3; ++j) out.v(j, 1) /= n2;
  return out;
}

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& s) {
  s += 0x9e3779b97f4a7c15ull;
  std::uint64_t z = s;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

/// Deterministic zero-mean gaussian derived from the bytes of `m`; used by
/// the degenerate-SVD retry so that identical inputs perturb identically.
inline Mat hashed_gaussian_like(const Mat& m) {
  std::uint64_t seed = 0xcbf29ce484222325ull;
  for (double x : m.data) {
    std::uint64_t bits;
    std::memcpy(&bits, &x, sizeof bits);
    seed = (seed ^ bits) * 0x100000001b3ull;
  }
  Mat out(m.rows, m.cols);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double u1 = (double)(splitmix64(seed) >> 11) * 0x1.0p-53;
    const double u2 = (double)(splitmix64(seed) >> 11) * 0x1.0p-53;
    out.data[i] = std::sqrt(-2.0 * std::log(1.0 - u1)) * std::cos(6.283185307179586 * u2);
  }
  return out;
}

}  // namespace detail

inline constexpr double kSvdSigmaEps = 1e-8;  // smallest usable singular value
inline constexpr double kSvdGapEps = 1e-8;    // smallest usable singular-value gap

inline bool svd_2x3_degenerate(const Svd2x3& f) {
  return f.s2 <= kSvdSigmaEps || (f.s1 - f.s2) <= kSvdGapEps;
}

/// SVD of a 2x3 matrix with the shared degeneracy policy: if the singular
/// values are too small or too close, perturb the input once by 1e-6 gaussian
/// noise (derived deterministically from the input) and retry; if still
/// degenerate, raise. `used` receives the matrix the factorization refers to.
inline Svd2x3 svd_2x3_checked(const Mat& m, Mat* used = nullptr) {
  Svd2x3 f = svd_2x3(m);
  if (!svd_2x3_degenerate(f)) {
    if (used) *used = m;
    return f;
  }
  Mat retry = m;
  axpy(retry, 1e-6, detail::hashed_gaussian_like(m));
  f = svd_2x3(retry);
  if (!svd_2x3_degenerate(f)) {
    if (used) *used = std::move(retry);
    return f;
  }
  throw numeric_error("svd_2x3: degenerate singular values (s1=" + std::to_string(f.s1) +
                      ", s2=" + std::to_string(f.s2) + ")");
}

/// Nearest matrix with orthonormal rows (u * v^T of the SVD), with the
/// degeneracy policy above.
inline Mat orthonormalize_rows_2x3(const Mat& m) {
  const Svd2x3 f = svd_2x3_checked(m);
  Mat out(2, 3);
  acc_matmul_nt(out, f.u, f.v);
  return out;
}

}  // namespace prrn
