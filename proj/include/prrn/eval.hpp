#pragma once

/// Evaluation utilities: rotation-aligned 3D error, a rigid-factorization
/// baseline, and singular-value diagnostics of the stacked measurements.
///
/// The error metric aligns each predicted shape to its ground truth with an
/// orthogonal Procrustes solve over the full orthogonal group O(3).  The
/// aligning transform may therefore be a reflection; callers that care can
/// inspect the per-frame `reflected` flags in the report.  No scale is
/// estimated: predictions are expected in the same units as the ground truth.

#include <prrn/data.hpp>
#include <prrn/errors.hpp>
#include <prrn/mat.hpp>
#include <prrn/types.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

namespace prrn {

namespace detail {

/// Orthonormal basis completion: given `have` unit columns already stored in
/// u (3x3), fill the remaining columns so the result is a full orthonormal
/// basis.  Used when the cross-covariance is rank deficient and some left
/// singular vectors are undetermined.
inline void complete_basis_3(Mat& u, std::size_t have) {
  for (std::size_t j = have; j < 3; ++j) {
    if (j == 2) {
      // Cross product of the first two columns.
      u(0, 2) = u(1, 0) * u(2, 1) - u(2, 0) * u(1, 1);
      u(1, 2) = u(2, 0) * u(0, 1) - u(0, 0) * u(2, 1);
      u(2, 2) = u(0, 0) * u(1, 1) - u(1, 0) * u(0, 1);
      continue;
    }
    // Gram-Schmidt a standard basis vector against the existing columns,
    // picking the axis least aligned with them.
    std::size_t best_axis = 0;
    double best_residual = -1.0;
    for (std::size_t axis = 0; axis < 3; ++axis) {
      Mat cand(3, 1);
      cand(axis, 0) = 1.0;
      for (std::size_t k = 0; k < j; ++k) {
        double proj = 0.0;
        for (std::size_t r = 0; r < 3; ++r) proj += cand(r, 0) * u(r, k);
        for (std::size_t r = 0; r < 3; ++r) cand(r, 0) -= proj * u(r, k);
      }
      const double res = frobenius_norm(cand);
      if (res > best_residual) {
        best_residual = res;
        best_axis = axis;
      }
    }
    Mat cand(3, 1);
    cand(best_axis, 0) = 1.0;
    for (std::size_t k = 0; k < j; ++k) {
      double proj = 0.0;
      for (std::size_t r = 0; r < 3; ++r) proj += cand(r, 0) * u(r, k);
      for (std::size_t r = 0; r < 3; ++r) cand(r, 0) -= proj * u(r, k);
    }
    const double norm = frobenius_norm(cand);
    for (std::size_t r = 0; r < 3; ++r) u(r, j) = cand(r, 0) / norm;
  }
}

}  // namespace detail

struct ProcrustesResult {
  Mat rotation;    ///< 3x3 orthogonal matrix R minimizing ||gt - R*pred||_F.
  bool reflected;  ///< True when det(R) < 0 (best aligner is a reflection).
};

/// Solve min_R ||gt - R * pred||_F over the full orthogonal group.
///
/// Both shapes must be 3xP with matching P.  Throws numeric_error when either
/// shape is numerically zero (the alignment is then undefined).
inline ProcrustesResult procrustes_rotation(const Mat& pred, const Mat& gt) {
  if (pred.rows != 3 || gt.rows != 3)
    throw shape_error("procrustes_rotation: shapes must be 3xP, got " + shape_str(pred) + " and " +
                      shape_str(gt));
  if (pred.cols != gt.cols)
    throw shape_error("procrustes_rotation: point counts differ, " + shape_str(pred) + " vs " +
                      shape_str(gt));
  const double np = frobenius_norm(pred);
  const double ng = frobenius_norm(gt);
  if (np < 1e-12 || ng < 1e-12)
    throw numeric_error("procrustes_rotation: degenerate (near-zero) shape");

  // Aligning a shape to a bit-identical copy: the identity is the exact
  // optimum, so skip the factorization and its rounding entirely.
  if (pred.data == gt.data) return {Mat::identity(3), false};

  // Cross-covariance C = gt * pred^T, then its SVD via the 3x3 Gram matrix.
  Mat c(3, 3);
  acc_matmul_nt(c, gt, pred);
  Mat gram(3, 3);
  acc_matmul_tn(gram, c, c);
  Mat v;
  const std::vector<double> lam = symmetric_eigen(gram, &v);  // Descending.

  std::vector<double> sigma(3);
  for (std::size_t i = 0; i < 3; ++i) sigma[i] = std::sqrt(std::max(0.0, lam[i]));
  const double tol = 1e-12 * std::max(sigma[0], 1.0);

  // Left singular vectors u_i = C v_i / sigma_i where defined; complete the
  // basis for (near-)zero singular values.  Re-orthogonalize as we go so tiny
  // numeric drift in the computed u_i cannot compound.
  Mat u(3, 3);
  std::size_t have = 0;
  for (std::size_t i = 0; i < 3 && sigma[i] > tol; ++i, ++have) {
    Mat col(3, 1);
    for (std::size_t r = 0; r < 3; ++r)
      col(r, 0) = c(r, 0) * v(0, i) + c(r, 1) * v(1, i) + c(r, 2) * v(2, i);
    for (std::size_t k = 0; k < have; ++k) {
      double proj = 0.0;
      for (std::size_t r = 0; r < 3; ++r) proj += col(r, 0) * u(r, k);
      for (std::size_t r = 0; r < 3; ++r) col(r, 0) -= proj * u(r, k);
    }
    const double norm = frobenius_norm(col);
    if (norm < tol) break;  // Numerically dependent: treat as undetermined.
    for (std::size_t r = 0; r < 3; ++r) u(r, i) = col(r, 0) / norm;
  }
  detail::complete_basis_3(u, have);

  Mat r(3, 3);
  acc_matmul_nt(r, u, v);  // R = U * V^T.
  return ProcrustesResult{r, det3(r) < 0.0};
}

/// Apply the optimal aligner: returns R * pred.
inline Mat procrustes_align(const Mat& pred, const Mat& gt) {
  const ProcrustesResult res = procrustes_rotation(pred, gt);
  Mat out(3, pred.cols);
  acc_matmul(out, res.rotation, pred);
  return out;
}

struct EvalReport {
  std::vector<double> per_frame;  ///< Normalized aligned error per frame.
  std::vector<bool> reflected;    ///< Whether the best aligner reflected.
  double mean = 0.0;              ///< Mean of per_frame.
  std::size_t frames = 0;
};

/// Normalized mean 3D reconstruction error.
///
/// Each predicted shape is zero-centered, aligned to the (centered) ground
/// truth over O(3), and scored as ||S_gt - R*S_pred||_F / ||S_gt||_F.  The
/// report carries the per-frame errors and the mean.  No scale correction is
/// applied.  Throws numeric_error when a ground-truth shape has (near-)zero
/// norm, shape_error on count mismatches.
inline EvalReport e3d(const std::vector<Shape3D>& pred, const std::vector<Shape3D>& gt) {
  if (pred.size() != gt.size())
    throw shape_error("e3d: prediction/ground-truth frame counts differ (" +
                      std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + ")");
  if (pred.empty()) throw shape_error("e3d: no frames");

  EvalReport rep;
  rep.frames = pred.size();
  rep.per_frame.reserve(pred.size());
  rep.reflected.reserve(pred.size());
  double total = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    Mat p = pred[i].S;
    Mat g = gt[i].S;
    zero_center(p);
    zero_center(g);
    const double gnorm = frobenius_norm(g);
    if (gnorm < 1e-12)
      throw numeric_error("e3d: ground-truth shape for frame " + std::to_string(i) +
                          " is numerically zero");
    const ProcrustesResult pr = procrustes_rotation(p, g);
    Mat aligned(3, p.cols);
    acc_matmul(aligned, pr.rotation, p);
    const double err = frobenius_norm(sub(g, aligned)) / gnorm;
    rep.per_frame.push_back(err);
    rep.reflected.push_back(pr.reflected);
    total += err;
  }
  rep.mean = total / static_cast<double>(rep.frames);
  return rep;
}

inline nlohmann::json report_json(const EvalReport& rep) {
  nlohmann::json j;
  j["frames"] = rep.frames;
  j["mean_e3d"] = rep.mean;
  j["per_frame"] = rep.per_frame;
  std::vector<int> refl(rep.reflected.size());
  for (std::size_t i = 0; i < rep.reflected.size(); ++i) refl[i] = rep.reflected[i] ? 1 : 0;
  j["reflected"] = refl;
  return j;
}

inline void save_report(const EvalReport& rep, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("save_report: cannot open " + path + " for writing");
  out << report_json(rep).dump(2) << "\n";
}

struct RigidResult {
  Shape3D shape;                ///< Single rigid shape, 3xP, zero-centered.
  std::vector<Camera> cameras;  ///< One 2x3 camera per frame.
};

/// Rigid structure-from-motion baseline: rank-3 factorization of the stacked
/// measurement matrix followed by a metric upgrade enforcing orthonormal
/// camera rows.  Requires at least two fully visible frames.  Throws
/// numeric_error when the stack is effectively rank deficient (< 3), e.g. for
/// planar scenes or degenerate camera sets.
inline RigidResult rigid_factorize(const Dataset& ds) {
  const std::size_t f = ds.frames.size();
  if (f < 2) throw data_error("rigid_factorize: need at least 2 frames, got " + std::to_string(f));
  for (std::size_t i = 0; i < f; ++i)
    for (auto vis : ds.frames[i].mask)
      if (!vis)
        throw data_error("rigid_factorize: frame " + std::to_string(i) +
                         " has occluded points; the rigid baseline needs full visibility");

  const std::size_t p = static_cast<std::size_t>(ds.P);
  Mat w(2 * f, p);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t q = 0; q < p; ++q) {
      w(2 * i, q) = ds.frames[i].W(0, q);
      w(2 * i + 1, q) = ds.frames[i].W(1, q);
    }

  // Rank-3 truncation via the PxP Gram matrix: eigenvectors give the right
  // singular vectors directly.
  Mat gram(p, p);
  acc_matmul_tn(gram, w, w);
  Mat v;
  const std::vector<double> lam = symmetric_eigen(gram, &v);
  std::vector<double> sigma(p);
  for (std::size_t i = 0; i < p; ++i) sigma[i] = std::sqrt(std::max(0.0, lam[i]));
  // Relative threshold chosen above the sqrt(eps) noise floor of Gram-based
  // singular values; genuinely rank-3 scenes sit orders of magnitude higher.
  if (sigma[2] <= 1e-6 * std::max(sigma[0], 1e-300))
    throw numeric_error("rigid_factorize: stacked measurements are effectively rank < 3");

  Mat v3(p, 3);
  for (std::size_t r = 0; r < p; ++r)
    for (std::size_t cidx = 0; cidx < 3; ++cidx) v3(r, cidx) = v(r, cidx);
  Mat m_hat(2 * f, 3);
  acc_matmul(m_hat, w, v3);  // = U3 * Sigma3.
  Mat s_hat = transpose(v3);

  // Metric upgrade: find symmetric G (6 unknowns) with a^T G a = b^T G b = 1
  // and a^T G b = 0 for every camera row pair (a, b), in least squares via
  // the normal equations.
  auto constraint_row = [](const double* x, const double* y, double* row) {
    row[0] = x[0] * y[0];
    row[1] = x[0] * y[1] + x[1] * y[0];
    row[2] = x[0] * y[2] + x[2] * y[0];
    row[3] = x[1] * y[1];
    row[4] = x[1] * y[2] + x[2] * y[1];
    row[5] = x[2] * y[2];
  };
  Mat ata(6, 6);
  Mat atb(6, 1);
  for (std::size_t i = 0; i < f; ++i) {
    double a[3] = {m_hat(2 * i, 0), m_hat(2 * i, 1), m_hat(2 * i, 2)};
    double b[3] = {m_hat(2 * i + 1, 0), m_hat(2 * i + 1, 1), m_hat(2 * i + 1, 2)};
    double rows[3][6];
    constraint_row(a, a, rows[0]);
    constraint_row(b, b, rows[1]);
    constraint_row(a, b, rows[2]);
    const double rhs[3] = {1.0, 1.0, 0.0};
    for (int k = 0; k < 3; ++k)
      for (int r = 0; r < 6; ++r) {
        for (int c2 = 0; c2 < 6; ++c2) ata(r, c2) += rows[k][r] * rows[k][c2];
        atb(r, 0) += rows[k][r] * rhs[k];
      }
  }
  Mat gvec;
  try {
    gvec = solve_linear(ata, atb);
  } catch (const numeric_error&) {
    throw numeric_error("rigid_factorize: metric-upgrade system is singular");
  }
  Mat g(3, 3);
  g(0, 0) = gvec(0, 0);
  g(0, 1) = g(1, 0) = gvec(1, 0);
  g(0, 2) = g(2, 0) = gvec(2, 0);
  g(1, 1) = gvec(3, 0);
  g(1, 2) = g(2, 1) = gvec(4, 0);
  g(2, 2) = gvec(5, 0);

  // Factor G = Q Q^T: Cholesky when G is positive definite, otherwise clip
  // eigenvalues and take the symmetric square root.
  Mat q(3, 3);
  if (!cholesky(g, q)) {
    Mat evec;
    const std::vector<double> ev = symmetric_eigen(g, &evec);
    const double clip = 1e-12 * std::max(std::abs(ev[0]), 1.0);
    Mat scaled_evec = evec;
    for (std::size_t cidx = 0; cidx < 3; ++cidx) {
      const double s = std::sqrt(std::max(ev[cidx], clip));
      for (std::size_t r = 0; r < 3; ++r) scaled_evec(r, cidx) *= s;
    }
    q = scaled_evec;  // Q = V * sqrt(clip(Lambda)); Q Q^T approximates G.
  }

  Mat m(2 * f, 3);
  acc_matmul(m, m_hat, q);
  Mat s;
  try {
    s = solve_linear(q, s_hat);  // S = Q^{-1} * S_hat.
  } catch (const numeric_error&) {
    throw numeric_error("rigid_factorize: metric-upgrade factor is singular");
  }

  RigidResult out;
  out.shape.S = std::move(s);
  out.cameras.reserve(f);
  for (std::size_t i = 0; i < f; ++i) {
    Camera cam;
    cam.M = Mat(2, 3);
    for (std::size_t cidx = 0; cidx < 3; ++cidx) {
      cam.M(0, cidx) = m(2 * i, cidx);
      cam.M(1, cidx) = m(2 * i + 1, cidx);
    }
    out.cameras.push_back(std::move(cam));
  }
  return out;
}

struct RankProfile {
  std::vector<double> top;  ///< Leading singular values (at most 8).
  double sigma43 = 0.0;     ///< sigma_4 / sigma_3 (0 when undefined).
};

/// Singular-value diagnostics of the stacked 2FxP measurement matrix.  A
/// small sigma_4/sigma_3 indicates near-rigid data.
inline RankProfile rank_profile(const Dataset& ds) {
  if (ds.frames.empty()) throw data_error("rank_profile: empty dataset");
  const std::size_t f = ds.frames.size();
  const std::size_t p = static_cast<std::size_t>(ds.P);
  Mat w(2 * f, p);
  for (std::size_t i = 0; i < f; ++i)
    for (std::size_t q = 0; q < p; ++q) {
      w(2 * i, q) = ds.frames[i].W(0, q);
      w(2 * i + 1, q) = ds.frames[i].W(1, q);
    }
  const std::vector<double> sv = singular_values(w);
  RankProfile out;
  const std::size_t keep = std::min<std::size_t>(8, sv.size());
  out.top.assign(sv.begin(), sv.begin() + static_cast<std::ptrdiff_t>(keep));
  if (sv.size() >= 4 && sv[2] > 0.0) out.sigma43 = sv[3] / sv[2];
  return out;
}

}  // namespace prrn
