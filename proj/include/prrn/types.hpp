#pragma once

// Core domain types: a 2D observation of P keypoints with a visibility mask,
// a 3D shape, and an orthographic camera (the first two rows of a rotation).

#include <cstdint>
#include <string>
#include <vector>

#include "prrn/errors.hpp"
#include "prrn/mat.hpp"

namespace prrn {

/// Tolerance for the zero-centering invariant: over visible points each
/// coordinate row must sum to zero within this bound.
inline constexpr double kCenteringTol = 1e-9;

/// One frame of 2D keypoints. W is 2xP (x row, y row); mask[j] says whether
/// point j was observed. Invariants: masked entries of W are exactly zero and
/// each row of W sums to ~zero over the visible points.
struct Frame2D {
  Mat W;                           // 2xP
  std::vector<std::uint8_t> mask;  // P entries, nonzero = visible
  int index = 0;                   // position of the frame in its sequence

  std::size_t points() const { return W.cols; }
  std::size_t visible_count() const {
    std::size_t n = 0;
    for (auto m : mask) n += m ? 1 : 0;
    return n;
  }
};

struct Shape3D {
  Mat S;  // 3xP
};

/// Orthographic camera: 2x3 with orthonormal rows.
struct Camera {
  Mat M;  // 2x3
};

/// Subtract the per-row mean over visible points; masked entries are zeroed.
inline void zero_center(Mat& w, const std::vector<std::uint8_t>& mask) {
  if (w.cols != mask.size()) throw shape_error("zero_center: mask length must equal columns");
  std::size_t vis = 0;
  for (auto m : mask) vis += m ? 1 : 0;
  for (std::size_t i = 0; i < w.rows; ++i) {
    double mean = 0.0;
    if (vis > 0) {
      for (std::size_t j = 0; j < w.cols; ++j)
        if (mask[j]) mean += w(i, j);
      mean /= (double)vis;
    }
    for (std::size_t j = 0; j < w.cols; ++j) w(i, j) = mask[j] ? w(i, j) - mean : 0.0;
  }
}

inline void zero_center(Mat& s) {
  for (std::size_t i = 0; i < s.rows; ++i) {
    double mean = 0.0;
    for (std::size_t j = 0; j < s.cols; ++j) mean += s(i, j);
    mean /= (double)s.cols;
    for (std::size_t j = 0; j < s.cols; ++j) s(i, j) -= mean;
  }
}

/// Whether each row of W sums to zero over visible points within `tol`, with
/// masked entries exactly zero.
inline bool is_zero_centered(const Mat& w, const std::vector<std::uint8_t>& mask,
                             double tol = kCenteringTol) {
  if (w.cols != mask.size()) return false;
  for (std::size_t i = 0; i < w.rows; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < w.cols; ++j) {
      if (mask[j])
        sum += w(i, j);
      else if (w(i, j) != 0.0)
        return false;
    }
    if (std::abs(sum) > tol) return false;
  }
  return true;
}

/// Build a frame that satisfies the centering invariant. Already-centered
/// input is passed through bit-exactly; off-center input is re-centered.
inline Frame2D make_frame(Mat w, std::vector<std::uint8_t> mask, int index) {
  if (w.rows != 2) throw shape_error("make_frame: W must be 2xP, got " + shape_str(w));
  if (mask.size() != w.cols) throw shape_error("make_frame: mask length must equal P");
  if (!is_zero_centered(w, mask)) zero_center(w, mask);
  return Frame2D{std::move(w), std::move(mask), index};
}

inline Frame2D make_frame(Mat w, int index) {
  std::vector<std::uint8_t> mask(w.cols, 1);
  return make_frame(std::move(w), std::move(mask), index);
}

}  // namespace prrn
