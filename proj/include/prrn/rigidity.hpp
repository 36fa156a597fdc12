#pragma once

// Pairwise rigidity measurement, the FIFO memory bank of shape
// representations, and positive/negative pair-set construction.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <string>
#include <vector>

#include "prrn/errors.hpp"
#include "prrn/mat.hpp"
#include "prrn/types.hpp"

namespace prrn {

/// How far a banked representation's norm may drift from 1 before a push is
/// rejected as a contract violation.
inline constexpr double kUnitNormTol = 1e-6;

/// Cutoffs on the rigidity measure: pairs strictly below tau count as
/// positives, pairs strictly above xi as negatives; the gap in between
/// belongs to neither set.
struct RigidityThresholds {
  double tau = 0.02;
  double xi = 0.04;

  void validate() const {
    if (!(0.0 <= tau && tau < xi && xi <= 0.25))
      throw data_error("rigidity thresholds require 0 <= tau < xi <= 0.25, got tau=" +
                       std::to_string(tau) + " xi=" + std::to_string(xi));
  }
};

/// Minimal singular-value ratio of two stacked frames: gather the columns
/// visible in both, re-center each of the four coordinate rows over that
/// common subset (each frame's own centering was taken over a different
/// visible set), stack into a 4xP' matrix A, and return s4^2 / sum(s^2) of
/// its singular values. Two views of one rigid shape give a rank <= 3 stack
/// and hence ~0; the ceiling 0.25 means four equal singular values.
inline double msr(const Frame2D& wi, const Frame2D& wj) {
  if (wi.points() != wj.points())
    throw shape_error("msr: frames disagree on point count (" + std::to_string(wi.points()) +
                      " vs " + std::to_string(wj.points()) + ")");
  std::vector<std::size_t> common;
  for (std::size_t p = 0; p < wi.points(); ++p)
    if (wi.mask[p] && wj.mask[p]) common.push_back(p);
  if (common.size() < 4)
    throw overlap_error("msr: needs at least 4 common visible points, got " +
                        std::to_string(common.size()));

  Mat a(4, common.size());
  for (std::size_t c = 0; c < common.size(); ++c) {
    a(0, c) = wi.W(0, common[c]);
    a(1, c) = wi.W(1, common[c]);
    a(2, c) = wj.W(0, common[c]);
    a(3, c) = wj.W(1, common[c]);
  }
  zero_center(a);

  // Squared singular values of A are the eigenvalues of the 4x4 Gram matrix.
  Mat gram(4, 4);
  acc_matmul_nt(gram, a, a);
  std::vector<double> lam = symmetric_eigen(gram);
  double total = lam[0] + lam[1] + lam[2] + lam[3];
  if (total <= 0.0) return 0.0;  // all-zero stack: trivially rigid
  double ratio = std::max(0.0, lam[3]) / total;
  return std::min(ratio, 0.25);
}

/// One banked representation: the frame it came from, the unit-norm h at the
/// time of the push (a detached copy), and a pointer to the observation so
/// rigidity against the entry can be evaluated lazily. The observation is not
/// owned and must outlive the bank.
struct BankEntry {
  int frame = 0;
  Mat h;
  const Frame2D* obs = nullptr;
};

/// FIFO queue of at most `capacity` representations; pushes beyond capacity
/// evict the oldest entry first.
class MemoryBank {
 public:
  explicit MemoryBank(std::size_t capacity = 1024) : capacity_(capacity) {
    if (capacity_ == 0) throw data_error("memory bank capacity must be positive");
  }

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

  /// Entries oldest first; position 0 is the next to be evicted.
  const BankEntry& entry(std::size_t pos) const { return entries_.at(pos); }

  void push(const Frame2D& obs, const Mat& h) {
    if (h.cols != 1)
      throw shape_error("memory bank push: h must be a column vector, got " + shape_str(h));
    const double n = frobenius_norm(h);
    if (std::abs(n - 1.0) > kUnitNormTol)
      throw data_error("memory bank push: h must be unit-norm, got |h| = " + std::to_string(n));
    entries_.push_back(BankEntry{obs.index, h, &obs});
    if (entries_.size() > capacity_) entries_.pop_front();
  }

 private:
  std::size_t capacity_;
  std::deque<BankEntry> entries_;
};

/// The most recently pushed representation for `frame`, or nullptr if the
/// bank holds none. When a frame was banked more than once, the newest copy
/// is the one that reflects the current state of training.
inline const Mat* latest_h(const MemoryBank& bank, int frame) {
  for (std::size_t pos = bank.size(); pos-- > 0;)
    if (bank.entry(pos).frame == frame) return &bank.entry(pos).h;
  return nullptr;
}

/// Frame-index sets drawn from the bank relative to an anchor observation.
struct PairSets {
  std::vector<int> positives;  // sorted, unique
  std::vector<int> negatives;  // sorted, unique; disjoint from positives
};

/// Scan the whole bank: entries whose rigidity with the anchor is strictly
/// below tau become positives, strictly above xi negatives; the gap is
/// excluded from both. Empty sets are legal outputs.
inline PairSets build_pair_sets(const Frame2D& anchor, const MemoryBank& bank,
                                const RigidityThresholds& th) {
  th.validate();
  PairSets out;
  for (std::size_t pos = 0; pos < bank.size(); ++pos) {
    const BankEntry& e = bank.entry(pos);
    const double r = msr(anchor, *e.obs);
    if (r < th.tau)
      out.positives.push_back(e.frame);
    else if (r > th.xi)
      out.negatives.push_back(e.frame);
  }
  auto dedup = [](std::vector<int>& v) {
    std::sort(v.begin(), v.end());
    v.erase(std::unique(v.begin(), v.end()), v.end());
  };
  dedup(out.positives);
  dedup(out.negatives);
  return out;
}

}  // namespace prrn
