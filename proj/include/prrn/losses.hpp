#pragma once

/// Training losses: masked reprojection, rigidity-guided contrastive loss
/// over a memory bank, pairwise camera/shape consistency, and the combined
/// objective with its alternating regularizer schedule.

#include <prrn/autodiff.hpp>
#include <prrn/errors.hpp>
#include <prrn/mat.hpp>
#include <prrn/model.hpp>
#include <prrn/rigidity.hpp>
#include <prrn/rng.hpp>
#include <prrn/types.hpp>

#include <cstddef>
#include <functional>
#include <iostream>
#include <numeric>
#include <string>
#include <vector>

namespace prrn {

struct LossWeights {
  double lambda1 = 0.1;  ///< Contrastive weight.
  double lambda2 = 0.2;  ///< Consistency weight.

  void validate() const {
    if (lambda1 < 0 || lambda2 < 0) throw data_error("LossWeights: weights must be nonnegative");
  }
};

/// One frame of a training batch: the observation plus the first-pass network
/// outputs living on the shared tape.
struct BatchItem {
  const Frame2D* obs = nullptr;  ///< Not owned; must outlive the batch.
  FrameOutputs out;
};

// ---------------------------------------------------------------------------
// Reprojection

/// Mean over the batch of the visibility-masked Frobenius norm of
/// W_i - M_i * S_i.  Frames with no visible points contribute zero and emit a
/// warning on stderr (an all-occluded frame carries no signal).
inline ad::Node reprojection_loss(ad::Tape& t, const std::vector<BatchItem>& batch) {
  if (batch.empty()) throw shape_error("reprojection_loss: empty batch");
  std::vector<ad::Node> terms;
  for (const BatchItem& item : batch) {
    const Frame2D& f = *item.obs;
    const std::size_t vis = f.visible_count();
    if (vis == 0) {
      std::cerr << "warning: reprojection_loss: frame " << f.index
                << " has no visible points and is skipped\n";
      continue;
    }
    ad::Node proj = ad::matmul(t, item.out.M, item.out.S);
    ad::Node resid = ad::sub(t, t.constant(f.W), proj);
    if (vis < f.points()) {
      Mat mask(2, f.points());
      for (std::size_t p = 0; p < f.points(); ++p)
        mask(0, p) = mask(1, p) = f.mask[p] ? 1.0 : 0.0;
      resid = ad::mask_elems(t, resid, std::move(mask));
    }
    terms.push_back(ad::frobenius(t, resid));
  }
  if (terms.empty()) return t.constant(Mat(1, 1));
  return ad::scale(t, ad::sum_nodes(t, terms), 1.0 / static_cast<double>(batch.size()));
}

// ---------------------------------------------------------------------------
// Contrastive

/// Rigidity-guided contrastive loss.  For every batch frame whose positive
/// and negative sets (rigidity below/above the thresholds against banked
/// observations) are both nonempty:
///
///   -log( sum_pos exp(h_i . h_j) / sum_pos+neg exp(h_i . h_j) )
///
/// computed as logsumexp(all) - logsumexp(pos) and averaged over contributing
/// frames.  Banked representations enter as constants, so gradients reach
/// only the current batch's h.  Returns 0 when no frame contributes.
inline ad::Node contrastive_loss(ad::Tape& t, const std::vector<BatchItem>& batch,
                                 const MemoryBank& bank, const RigidityThresholds& th) {
  th.validate();
  std::vector<ad::Node> terms;
  for (const BatchItem& item : batch) {
    const PairSets ps = build_pair_sets(*item.obs, bank, th);
    if (ps.positives.empty() || ps.negatives.empty()) continue;

    const std::size_t npos = ps.positives.size();
    const std::size_t nall = npos + ps.negatives.size();
    const std::size_t d = t.value(item.out.h_unit).rows;
    // Rows are banked h vectors (transposed), positives first, so that one
    // matmul against the anchor yields the dot-product column.
    Mat all_rows(nall, d);
    Mat pos_rows(npos, d);
    auto fill_row = [&](Mat& dst, std::size_t row, int frame) {
      const Mat* h = latest_h(bank, frame);
      if (!h) throw data_error("contrastive_loss: pair set references unbanked frame " +
                               std::to_string(frame));
      for (std::size_t k = 0; k < d; ++k) dst(row, k) = (*h)(k, 0);
    };
    for (std::size_t j = 0; j < npos; ++j) {
      fill_row(all_rows, j, ps.positives[j]);
      fill_row(pos_rows, j, ps.positives[j]);
    }
    for (std::size_t j = 0; j < ps.negatives.size(); ++j)
      fill_row(all_rows, npos + j, ps.negatives[j]);

    ad::Node dots_all = ad::matmul(t, t.constant(std::move(all_rows)), item.out.h_unit);
    ad::Node dots_pos = ad::matmul(t, t.constant(std::move(pos_rows)), item.out.h_unit);
    terms.push_back(ad::sub(t, ad::logsumexp(t, dots_all), ad::logsumexp(t, dots_pos)));
  }
  if (terms.empty()) return t.constant(Mat(1, 1));
  return ad::scale(t, ad::sum_nodes(t, terms), 1.0 / static_cast<double>(terms.size()));
}

// ---------------------------------------------------------------------------
// Pairwise consistency

/// Second-pass forward used by the consistency loss: maps a synthesized
/// observation to fresh network outputs on the same tape.  Production code
/// wraps forward_frame; tests may substitute stubs.
using ForwardFn = std::function<FrameOutputs(ad::Tape&, const Frame2D&)>;

/// Convenience wrapper: the standard second pass through the bound networks.
inline ForwardFn make_forward(const BoundParams& bp, const ArchConfig& cfg) {
  return [&bp, cfg](ad::Tape& t, const Frame2D& f) { return forward_frame(t, f, bp, cfg); };
}

/// Pairwise consistency loss.  First-pass shapes and cameras are detached as
/// fixed targets.  Each shape is re-projected through an exchanged camera
/// (a random permutation of the batch's own cameras), the synthetic
/// observations are re-centered and pushed through the networks again, and
/// the loss sums, over the batch,
///
///   ||S_i - S'_i||_F + ||M_i - M'_i||_F
///
/// with second-pass cameras rearranged back to the original order via the
/// inverse permutation.  With use_random_rotation, the exchanged camera is
/// instead the first two rows of a uniformly random rotation, which then
/// serves directly as that frame's camera target (no permutation involved).
inline ad::Node consistency_loss(ad::Tape& t, const std::vector<BatchItem>& batch,
                                 const ForwardFn& second_forward, Rng& rng,
                                 bool use_random_rotation = false) {
  if (batch.empty()) throw shape_error("consistency_loss: empty batch");
  const std::size_t n = batch.size();

  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  if (!use_random_rotation && n >= 2) rng.shuffle(perm);

  // Detached first-pass targets.
  std::vector<Mat> s_det, m_det;
  s_det.reserve(n);
  m_det.reserve(n);
  for (const BatchItem& item : batch) {
    s_det.push_back(t.value(item.out.S));
    m_det.push_back(t.value(item.out.M));
  }

  std::vector<ad::Node> terms;
  std::vector<ad::Node> m_second(n);  // Slot r[i] receives the estimate from input i.
  for (std::size_t i = 0; i < n; ++i) {
    Mat cam;
    if (use_random_rotation) {
      const Mat rot = rng.random_rotation3();
      cam = Mat(2, 3);
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 3; ++b) cam(a, b) = rot(a, b);
    } else {
      cam = m_det[perm[i]];
    }
    Mat wprime = matmul(cam, s_det[i]);
    zero_center(wprime);
    const Frame2D synth = make_frame(std::move(wprime), batch[i].obs->index);
    const FrameOutputs second = second_forward(t, synth);

    terms.push_back(ad::frobenius(t, ad::sub(t, second.S, t.constant(s_det[i]))));
    if (use_random_rotation)
      terms.push_back(ad::frobenius(t, ad::sub(t, second.M, t.constant(std::move(cam)))));
    else
      m_second[perm[i]] = second.M;
  }
  if (!use_random_rotation)
    for (std::size_t i = 0; i < n; ++i)
      terms.push_back(ad::frobenius(t, ad::sub(t, m_second[i], t.constant(m_det[i]))));
  return ad::sum_nodes(t, terms);
}

// ---------------------------------------------------------------------------
// Combined objective

/// Which regularizer accompanies the reprojection loss, and when.
enum class RegularizerSchedule {
  none,           ///< Reprojection only.
  alternating,    ///< Contrast and consistency alternate in fixed-length epoch blocks.
  contrast_only,  ///< Contrastive regularizer every epoch.
  consist_only,   ///< Consistency regularizer every epoch.
  joint,          ///< Both regularizers every epoch.
};

struct ObjectiveConfig {
  LossWeights weights;
  RigidityThresholds thresholds;
  RegularizerSchedule schedule = RegularizerSchedule::alternating;
  int block_epochs = 100;  ///< Block length for the alternating schedule.
  bool random_rotation = false;

  void validate() const {
    weights.validate();
    thresholds.validate();
    if (block_epochs < 1) throw data_error("ObjectiveConfig: block_epochs must be >= 1");
  }
};

/// Per-term values of a built objective, for logging.
struct ObjectiveBreakdown {
  double reproj = 0.0;
  double contrast = 0.0;
  double consist = 0.0;
  bool contrast_active = false;
  bool consist_active = false;
};

/// True when `epoch` falls in a contrast block of the alternating schedule
/// (blocks of block_epochs epochs, starting with contrast).
inline bool contrast_block(int epoch, int block_epochs) {
  return (epoch / block_epochs) % 2 == 0;
}

/// The training objective for one batch at one epoch: the reprojection loss
/// always, plus lambda1 * contrastive or lambda2 * consistency per the
/// schedule.  A term with zero weight is not built at all, so with both
/// weights zero the objective graph is exactly the reprojection graph.
inline ad::Node training_objective(ad::Tape& t, const std::vector<BatchItem>& batch,
                                   const MemoryBank& bank, const ObjectiveConfig& cfg, int epoch,
                                   const ForwardFn& second_forward, Rng& rng,
                                   ObjectiveBreakdown* breakdown = nullptr) {
  cfg.validate();
  bool want_contrast = false, want_consist = false;
  switch (cfg.schedule) {
    case RegularizerSchedule::none: break;
    case RegularizerSchedule::alternating:
      want_contrast = contrast_block(epoch, cfg.block_epochs);
      want_consist = !want_contrast;
      break;
    case RegularizerSchedule::contrast_only: want_contrast = true; break;
    case RegularizerSchedule::consist_only: want_consist = true; break;
    case RegularizerSchedule::joint: want_contrast = want_consist = true; break;
  }
  want_contrast = want_contrast && cfg.weights.lambda1 > 0.0;
  want_consist = want_consist && cfg.weights.lambda2 > 0.0;

  ad::Node total = reprojection_loss(t, batch);
  ObjectiveBreakdown bd;
  bd.reproj = t.value(total)(0, 0);
  if (want_contrast) {
    const ad::Node c = contrastive_loss(t, batch, bank, cfg.thresholds);
    bd.contrast = t.value(c)(0, 0);
    bd.contrast_active = true;
    total = ad::add(t, total, ad::scale(t, c, cfg.weights.lambda1));
  }
  if (want_consist) {
    const ad::Node c = consistency_loss(t, batch, second_forward, rng, cfg.random_rotation);
    bd.consist = t.value(c)(0, 0);
    bd.consist_active = true;
    total = ad::add(t, total, ad::scale(t, c, cfg.weights.lambda2));
  }
  if (breakdown) *breakdown = bd;
  return total;
}

}  // namespace prrn
