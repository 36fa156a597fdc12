#pragma once

// Training loop for the shape/camera network: Adam over all layer parameters,
// scheduled rigidity regularizers, a FIFO representation bank refreshed after
// every optimizer step, and a JSON-lines epoch log.

#include <prrn/autodiff.hpp>
#include <prrn/data.hpp>
#include <prrn/errors.hpp>
#include <prrn/eval.hpp>
#include <prrn/losses.hpp>
#include <prrn/mat.hpp>
#include <prrn/model.hpp>
#include <prrn/rigidity.hpp>
#include <prrn/rng.hpp>
#include <prrn/types.hpp>

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace prrn {

struct TrainConfig {
  std::size_t epochs = 700;
  double lr = 1e-3;
  double decay = 0.95;  ///< Per-epoch multiplicative learning-rate decay.
  std::size_t batch = 64;
  LossWeights weights;
  RigidityThresholds thresholds;
  std::size_t bank_capacity = 1024;
  RegularizerSchedule schedule = RegularizerSchedule::alternating;
  std::size_t block_epochs = 100;
  bool random_rotation = false;  ///< Consistency variant: resample the camera.
  ArchConfig arch;
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 50;
  std::string checkpoint_dir;  ///< Empty: no checkpoints are written.
  /// How often (in epochs) to compute 3D error against ground truth; 0 means
  /// only after the final epoch.  Evaluation never touches the parameters.
  std::size_t eval_every = 0;

  ObjectiveConfig objective() const {
    ObjectiveConfig cfg;
    cfg.weights = weights;
    cfg.thresholds = thresholds;
    cfg.schedule = schedule;
    cfg.block_epochs = (int)block_epochs;
    cfg.random_rotation = random_rotation;
    return cfg;
  }

  void validate() const {
    if (!(lr > 0.0) || !std::isfinite(lr)) throw data_error("train config: lr must be positive");
    if (!(decay > 0.0) || decay > 1.0)
      throw data_error("train config: decay must be in (0, 1]");
    if (batch == 0) throw data_error("train config: batch size must be >= 1");
    if (bank_capacity == 0) throw data_error("train config: bank capacity must be >= 1");
    if (block_epochs == 0) throw data_error("train config: block length must be >= 1");
    if (checkpoint_every == 0) throw data_error("train config: checkpoint interval must be >= 1");
    arch.validate();
    objective().validate();
  }
};

/// Adam first/second moments, one pair per tensor in param_list() order,
/// plus the shared step counter.
struct OptimizerState {
  std::vector<Mat> m;
  std::vector<Mat> v;
  std::int64_t step = 0;
};

inline OptimizerState make_optimizer_state(const Params& params) {
  OptimizerState st;
  for (const auto& [name, p] : param_list(params)) {
    (void)name;
    st.m.emplace_back(p->rows, p->cols);
    st.v.emplace_back(p->rows, p->cols);
  }
  return st;
}

/// One bias-corrected Adam update, in place.  `grads` must align with
/// param_list(params); zero gradients leave the parameters unchanged.
inline void adam_step(Params& params, const std::vector<Mat>& grads, OptimizerState& st,
                      double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  auto list = param_list(params);
  if (grads.size() != list.size() || st.m.size() != list.size() || st.v.size() != list.size())
    throw shape_error("adam_step: gradient/state count mismatch");
  st.step += 1;
  const double bc1 = 1.0 - std::pow(beta1, (double)st.step);
  const double bc2 = 1.0 - std::pow(beta2, (double)st.step);
  for (std::size_t i = 0; i < list.size(); ++i) {
    Mat& p = *list[i].second;
    const Mat& g = grads[i];
    if (g.rows != p.rows || g.cols != p.cols)
      throw shape_error("adam_step: gradient shape mismatch for " + list[i].first);
    Mat& m = st.m[i];
    Mat& v = st.v[i];
    for (std::size_t r = 0; r < p.rows; ++r)
      for (std::size_t c = 0; c < p.cols; ++c) {
        const double ge = g(r, c);
        m(r, c) = beta1 * m(r, c) + (1.0 - beta1) * ge;
        v(r, c) = beta2 * v(r, c) + (1.0 - beta2) * ge * ge;
        p(r, c) -= lr * (m(r, c) / bc1) / (std::sqrt(v(r, c) / bc2) + eps);
      }
  }
}

/// One row of the training log.  e3d fields are present only on epochs where
/// evaluation ran (see TrainConfig::eval_every) and ground truth exists.
struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss_reproj = 0.0;
  double loss_contrast = 0.0;
  double loss_consist = 0.0;
  std::optional<double> e3d_train;
  std::optional<double> e3d_test;
};

inline nlohmann::ordered_json log_json(const EpochLog& row) {
  nlohmann::ordered_json j;
  j["epoch"] = row.epoch;
  j["lr"] = row.lr;
  j["loss_reproj"] = row.loss_reproj;
  j["loss_contrast"] = row.loss_contrast;
  j["loss_consist"] = row.loss_consist;
  if (row.e3d_train) j["e3d_train"] = *row.e3d_train;
  if (row.e3d_test) j["e3d_test"] = *row.e3d_test;
  return j;
}

inline void save_train_log(const std::vector<EpochLog>& log, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw data_error("cannot write log: " + path);
  for (const EpochLog& row : log) out << log_json(row).dump() << "\n";
}

/// Frozen-parameter 3D error over a dataset with ground truth.
inline EvalReport evaluate(const Params& params, const ArchConfig& arch, const Dataset& ds) {
  if (!ds.has_gt()) throw data_error("evaluate: dataset has no ground truth");
  if (ds.frames.empty()) throw data_error("evaluate: empty dataset");
  std::vector<Shape3D> preds;
  preds.reserve(ds.size());
  for (const Frame2D& f : ds.frames) {
    ad::Tape t;
    BoundParams bp = bind_params(t, params);
    FrameOutputs out = forward_frame(t, f, bp, arch);
    preds.push_back(Shape3D{t.value(out.S)});
  }
  return e3d(preds, ds.gt);
}

struct TrainResult {
  Params params;
  std::vector<EpochLog> log;
  /// Final bank state.  Entries keep pointers into the training dataset's
  /// frames, so the dataset must outlive the result.
  MemoryBank bank;
};

/// Full training run.  Deterministic given the config: parameters are seeded
/// with cfg.seed, and a single stream seeded with cfg.seed + 1 drives the
/// per-epoch shuffles and any consistency-loss draws, in that order.  The
/// last partial batch is kept.  `test`, when given, must share the keypoint
/// count and is used only for the e3d_test log field.
inline TrainResult train(const Dataset& ds, const TrainConfig& cfg, const Dataset* test = nullptr) {
  cfg.validate();
  if (ds.frames.empty()) throw data_error("train: empty dataset");
  if (cfg.arch.P != ds.P)
    throw shape_error("train: network expects " + std::to_string(cfg.arch.P) +
                      " keypoints, dataset has " + std::to_string(ds.P));
  if (test && test->P != ds.P) throw shape_error("train: test set keypoint count mismatch");

  TrainResult res{init_params(cfg.arch, cfg.seed), {}, MemoryBank(cfg.bank_capacity)};
  OptimizerState opt = make_optimizer_state(res.params);
  Rng rng(cfg.seed + 1);
  const ObjectiveConfig ocfg = cfg.objective();

  std::vector<std::size_t> order(ds.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr_e = cfg.lr * std::pow(cfg.decay, (double)epoch);
    std::iota(order.begin(), order.end(), 0);
    rng.shuffle(order);

    double sum_reproj = 0.0, sum_contrast = 0.0, sum_consist = 0.0;
    std::size_t frames_done = 0, batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch);
      ad::Tape t;
      BoundParams bp = bind_params(t, res.params);
      std::vector<BatchItem> batch;
      batch.reserve(stop - start);
      for (std::size_t j = start; j < stop; ++j) {
        const Frame2D& f = ds.frames[order[j]];
        try {
          batch.push_back({&f, forward_frame(t, f, bp, cfg.arch)});
        } catch (const numeric_error& e) {
          throw numeric_error("train: frame " + std::to_string(f.index) + ": " + e.what());
        }
      }
      ObjectiveBreakdown bd;
      ad::Node obj =
          training_objective(t, batch, res.bank, ocfg, (int)epoch, make_forward(bp, cfg.arch), rng, &bd);
      t.run_backward(obj);
      std::vector<Mat> grads;
      const std::vector<ad::Node> bound = bound_list(bp);
      grads.reserve(bound.size());
      for (ad::Node n : bound) grads.push_back(t.grad(n));
      adam_step(res.params, grads, opt, lr_e);
      for (const BatchItem& item : batch) res.bank.push(*item.obs, t.value(item.out.h_unit));

      sum_reproj += bd.reproj * (double)batch.size();
      sum_contrast += bd.contrast;
      sum_consist += bd.consist;
      frames_done += batch.size();
      ++batches;
    }

    EpochLog row;
    row.epoch = epoch;
    row.lr = lr_e;
    row.loss_reproj = frames_done ? sum_reproj / (double)frames_done : 0.0;
    row.loss_contrast = batches ? sum_contrast / (double)batches : 0.0;
    row.loss_consist = batches ? sum_consist / (double)batches : 0.0;
    const bool last = epoch + 1 == cfg.epochs;
    const bool eval_now = cfg.eval_every ? ((epoch + 1) % cfg.eval_every == 0 || last) : last;
    if (eval_now && ds.has_gt()) row.e3d_train = evaluate(res.params, cfg.arch, ds).mean;
    if (eval_now && test && test->has_gt()) row.e3d_test = evaluate(res.params, cfg.arch, *test).mean;
    res.log.push_back(row);

    if (!cfg.checkpoint_dir.empty() && ((epoch + 1) % cfg.checkpoint_every == 0 || last))
      save_checkpoint(cfg.checkpoint_dir + "/checkpoint-" + std::to_string(epoch + 1) + ".json",
                      res.params);
  }
  return res;
}

struct SweepRow {
  std::string setting;  ///< "noise" or "keep".
  double value = 0.0;
  double e3d = 0.0;
};

/// Degradation study: retrain under corrupted observations (per noise ratio)
/// or temporally down-sampled training sets (per keep fraction), always
/// evaluating against the original dataset.  A noise ratio of 0 and a keep
/// fraction of 1 both reproduce the plain train/evaluate run.
inline std::vector<SweepRow> robustness_sweep(const Dataset& ds, const TrainConfig& cfg,
                                              const std::vector<double>& noise_ratios,
                                              const std::vector<double>& keep_fractions) {
  if (!ds.has_gt()) throw data_error("robustness_sweep: dataset has no ground truth");
  std::vector<SweepRow> rows;
  for (double ratio : noise_ratios) {
    const Dataset noisy = ratio == 0.0 ? ds : add_noise(ds, ratio, cfg.seed);
    TrainResult run = train(noisy, cfg);
    rows.push_back({"noise", ratio, evaluate(run.params, cfg.arch, ds).mean});
  }
  for (double keep : keep_fractions) {
    const Dataset sub = keep == 1.0 ? ds : downsample(ds, keep);
    TrainResult run = train(sub, cfg);
    rows.push_back({"keep", keep, evaluate(run.params, cfg.arch, ds).mean});
  }
  return rows;
}

}  // namespace prrn
