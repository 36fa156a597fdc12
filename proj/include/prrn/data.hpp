#pragma once

// Dataset ingestion (keypoints-json, mocap-csv), train/test splitting, frame
// downsampling, and a synthetic low-rank deformable-shape generator with
// retained ground truth.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prrn/errors.hpp"
#include "prrn/mat.hpp"
#include "prrn/rng.hpp"
#include "prrn/types.hpp"

namespace prrn {

struct Dataset {
  std::string name;
  std::size_t P = 0;
  std::vector<Frame2D> frames;
  std::vector<Shape3D> gt;  // empty, or one shape per frame

  bool has_gt() const { return !gt.empty(); }
  std::size_t size() const { return frames.size(); }
};

/// The generating model behind a synthetic dataset: S_i = sum_k C(i,k) B[k].
struct BasisModel {
  std::size_t K = 0;
  std::vector<Mat> B;  // K shapes, 3xP each
  Mat C;               // FxK coefficients
};

enum class DataFormat { keypoints_json, mocap_csv };

// ---------------------------------------------------------------------------
// Synthesis

struct SynthOptions {
  std::size_t P = 20;
  std::size_t F = 800;
  std::size_t K = 3;
  std::uint64_t camera_seed = 1;
  std::uint64_t shape_seed = 2;
  double noise_ratio = 0.0;
};

/// Everything the generator drew besides the observations, for tests that
/// verify W_i = M_i S_i or inspect the basis model.
struct SynthExtras {
  std::vector<Camera> cameras;
  BasisModel model;
};

/// Draw K zero-centered Gaussian basis shapes (the first scaled x3 as a
/// dominant mean shape, entering every frame with coefficient exactly 1, so
/// K=1 data is rigid), combine them with per-frame Gaussian coefficients,
/// project through uniform random orthographic cameras, and optionally add
/// zero-centered Gaussian noise scaled so that ||noise||_F / ||W||_F over
/// the whole dataset equals noise_ratio exactly.
inline Dataset synthesize(const SynthOptions& opt, SynthExtras* extras = nullptr) {
  if (opt.K < 1) throw data_error("synthesize: K must be >= 1");
  if (opt.F <= opt.K) throw data_error("synthesize: needs F > K");
  if (opt.P < 4) throw data_error("synthesize: needs P >= 4");
  if (opt.noise_ratio < 0) throw data_error("synthesize: noise_ratio must be nonnegative");

  Rng shape_rng(opt.shape_seed);
  BasisModel model;
  model.K = opt.K;
  for (std::size_t k = 0; k < opt.K; ++k) {
    Mat b = shape_rng.gaussian_mat(3, opt.P);
    zero_center(b);
    if (k == 0) b = scaled(b, 3.0);
    model.B.push_back(std::move(b));
  }
  model.C = Mat(opt.F, opt.K);
  for (std::size_t i = 0; i < opt.F; ++i) {
    model.C(i, 0) = 1.0;  // the dominant basis is always fully present
    for (std::size_t k = 1; k < opt.K; ++k) model.C(i, k) = shape_rng.gaussian();
  }

  Rng camera_rng(opt.camera_seed);
  std::vector<Camera> cameras;
  std::vector<Mat> clean;
  Dataset ds;
  ds.name = "synth-P" + std::to_string(opt.P) + "-F" + std::to_string(opt.F) + "-K" +
            std::to_string(opt.K);
  ds.P = opt.P;
  double w_norm_sq = 0.0;
  for (std::size_t i = 0; i < opt.F; ++i) {
    Mat s(3, opt.P);
    for (std::size_t k = 0; k < opt.K; ++k) axpy(s, model.C(i, k), model.B[k]);
    Mat r = camera_rng.random_rotation3();
    Mat m(2, 3);
    for (std::size_t a = 0; a < 2; ++a)
      for (std::size_t b = 0; b < 3; ++b) m(a, b) = r(a, b);
    Mat w = matmul(m, s);
    w_norm_sq += dot_flat(w, w);
    clean.push_back(std::move(w));
    cameras.push_back(Camera{std::move(m)});
    ds.gt.push_back(Shape3D{std::move(s)});
  }

  if (opt.noise_ratio > 0.0) {
    // noise is centered before scaling: the measured ratio is then exact and
    // the noisy observations keep the centering invariant bit-for-bit
    std::vector<Mat> noise;
    double n_norm_sq = 0.0;
    for (std::size_t i = 0; i < opt.F; ++i) {
      Mat n = shape_rng.gaussian_mat(2, opt.P);
      zero_center(n);
      n_norm_sq += dot_flat(n, n);
      noise.push_back(std::move(n));
    }
    const double alpha = opt.noise_ratio * std::sqrt(w_norm_sq / n_norm_sq);
    for (std::size_t i = 0; i < opt.F; ++i) axpy(clean[i], alpha, noise[i]);
  }
  for (std::size_t i = 0; i < opt.F; ++i)
    ds.frames.push_back(make_frame(std::move(clean[i]), (int)i));

  if (extras) {
    extras->cameras = std::move(cameras);
    extras->model = std::move(model);
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Splitting and downsampling

/// First floor(fraction*F) frames for training, the rest for testing; order
/// preserved, frame indices kept, ground truth split alongside.
inline std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double fraction = 0.8) {
  if (ds.size() < 5) throw data_error("split: needs at least 5 frames, got " +
                                      std::to_string(ds.size()));
  if (!(fraction > 0.0 && fraction < 1.0))
    throw data_error("split: fraction must lie in (0,1)");
  const std::size_t n_train = (std::size_t)((double)ds.size() * fraction);
  Dataset train, test;
  train.name = ds.name + "/train";
  test.name = ds.name + "/test";
  train.P = test.P = ds.P;
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Dataset& dst = i < n_train ? train : test;
    dst.frames.push_back(ds.frames[i]);
    if (ds.has_gt()) dst.gt.push_back(ds.gt[i]);
  }
  return {std::move(train), std::move(test)};
}

/// Uniform stride subsampling: frame j of the result is input frame
/// floor(j/keep_fraction). keep_fraction 1 is the identity.
inline Dataset downsample(const Dataset& ds, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0))
    throw data_error("downsample: keep_fraction must lie in (0,1]");
  Dataset out;
  out.name = ds.name;
  out.P = ds.P;
  const double step = 1.0 / keep_fraction;
  for (std::size_t j = 0;; ++j) {
    const std::size_t src = (std::size_t)((double)j * step);
    if (src >= ds.size()) break;
    out.frames.push_back(ds.frames[src]);
    if (ds.has_gt()) out.gt.push_back(ds.gt[src]);
  }
  return out;
}

/// A copy of `ds` with zero-centered Gaussian noise added to the visible
/// observations only, scaled so that ||noise||_F / ||W||_F over the whole
/// dataset equals `ratio` exactly (same convention as synthesize).  Masks and
/// ground truth are untouched; ratio 0 returns an identical copy.
inline Dataset add_noise(const Dataset& ds, double ratio, std::uint64_t seed) {
  if (ratio < 0) throw data_error("add_noise: ratio must be nonnegative");
  Dataset out = ds;
  if (ratio == 0.0 || ds.frames.empty()) return out;
  Rng rng(seed);
  std::vector<Mat> noise;
  double w_norm_sq = 0.0, n_norm_sq = 0.0;
  for (const Frame2D& f : ds.frames) {
    Mat n = rng.gaussian_mat(2, f.points());
    for (std::size_t q = 0; q < f.points(); ++q)
      if (!f.mask[q]) n(0, q) = n(1, q) = 0.0;
    zero_center(n, f.mask);
    w_norm_sq += dot_flat(f.W, f.W);  // hidden entries are stored as zero
    n_norm_sq += dot_flat(n, n);
    noise.push_back(std::move(n));
  }
  if (n_norm_sq <= 0.0) return out;  // nothing visible enough to perturb
  const double alpha = ratio * std::sqrt(w_norm_sq / n_norm_sq);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    Mat w = ds.frames[i].W;
    axpy(w, alpha, noise[i]);
    out.frames[i] = make_frame(std::move(w), ds.frames[i].mask, ds.frames[i].index);
  }
  return out;
}

// ---------------------------------------------------------------------------
// keypoints-json: one document with name, P, frames:[{id, points, mask}],
// optional gt:[{points3d}]

namespace detail {

inline void check_dataset_consistent(const Dataset& ds) {
  for (const Frame2D& f : ds.frames)
    if (f.points() != ds.P)
      throw data_error("dataset: frame " + std::to_string(f.index) + " has " +
                       std::to_string(f.points()) + " points, expected " + std::to_string(ds.P));
  if (ds.has_gt() && ds.gt.size() != ds.frames.size())
    throw data_error("dataset: ground truth count " + std::to_string(ds.gt.size()) +
                     " does not match frame count " + std::to_string(ds.frames.size()));
}

}  // namespace detail

inline void save_keypoints_json(const std::string& path, const Dataset& ds) {
  detail::check_dataset_consistent(ds);
  nlohmann::json j;
  j["name"] = ds.name;
  j["P"] = ds.P;
  j["frames"] = nlohmann::json::array();
  for (const Frame2D& f : ds.frames) {
    nlohmann::json points = nlohmann::json::array();
    for (std::size_t p = 0; p < f.points(); ++p)
      points.push_back({f.W(0, p), f.W(1, p)});
    nlohmann::json mask = nlohmann::json::array();
    for (auto m : f.mask) mask.push_back(m ? 1 : 0);
    j["frames"].push_back({{"id", f.index}, {"points", std::move(points)}, {"mask", std::move(mask)}});
  }
  if (ds.has_gt()) {
    j["gt"] = nlohmann::json::array();
    for (const Shape3D& s : ds.gt) {
      nlohmann::json pts = nlohmann::json::array();
      for (std::size_t p = 0; p < s.S.cols; ++p)
        pts.push_back({s.S(0, p), s.S(1, p), s.S(2, p)});
      j["gt"].push_back({{"points3d", std::move(pts)}});
    }
  }
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  out << j.dump();
  if (!out) throw data_error("write failed: " + path);
}

inline Dataset load_keypoints_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("invalid JSON in " + path + ": " + e.what());
  }
  Dataset ds;
  try {
    ds.name = j.value("name", std::string{});
    ds.P = j.at("P").get<std::size_t>();
    if (ds.P == 0) throw data_error(path + ": P must be positive");
    std::size_t record = 0;
    for (const auto& jf : j.at("frames")) {
      const auto& pts = jf.at("points");
      if (pts.size() != ds.P)
        throw data_error(path + ": frame record " + std::to_string(record) + " has " +
                         std::to_string(pts.size()) + " points, expected " + std::to_string(ds.P));
      Mat w(2, ds.P);
      std::vector<std::uint8_t> mask(ds.P, 1);
      if (jf.contains("mask")) {
        const auto& jm = jf.at("mask");
        if (jm.size() != ds.P)
          throw data_error(path + ": frame record " + std::to_string(record) +
                           " mask length mismatch");
        for (std::size_t p = 0; p < ds.P; ++p) mask[p] = jm.at(p).get<int>() ? 1 : 0;
      }
      for (std::size_t p = 0; p < ds.P; ++p) {
        if (pts.at(p).size() != 2)
          throw data_error(path + ": frame record " + std::to_string(record) + " point " +
                           std::to_string(p) + " is not an [x,y] pair");
        w(0, p) = mask[p] ? pts.at(p).at(0).get<double>() : 0.0;
        w(1, p) = mask[p] ? pts.at(p).at(1).get<double>() : 0.0;
      }
      const int id = jf.contains("id") ? jf.at("id").get<int>() : (int)record;
      ds.frames.push_back(make_frame(std::move(w), std::move(mask), id));
      ++record;
    }
    if (j.contains("gt")) {
      std::size_t record_gt = 0;
      for (const auto& jg : j.at("gt")) {
        const auto& pts = jg.at("points3d");
        if (pts.size() != ds.P)
          throw data_error(path + ": gt record " + std::to_string(record_gt) +
                           " has wrong point count");
        Mat s(3, ds.P);
        for (std::size_t p = 0; p < ds.P; ++p) {
          if (pts.at(p).size() != 3)
            throw data_error(path + ": gt record " + std::to_string(record_gt) + " point " +
                             std::to_string(p) + " is not an [x,y,z] triple");
          for (std::size_t a = 0; a < 3; ++a) s(a, p) = pts.at(p).at(a).get<double>();
        }
        zero_center(s);
        ds.gt.push_back(Shape3D{std::move(s)});
        ++record_gt;
      }
      if (ds.gt.size() != ds.frames.size())
        throw data_error(path + ": gt count " + std::to_string(ds.gt.size()) +
                         " does not match frame count " + std::to_string(ds.frames.size()));
    }
  } catch (const nlohmann::json::exception& e) {
    throw data_error("malformed dataset in " + path + ": " + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// mocap-csv: a header row x0,y0,x1,y1,... then one row of 2P values per
// frame, full precision. Empty cells mark invisible points. Ground truth
// travels in a sidecar file <stem>.gt.csv with columns x0,y0,z0,...

namespace detail {

inline std::string gt_sidecar_path(const std::string& path) {
  std::filesystem::path p(path);
  std::filesystem::path side = p.parent_path() / (p.stem().string() + ".gt.csv");
  return side.string();
}

inline std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> cells;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      cells.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  cells.push_back(cur);
  return cells;
}

inline bool parse_cell(const std::string& cell, double* out) {
  std::size_t a = cell.find_first_not_of(" \t");
  if (a == std::string::npos) return false;  // empty: invisible point
  std::size_t b = cell.find_last_not_of(" \t");
  const std::string body = cell.substr(a, b - a + 1);
  char* end = nullptr;
  const double v = std::strtod(body.c_str(), &end);
  if (end != body.c_str() + body.size())
    throw data_error("unparseable numeric cell '" + cell + "'");
  *out = v;
  return true;
}

inline std::string format_cell(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void save_mocap_csv(const std::string& path, const Dataset& ds) {
  detail::check_dataset_consistent(ds);
  std::ofstream out(path);
  if (!out) throw data_error("cannot open for writing: " + path);
  for (std::size_t p = 0; p < ds.P; ++p)
    out << (p ? "," : "") << "x" << p << ",y" << p;
  out << "\n";
  for (const Frame2D& f : ds.frames) {
    for (std::size_t p = 0; p < ds.P; ++p) {
      if (p) out << ",";
      if (f.mask[p])
        out << detail::format_cell(f.W(0, p)) << "," << detail::format_cell(f.W(1, p));
      else
        out << ",";  // two empty cells
    }
    out << "\n";
  }
  if (!out) throw data_error("write failed: " + path);

  if (ds.has_gt()) {
    std::ofstream gt(detail::gt_sidecar_path(path));
    if (!gt) throw data_error("cannot open for writing: " + detail::gt_sidecar_path(path));
    for (std::size_t p = 0; p < ds.P; ++p)
      gt << (p ? "," : "") << "x" << p << ",y" << p << ",z" << p;
    gt << "\n";
    for (const Shape3D& s : ds.gt) {
      for (std::size_t p = 0; p < ds.P; ++p) {
        if (p) gt << ",";
        gt << detail::format_cell(s.S(0, p)) << "," << detail::format_cell(s.S(1, p)) << ","
           << detail::format_cell(s.S(2, p));
      }
      gt << "\n";
    }
    if (!gt) throw data_error("write failed: " + detail::gt_sidecar_path(path));
  }
}

inline Dataset load_mocap_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("cannot open: " + path);
  std::string line;
  if (!std::getline(in, line)) throw data_error(path + ": missing header row");
  const std::size_t header_cols = detail::split_csv_row(line).size();
  if (header_cols < 2 || header_cols % 2 != 0)
    throw data_error(path + ": header must name 2P columns, got " + std::to_string(header_cols));

  Dataset ds;
  ds.name = std::filesystem::path(path).stem().string();
  ds.P = header_cols / 2;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty() || line == "\r") continue;
    auto cells = detail::split_csv_row(line);
    if (cells.size() != header_cols)
      throw data_error(path + ": row " + std::to_string(row) + " has " +
                       std::to_string(cells.size()) + " cells, expected " +
                       std::to_string(header_cols));
    Mat w(2, ds.P);
    std::vector<std::uint8_t> mask(ds.P, 1);
    for (std::size_t p = 0; p < ds.P; ++p) {
      double x = 0.0, y = 0.0;
      bool have_x, have_y;
      try {
        have_x = detail::parse_cell(cells[2 * p], &x);
        have_y = detail::parse_cell(cells[2 * p + 1], &y);
      } catch (const data_error& e) {
        throw data_error(path + ": row " + std::to_string(row) + ": " + e.what());
      }
      if (have_x != have_y)
        throw data_error(path + ": row " + std::to_string(row) + " point " + std::to_string(p) +
                         " has only one of x,y");
      mask[p] = have_x ? 1 : 0;
      w(0, p) = have_x ? x : 0.0;
      w(1, p) = have_y ? y : 0.0;
    }
    ds.frames.push_back(make_frame(std::move(w), std::move(mask), (int)ds.frames.size()));
  }

  const std::string gt_path = detail::gt_sidecar_path(path);
  if (std::filesystem::exists(gt_path)) {
    std::ifstream gin(gt_path);
    if (!gin) throw data_error("cannot open: " + gt_path);
    if (!std::getline(gin, line)) throw data_error(gt_path + ": missing header row");
    const std::size_t gcols = detail::split_csv_row(line).size();
    if (gcols != 3 * ds.P)
      throw data_error(gt_path + ": expected " + std::to_string(3 * ds.P) + " columns, got " +
                       std::to_string(gcols));
    row = 1;
    while (std::getline(gin, line)) {
      ++row;
      if (line.empty() || line == "\r") continue;
      auto cells = detail::split_csv_row(line);
      if (cells.size() != gcols)
        throw data_error(gt_path + ": row " + std::to_string(row) + " has wrong cell count");
      Mat s(3, ds.P);
      for (std::size_t p = 0; p < ds.P; ++p)
        for (std::size_t a = 0; a < 3; ++a) {
          double v = 0.0;
          if (!detail::parse_cell(cells[3 * p + a], &v))
            throw data_error(gt_path + ": row " + std::to_string(row) +
                             " has an empty ground-truth cell");
          s(a, p) = v;
        }
      zero_center(s);
      ds.gt.push_back(Shape3D{std::move(s)});
    }
    if (ds.gt.size() != ds.frames.size())
      throw data_error(gt_path + ": gt row count does not match " + path);
  }
  return ds;
}

// ---------------------------------------------------------------------------

inline Dataset load_dataset(const std::string& path, DataFormat format) {
  return format == DataFormat::keypoints_json ? load_keypoints_json(path) : load_mocap_csv(path);
}

inline void save_dataset(const std::string& path, const Dataset& ds, DataFormat format) {
  if (format == DataFormat::keypoints_json)
    save_keypoints_json(path, ds);
  else
    save_mocap_csv(path, ds);
}

}  // namespace prrn
