#pragma once

// The two estimation networks: F maps a 2D observation to a 3D shape plus a
// low-dimensional representation h (encoder/decoder of residual-recursive
// modules with tied weights), and G maps the observation to an orthographic
// camera via a 6-value head followed by SVD orthogonalization.
//
// Feature layout: a frame enters as the P x 2 transpose of W (P channels, 2
// spatial positions); every layer is a per-position linear map over channels
// (a 1x1 convolution). Nonlinearities live only inside the recursive blocks
// and the rotation net's hidden layers; embedding, halving, doubling and the
// head layers are plain affine maps.

#include <cmath>
#include <cstddef>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "prrn/autodiff.hpp"
#include "prrn/errors.hpp"
#include "prrn/mat.hpp"
#include "prrn/rng.hpp"
#include "prrn/types.hpp"

namespace prrn {

/// Negative-side slope of every hidden activation.
inline constexpr double kLeakySlope = 0.2;

/// How the core block of each module transforms its feature.
enum class ModuleKind {
  recursive,  // T residual applications of one shared layer
  plain       // a single standard layer, no residual (same parameter count)
};

struct ArchConfig {
  std::vector<std::size_t> channels{128, 64, 32, 16, 8};  // module operating widths
  std::size_t T = 3;                                      // recursion count
  std::vector<std::size_t> rot_layers{128, 32, 8};        // rotation-net hidden widths
  std::size_t P = 0;                                      // keypoints per frame
  ModuleKind kind = ModuleKind::recursive;

  std::size_t modules() const { return channels.size(); }

  /// Dimension of the representation h: the deepest module halves its width
  /// to channels.back()/2 over 2 spatial positions, so the flattened middle
  /// input (and h itself) has channels.back() values.
  std::size_t repr_dim() const { return channels.back(); }

  void validate() const {
    if (P == 0) throw data_error("arch: P must be positive");
    if (T == 0) throw data_error("arch: recursion count T must be >= 1");
    if (channels.empty()) throw data_error("arch: needs at least one module");
    for (std::size_t k = 0; k < channels.size(); ++k) {
      if (channels[k] < 2 || channels[k] % 2 != 0)
        throw data_error("arch: channel widths must be even and >= 2, got " +
                         std::to_string(channels[k]));
      if (k + 1 < channels.size() && channels[k + 1] * 2 != channels[k])
        throw data_error("arch: channels must halve strictly, got " +
                         std::to_string(channels[k]) + " -> " + std::to_string(channels[k + 1]));
    }
    if (rot_layers.empty()) throw data_error("arch: rotation net needs at least one hidden layer");
    for (std::size_t w : rot_layers)
      if (w == 0) throw data_error("arch: rotation-net widths must be positive");
  }
};

/// One affine layer: w maps column features, b is its per-channel bias.
struct Layer {
  Mat w;
  Mat b;
};

/// All trainable storage. The decoder's recursive blocks are not listed:
/// they share the `recursive` layers below with the encoder (tied weights),
/// so each appears exactly once.
struct Params {
  ArchConfig cfg;
  Layer embed;                   // channels[0] x P
  std::vector<Layer> recursive;  // k: channels[k] x channels[k] (used by both paths)
  std::vector<Layer> halving;    // k: channels[k]/2 x channels[k]
  Layer middle;                  // d x d, d = repr_dim()
  Layer expand;                  // d x d
  std::vector<Layer> doubling;   // k: channels[k] x channels[k]/2 (decoder only, untied)
  Layer shape_head;              // 3P x 2*channels[0]
  std::vector<Layer> rot;        // hidden rotation layers
  Layer rot_head;                // 6 x rot_layers.back()
};

/// Zero-valued parameters with the shapes the config dictates.
inline Params make_params(const ArchConfig& cfg) {
  cfg.validate();
  Params p;
  p.cfg = cfg;
  const auto& ch = cfg.channels;
  const std::size_t d = cfg.repr_dim();
  p.embed = {Mat(ch[0], cfg.P), Mat(ch[0], 1)};
  for (std::size_t c : ch) {
    p.recursive.push_back({Mat(c, c), Mat(c, 1)});
    p.halving.push_back({Mat(c / 2, c), Mat(c / 2, 1)});
    p.doubling.push_back({Mat(c, c / 2), Mat(c, 1)});
  }
  p.middle = {Mat(d, d), Mat(d, 1)};
  p.expand = {Mat(d, d), Mat(d, 1)};
  p.shape_head = {Mat(3 * cfg.P, 2 * ch[0]), Mat(3 * cfg.P, 1)};
  std::size_t prev = 2 * cfg.P;
  for (std::size_t w : cfg.rot_layers) {
    p.rot.push_back({Mat(w, prev), Mat(w, 1)});
    prev = w;
  }
  p.rot_head = {Mat(6, prev), Mat(6, 1)};
  return p;
}

/// Canonical enumeration of layers: the single source of ordering for
/// initialization, optimizer state, binding, and checkpoints.
inline std::vector<std::pair<std::string, Layer*>> layer_list(Params& p) {
  std::vector<std::pair<std::string, Layer*>> out;
  out.emplace_back("embed", &p.embed);
  for (std::size_t k = 0; k < p.recursive.size(); ++k) {
    out.emplace_back("module" + std::to_string(k) + ".recursive", &p.recursive[k]);
    out.emplace_back("module" + std::to_string(k) + ".halving", &p.halving[k]);
  }
  out.emplace_back("middle", &p.middle);
  out.emplace_back("expand", &p.expand);
  for (std::size_t k = 0; k < p.doubling.size(); ++k)
    out.emplace_back("inverse" + std::to_string(k) + ".doubling", &p.doubling[k]);
  out.emplace_back("shape_head", &p.shape_head);
  for (std::size_t j = 0; j < p.rot.size(); ++j)
    out.emplace_back("rot" + std::to_string(j), &p.rot[j]);
  out.emplace_back("rot_head", &p.rot_head);
  return out;
}

/// Flat weight/bias view in canonical order: for each layer, w then b.
inline std::vector<std::pair<std::string, Mat*>> param_list(Params& p) {
  std::vector<std::pair<std::string, Mat*>> out;
  for (auto& [name, layer] : layer_list(p)) {
    out.emplace_back(name + ".w", &layer->w);
    out.emplace_back(name + ".b", &layer->b);
  }
  return out;
}

/// Read-only view of the canonical enumeration.
inline std::vector<std::pair<std::string, const Mat*>> param_list(const Params& p) {
  std::vector<std::pair<std::string, const Mat*>> out;
  for (auto& [name, m] : param_list(const_cast<Params&>(p))) out.emplace_back(name, m);
  return out;
}

inline std::size_t param_count(const ArchConfig& cfg) {
  Params p = make_params(cfg);
  std::size_t n = 0;
  for (auto& [name, m] : param_list(p)) n += m->rows * m->cols;
  return n;
}

/// Weights uniform on (-sqrt(1/fan_in), +sqrt(1/fan_in)), biases zero;
/// deterministic for a fixed seed.
inline Params init_params(const ArchConfig& cfg, std::uint64_t seed) {
  Params p = make_params(cfg);
  Rng rng(seed);
  for (auto& [name, layer] : layer_list(p)) {
    const double lim = std::sqrt(1.0 / (double)layer->w.cols);
    layer->w = rng.uniform_mat(layer->w.rows, layer->w.cols, -lim, lim);
  }
  return p;
}

// ---------------------------------------------------------------------------
// Tape binding and forward passes

struct BoundLayer {
  ad::Node w;
  ad::Node b;
};

struct BoundParams {
  BoundLayer embed;
  std::vector<BoundLayer> recursive;
  std::vector<BoundLayer> halving;
  BoundLayer middle;
  BoundLayer expand;
  std::vector<BoundLayer> doubling;
  BoundLayer shape_head;
  std::vector<BoundLayer> rot;
  BoundLayer rot_head;
};

/// Create one differentiable leaf per parameter, in canonical order, so
/// gradients can be zipped back onto param_list after a backward pass.
inline BoundParams bind_params(ad::Tape& t, const Params& p) {
  BoundParams b;
  auto bind_one = [&t](const Layer& l) { return BoundLayer{t.leaf(l.w), t.leaf(l.b)}; };
  b.embed = bind_one(p.embed);
  for (std::size_t k = 0; k < p.recursive.size(); ++k) {
    b.recursive.push_back(bind_one(p.recursive[k]));
    b.halving.push_back(bind_one(p.halving[k]));
  }
  b.middle = bind_one(p.middle);
  b.expand = bind_one(p.expand);
  for (auto& l : p.doubling) b.doubling.push_back(bind_one(l));
  b.shape_head = bind_one(p.shape_head);
  for (auto& l : p.rot) b.rot.push_back(bind_one(l));
  b.rot_head = bind_one(p.rot_head);
  return b;
}

/// Leaf nodes in the same order as param_list.
inline std::vector<ad::Node> bound_list(const BoundParams& b) {
  std::vector<ad::Node> out;
  auto both = [&out](const BoundLayer& l) {
    out.push_back(l.w);
    out.push_back(l.b);
  };
  both(b.embed);
  for (std::size_t k = 0; k < b.recursive.size(); ++k) {
    both(b.recursive[k]);
    both(b.halving[k]);
  }
  both(b.middle);
  both(b.expand);
  for (auto& l : b.doubling) both(l);
  both(b.shape_head);
  for (auto& l : b.rot) both(l);
  both(b.rot_head);
  return out;
}

namespace detail {

/// w*x + b broadcast over x's columns.
inline ad::Node affine(ad::Tape& t, const BoundLayer& l, ad::Node x) {
  ad::Node wx = ad::matmul(t, l.w, x);
  const std::size_t cols = t.value(x).cols;
  if (cols == 1) return ad::add(t, wx, l.b);
  ad::Node ones = t.constant(Mat::filled(1, cols, 1.0));
  return ad::add(t, wx, ad::matmul(t, l.b, ones));
}

/// The module core: T tied residual applications, or a single plain layer.
inline ad::Node module_core(ad::Tape& t, ad::Node x, const BoundLayer& rec, std::size_t T,
                            ModuleKind kind) {
  if (kind == ModuleKind::plain)
    return ad::leaky_relu(t, affine(t, rec, x), kLeakySlope);
  ad::Node y = x;
  for (std::size_t i = 0; i < T; ++i)
    y = ad::add(t, ad::leaky_relu(t, affine(t, rec, y), kLeakySlope), y);
  return y;
}

}  // namespace detail

/// The observation as a feature: P channels over 2 spatial positions, i.e.
/// the transpose of W. Constant on the tape (inputs carry no gradient).
inline ad::Node embed_input(ad::Tape& t, const Frame2D& frame) {
  return t.constant(transpose(frame.W));
}

/// One residual-recursive module: the shared layer applied T times with a
/// residual connection, then a channel-halving map.
inline ad::Node rr_module(ad::Tape& t, ad::Node x, const BoundLayer& rec, const BoundLayer& halve,
                          std::size_t T) {
  ad::Node y = detail::module_core(t, x, rec, T, ModuleKind::recursive);
  return detail::affine(t, halve, y);
}

struct ShapeOutputs {
  ad::Node S;       // 3 x P
  ad::Node h;       // d x 1 middle-layer output
  ad::Node h_unit;  // d x 1, unit norm, for contrastive use
};

/// Encoder -> middle (emits h) -> mirrored decoder with tied recursive
/// blocks -> 3D shape head.
inline ShapeOutputs shape_forward(ad::Tape& t, const Frame2D& frame, const BoundParams& bp,
                                  const ArchConfig& cfg) {
  if (frame.points() != cfg.P)
    throw shape_error("shape_forward: frame has " + std::to_string(frame.points()) +
                      " points, arch expects " + std::to_string(cfg.P));
  const auto& ch = cfg.channels;
  const std::size_t n = ch.size(), d = cfg.repr_dim();

  ad::Node x = detail::affine(t, bp.embed, embed_input(t, frame));
  for (std::size_t k = 0; k < n; ++k) {
    x = detail::module_core(t, x, bp.recursive[k], cfg.T, cfg.kind);
    x = detail::affine(t, bp.halving[k], x);
  }

  ad::Node h = detail::affine(t, bp.middle, ad::reshape(t, x, d, 1));
  ad::Node h_unit = ad::l2_normalize(t, h);

  x = ad::reshape(t, detail::affine(t, bp.expand, h), ch[n - 1] / 2, 2);
  for (std::size_t k = n; k-- > 0;) {
    x = detail::affine(t, bp.doubling[k], x);
    x = detail::module_core(t, x, bp.recursive[k], cfg.T, cfg.kind);
  }

  ad::Node s = detail::affine(t, bp.shape_head, ad::reshape(t, x, 2 * ch[0], 1));
  return {ad::reshape(t, s, 3, cfg.P), h, h_unit};
}

/// Hidden layers with activations over the flattened observation, a 6-value
/// head, and SVD orthogonalization to a 2x3 with orthonormal rows.
inline ad::Node rotation_forward(ad::Tape& t, const Frame2D& frame, const BoundParams& bp,
                                 const ArchConfig& cfg) {
  if (frame.points() != cfg.P)
    throw shape_error("rotation_forward: frame has " + std::to_string(frame.points()) +
                      " points, arch expects " + std::to_string(cfg.P));
  ad::Node x = ad::reshape(t, t.constant(frame.W), 2 * cfg.P, 1);
  for (const BoundLayer& l : bp.rot)
    x = ad::leaky_relu(t, detail::affine(t, l, x), kLeakySlope);
  ad::Node six = detail::affine(t, bp.rot_head, x);
  return ad::svd_orthogonalize(t, ad::reshape(t, six, 2, 3));
}

struct FrameOutputs {
  ad::Node S;       // 3 x P
  ad::Node M;       // 2 x 3, orthonormal rows
  ad::Node h;       // d x 1
  ad::Node h_unit;  // d x 1, unit norm
};

inline FrameOutputs forward_frame(ad::Tape& t, const Frame2D& frame, const BoundParams& bp,
                                  const ArchConfig& cfg) {
  ShapeOutputs s = shape_forward(t, frame, bp, cfg);
  ad::Node m = rotation_forward(t, frame, bp, cfg);
  return {s.S, m, s.h, s.h_unit};
}

// ---------------------------------------------------------------------------
// Checkpoints: a versioned JSON container with the config and every
// parameter under its canonical name. Doubles are serialized shortest-round-
// trip, so a save/load cycle is bit-exact.

inline constexpr int kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const Params& params) {
  nlohmann::json j;
  j["format"] = "prrn-checkpoint";
  j["version"] = kCheckpointVersion;
  j["arch"] = {{"channels", params.cfg.channels},
               {"T", params.cfg.T},
               {"rot_layers", params.cfg.rot_layers},
               {"P", params.cfg.P},
               {"kind", params.cfg.kind == ModuleKind::recursive ? "recursive" : "plain"}};
  nlohmann::json jp = nlohmann::json::object();
  for (auto& [name, m] : param_list(params)) {
    for (double v : m->data)
      if (!std::isfinite(v))
        throw data_error("checkpoint: non-finite value in " + name);
    jp[name] = {{"rows", m->rows}, {"cols", m->cols}, {"data", m->data}};
  }
  j["params"] = std::move(jp);
  std::ofstream out(path);
  if (!out) throw data_error("checkpoint: cannot open for writing: " + path);
  out << j.dump();
  if (!out) throw data_error("checkpoint: write failed: " + path);
}

inline Params load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw data_error("checkpoint: cannot open: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("checkpoint: invalid JSON in " + path + ": " + e.what());
  }
  try {
    if (j.at("format") != "prrn-checkpoint")
      throw data_error("checkpoint: unrecognized format field in " + path);
    if (j.at("version") != kCheckpointVersion)
      throw data_error("checkpoint: unsupported version in " + path);
    ArchConfig cfg;
    const auto& ja = j.at("arch");
    cfg.channels = ja.at("channels").get<std::vector<std::size_t>>();
    cfg.T = ja.at("T").get<std::size_t>();
    cfg.rot_layers = ja.at("rot_layers").get<std::vector<std::size_t>>();
    cfg.P = ja.at("P").get<std::size_t>();
    const std::string kind = ja.at("kind").get<std::string>();
    if (kind == "recursive")
      cfg.kind = ModuleKind::recursive;
    else if (kind == "plain")
      cfg.kind = ModuleKind::plain;
    else
      throw data_error("checkpoint: unknown module kind '" + kind + "'");

    Params p = make_params(cfg);
    const auto& jp = j.at("params");
    for (auto& [name, m] : param_list(p)) {
      if (!jp.contains(name)) throw data_error("checkpoint: missing parameter " + name);
      const auto& e = jp.at(name);
      if (e.at("rows").get<std::size_t>() != m->rows ||
          e.at("cols").get<std::size_t>() != m->cols)
        throw data_error("checkpoint: shape mismatch for " + name);
      m->data = e.at("data").get<std::vector<double>>();
      if (m->data.size() != m->rows * m->cols)
        throw data_error("checkpoint: wrong element count for " + name);
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw data_error("checkpoint: malformed container in " + path + ": " + e.what());
  }
}

}  // namespace prrn
