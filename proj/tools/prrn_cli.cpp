// Command-line front end: dataset synthesis, training with ablations,
// evaluation, and representation export.
//
// Exit codes: 0 success, 2 usage or config error, 3 data error,
// 4 numerical failure.  Errors are single lines on stderr with a
// machine-parseable prefix: error[usage]:, error[data]:, error[numeric]:.

#include <CLI11.hpp>
#include <json.hpp>

#include <prrn/prrn.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <type_traits>
#include <vector>

namespace {

using nlohmann::ordered_json;

/// Command-line / config-file mistakes; reported as error[usage], exit 2.
struct usage_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

prrn::DataFormat format_for(const std::string& path) {
  const std::string ext = std::filesystem::path(path).extension().string();
  if (ext == ".json") return prrn::DataFormat::keypoints_json;
  if (ext == ".csv") return prrn::DataFormat::mocap_csv;
  throw prrn::data_error("cannot infer dataset format from extension of " + path +
                         " (expected .json or .csv)");
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string file_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw prrn::data_error("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", (unsigned long long)fnv1a64(ss.str()));
  return buf;
}

std::vector<std::size_t> parse_widths(const std::string& text, const std::string& flag) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t pos = 0;
      const long v = std::stol(cell, &pos);
      if (pos != cell.size() || v <= 0) throw std::invalid_argument(cell);
      out.push_back((std::size_t)v);
    } catch (const std::exception&) {
      throw prrn::data_error(flag + ": expected comma-separated positive integers, got '" + text +
                             "'");
    }
  }
  if (out.empty()) throw prrn::data_error(flag + ": empty width list");
  return out;
}

const char* schedule_name(prrn::RegularizerSchedule s) {
  switch (s) {
    case prrn::RegularizerSchedule::none: return "none";
    case prrn::RegularizerSchedule::alternating: return "alternating";
    case prrn::RegularizerSchedule::contrast_only: return "contrast-only";
    case prrn::RegularizerSchedule::consist_only: return "consist-only";
    case prrn::RegularizerSchedule::joint: return "joint";
  }
  return "?";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  std::size_t p = 20, f = 800, k = 3;
  double noise = 0.0;
  std::uint64_t camera_seed = 1, shape_seed = 2;
  std::string out;
};

int cmd_synth(const SynthArgs& a) {
  prrn::SynthOptions opt;
  opt.P = a.p;
  opt.F = a.f;
  opt.K = a.k;
  opt.noise_ratio = a.noise;
  opt.camera_seed = a.camera_seed;
  opt.shape_seed = a.shape_seed;
  const prrn::Dataset ds = prrn::synthesize(opt);
  prrn::save_dataset(a.out, ds, format_for(a.out));
  std::cout << "wrote " << a.out << ": " << ds.size() << " frames, " << ds.P
            << " points, fingerprint " << file_fingerprint(a.out) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string dataset, out, ablation = "full";
  double split = 0.8;  // 0 disables the train/test split
  std::size_t epochs = 700;
  double lr = 1e-3, decay = 0.95;
  std::size_t batch = 64;
  double lambda1 = 0.1, lambda2 = 0.2, tau = 0.02, xi = 0.04;
  std::size_t bank = 1024, block = 100, t = 3;
  std::string channels = "128,64,32,16,8", rot_layers = "128,32,8";
  std::uint64_t seed = 1;
  std::size_t checkpoint_every = 50, eval_every = 0;
  bool random_rotation = false;
};

const std::vector<std::string> kAblations = {"full", "rrn", "rrn-contrast", "rrn-consist",
                                             "vanilla"};

// -- flat key=value config files -------------------------------------------
// One `key = value` pair per line; blank lines and #-comments allowed.  Keys
// are the train flag names without the leading dashes.  Values given on the
// command line always win over the file.

template <typename T>
T config_value(const std::string& field, const std::string& text);

template <>
std::size_t config_value<std::size_t>(const std::string& field, const std::string& text) {
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(text, &pos);
    if (pos != text.size() || v < 0) throw std::invalid_argument(text);
    return (std::size_t)v;
  } catch (const std::exception&) {
    throw usage_error("config: field '" + field + "': expected a nonnegative integer, got '" +
                      text + "'");
  }
}

template <>
double config_value<double>(const std::string& field, const std::string& text) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(text, &pos);
    if (pos != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw usage_error("config: field '" + field + "': expected a number, got '" + text + "'");
  }
}

template <>
bool config_value<bool>(const std::string& field, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw usage_error("config: field '" + field + "': expected true or false, got '" + text + "'");
}

template <>
std::string config_value<std::string>(const std::string& field, const std::string& text) {
  (void)field;
  return text;
}

std::string config_trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

/// Applies `path` onto `args`, skipping any key whose flag was set on the
/// command line (looked up via its CLI option handle in `given`).
void apply_config_file(const std::string& path, TrainArgs& args,
                       const std::map<std::string, const CLI::Option*>& given) {
  std::ifstream in(path);
  if (!in) throw usage_error("config: cannot open " + path);

  const auto set = [&](const std::string& key, auto* field, std::size_t line,
                       const std::string& value) {
    auto it = given.find(key);
    if (it != given.end() && it->second->count() > 0) return;  // flag overrides file
    (void)line;
    *field = config_value<std::remove_pointer_t<decltype(field)>>(key, value);
  };

  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = config_trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw usage_error("config: line " + std::to_string(line_no) + " is not key = value");
    const std::string key = config_trim(line.substr(0, eq));
    const std::string value = config_trim(line.substr(eq + 1));
    if (key.empty() || value.empty())
      throw usage_error("config: line " + std::to_string(line_no) + " has an empty key or value");

    if (key == "ablation") {
      set(key, &args.ablation, line_no, value);
      if (std::find(kAblations.begin(), kAblations.end(), args.ablation) == kAblations.end())
        throw usage_error("config: field 'ablation': unknown variant '" + value + "'");
    } else if (key == "split") {
      set(key, &args.split, line_no, value);
    } else if (key == "epochs") {
      set(key, &args.epochs, line_no, value);
    } else if (key == "lr") {
      set(key, &args.lr, line_no, value);
    } else if (key == "decay") {
      set(key, &args.decay, line_no, value);
    } else if (key == "batch") {
      set(key, &args.batch, line_no, value);
    } else if (key == "lambda1") {
      set(key, &args.lambda1, line_no, value);
    } else if (key == "lambda2") {
      set(key, &args.lambda2, line_no, value);
    } else if (key == "tau") {
      set(key, &args.tau, line_no, value);
    } else if (key == "xi") {
      set(key, &args.xi, line_no, value);
    } else if (key == "bank") {
      set(key, &args.bank, line_no, value);
    } else if (key == "block") {
      set(key, &args.block, line_no, value);
    } else if (key == "channels") {
      set(key, &args.channels, line_no, value);
    } else if (key == "rot-layers") {
      set(key, &args.rot_layers, line_no, value);
    } else if (key == "t") {
      set(key, &args.t, line_no, value);
    } else if (key == "seed") {
      set(key, &args.seed, line_no, value);
    } else if (key == "checkpoint-every") {
      set(key, &args.checkpoint_every, line_no, value);
    } else if (key == "eval-every") {
      set(key, &args.eval_every, line_no, value);
    } else if (key == "random-rotation") {
      set(key, &args.random_rotation, line_no, value);
    } else {
      throw usage_error("config: unknown field '" + key + "' on line " +
                        std::to_string(line_no));
    }
  }
}

prrn::TrainConfig to_train_config(const TrainArgs& a, std::size_t points) {
  prrn::TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.lr = a.lr;
  cfg.decay = a.decay;
  cfg.batch = a.batch;
  cfg.weights.lambda1 = a.lambda1;
  cfg.weights.lambda2 = a.lambda2;
  cfg.thresholds.tau = a.tau;
  cfg.thresholds.xi = a.xi;
  cfg.bank_capacity = a.bank;
  cfg.block_epochs = a.block;
  cfg.random_rotation = a.random_rotation;
  cfg.seed = a.seed;
  cfg.checkpoint_every = a.checkpoint_every;
  cfg.eval_every = a.eval_every;
  cfg.arch.channels = parse_widths(a.channels, "--channels");
  cfg.arch.rot_layers = parse_widths(a.rot_layers, "--rot-layers");
  cfg.arch.T = a.t;
  cfg.arch.P = points;

  if (a.ablation == "full") {
    cfg.schedule = prrn::RegularizerSchedule::alternating;
  } else if (a.ablation == "rrn") {
    cfg.schedule = prrn::RegularizerSchedule::none;
  } else if (a.ablation == "rrn-contrast") {
    cfg.schedule = prrn::RegularizerSchedule::contrast_only;
  } else if (a.ablation == "rrn-consist") {
    cfg.schedule = prrn::RegularizerSchedule::consist_only;
  } else if (a.ablation == "vanilla") {
    cfg.schedule = prrn::RegularizerSchedule::none;
    cfg.arch.kind = prrn::ModuleKind::plain;
  } else {
    throw prrn::data_error("unknown ablation '" + a.ablation + "'");
  }
  return cfg;
}

ordered_json manifest_json(const TrainArgs& a, const prrn::TrainConfig& cfg,
                           const prrn::Dataset& ds, const std::string& fingerprint) {
  ordered_json m;
  m["format"] = "prrn-manifest";
  m["tool_version"] = prrn::kVersion;
  m["command"] = "train";
  m["dataset"] = {{"path", a.dataset},
                  {"fingerprint", fingerprint},
                  {"name", ds.name},
                  {"frames", ds.size()},
                  {"points", ds.P}};
  m["seed"] = cfg.seed;
  m["ablation"] = a.ablation;
  ordered_json c;
  c["epochs"] = cfg.epochs;
  c["lr"] = cfg.lr;
  c["decay"] = cfg.decay;
  c["batch"] = cfg.batch;
  c["lambda1"] = cfg.weights.lambda1;
  c["lambda2"] = cfg.weights.lambda2;
  c["tau"] = cfg.thresholds.tau;
  c["xi"] = cfg.thresholds.xi;
  c["bank"] = cfg.bank_capacity;
  c["block"] = cfg.block_epochs;
  c["schedule"] = schedule_name(cfg.schedule);
  c["random_rotation"] = cfg.random_rotation;
  c["channels"] = cfg.arch.channels;
  c["rot_layers"] = cfg.arch.rot_layers;
  c["t"] = cfg.arch.T;
  c["p"] = cfg.arch.P;
  c["kind"] = cfg.arch.kind == prrn::ModuleKind::recursive ? "recursive" : "plain";
  c["split"] = a.split;
  c["checkpoint_every"] = cfg.checkpoint_every;
  c["eval_every"] = cfg.eval_every;
  m["config"] = std::move(c);
  m["parameters"] = prrn::param_count(cfg.arch);
  m["artifacts"] = {{"log", a.out + "/train_log.jsonl"},
                    {"checkpoint_dir", a.out},
                    {"final_checkpoint", a.out + "/checkpoint-final.json"}};
  return m;
}

int cmd_train(const TrainArgs& a) {
  const prrn::Dataset full = prrn::load_dataset(a.dataset, format_for(a.dataset));
  const std::string fingerprint = file_fingerprint(a.dataset);

  prrn::Dataset train_ds;
  prrn::Dataset test_ds;
  bool have_test = false;
  if (a.split == 0.0) {
    train_ds = full;
  } else {
    auto parts = prrn::split_train_test(full, a.split);
    train_ds = std::move(parts.first);
    test_ds = std::move(parts.second);
    have_test = true;
  }

  prrn::TrainConfig cfg = to_train_config(a, full.P);
  cfg.checkpoint_dir = a.out;
  cfg.validate();

  std::filesystem::create_directories(a.out);
  {
    std::ofstream mout(a.out + "/manifest.json");
    if (!mout) throw prrn::data_error("cannot write manifest in " + a.out);
    mout << manifest_json(a, cfg, full, fingerprint).dump(2) << "\n";
  }

  std::cout << "ablation " << a.ablation << ", schedule " << schedule_name(cfg.schedule) << "\n";
  std::cout << "parameters: " << prrn::param_count(cfg.arch) << "\n";
  std::cout << "training on " << train_ds.size() << " frames"
            << (have_test ? " (holding out " + std::to_string(test_ds.size()) + ")" : "") << "\n";

  const prrn::TrainResult res = prrn::train(train_ds, cfg, have_test ? &test_ds : nullptr);
  prrn::save_train_log(res.log, a.out + "/train_log.jsonl");
  prrn::save_checkpoint(a.out + "/checkpoint-final.json", res.params);

  if (!res.log.empty()) {
    const prrn::EpochLog& last = res.log.back();
    std::cout << "final reprojection loss " << last.loss_reproj << "\n";
    if (last.e3d_train) std::cout << "final train e3D " << *last.e3d_train << "\n";
    if (last.e3d_test) std::cout << "final test e3D " << *last.e3d_test << "\n";
  }
  std::cout << "wrote " << a.out << "/train_log.jsonl and " << a.out << "/checkpoint-final.json\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint, dataset, out;
};

int cmd_eval(const EvalArgs& a) {
  const prrn::Params params = prrn::load_checkpoint(a.checkpoint);
  const prrn::Dataset ds = prrn::load_dataset(a.dataset, format_for(a.dataset));
  if (ds.P != params.cfg.P)
    throw prrn::data_error("checkpoint expects " + std::to_string(params.cfg.P) +
                           " keypoints but dataset '" + ds.name + "' has " +
                           std::to_string(ds.P));
  const prrn::EvalReport rep = prrn::evaluate(params, params.cfg, ds);
  prrn::save_report(rep, a.out);
  std::cout << "mean e3D " << rep.mean << " over " << rep.frames << " frames\n";
  std::cout << "wrote " << a.out << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

struct ExportArgs {
  std::string checkpoint, dataset, out;
};

int cmd_export_repr(const ExportArgs& a) {
  const prrn::Params params = prrn::load_checkpoint(a.checkpoint);
  const prrn::Dataset ds = prrn::load_dataset(a.dataset, format_for(a.dataset));
  if (ds.P != params.cfg.P)
    throw prrn::data_error("checkpoint expects " + std::to_string(params.cfg.P) +
                           " keypoints but dataset '" + ds.name + "' has " +
                           std::to_string(ds.P));
  const std::size_t d = params.cfg.repr_dim();
  std::ofstream out(a.out);
  if (!out) throw prrn::data_error("cannot write " + a.out);
  out << "frame";
  for (std::size_t j = 0; j < d; ++j) out << ",h" << j;
  out << "\n";
  char cell[32];
  for (const prrn::Frame2D& f : ds.frames) {
    prrn::ad::Tape t;
    prrn::BoundParams bp = prrn::bind_params(t, params);
    prrn::FrameOutputs fo = prrn::forward_frame(t, f, bp, params.cfg);
    const prrn::Mat& h = t.value(fo.h_unit);
    out << f.index;
    for (std::size_t j = 0; j < d; ++j) {
      std::snprintf(cell, sizeof cell, "%.17g", h(j, 0));
      out << "," << cell;
    }
    out << "\n";
  }
  std::cout << "wrote " << a.out << ": " << ds.size() << " representation rows of width " << d
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Non-rigid structure from motion: recursive networks with pairwise rigidity "
               "regularizers"};
  app.set_version_flag("--version", std::string(prrn::kVersion));
  app.require_subcommand(1);

  SynthArgs sa;
  CLI::App* synth = app.add_subcommand("synth", "Generate a synthetic low-rank dataset");
  synth->add_option("--p", sa.p, "Keypoints per frame")->capture_default_str();
  synth->add_option("--f", sa.f, "Number of frames")->capture_default_str();
  synth->add_option("--k", sa.k, "Number of basis shapes")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Noise-to-signal ratio")->capture_default_str();
  synth->add_option("--camera-seed", sa.camera_seed, "Camera RNG seed")->capture_default_str();
  synth->add_option("--shape-seed", sa.shape_seed, "Shape RNG seed")->capture_default_str();
  synth->add_option("--out", sa.out, "Output dataset path (.json or .csv)")->required();

  TrainArgs ta;
  std::string config_path;
  std::map<std::string, const CLI::Option*> train_opts;
  CLI::App* train = app.add_subcommand("train", "Train a model on a dataset");
  train->add_option("--config", config_path, "Flat key=value config file; flags override it");
  train->add_option("--dataset", ta.dataset, "Dataset path (.json or .csv)")->required();
  train->add_option("--out", ta.out, "Output directory for manifest, log, checkpoints")
      ->required();
  train_opts["ablation"] =
      train
          ->add_option("--ablation", ta.ablation,
                       "Variant: full, rrn, rrn-contrast, rrn-consist, vanilla")
          ->check(CLI::IsMember(kAblations))
          ->capture_default_str();
  train_opts["split"] =
      train->add_option("--split", ta.split, "Train fraction; 0 trains on every frame")
          ->capture_default_str();
  train_opts["epochs"] =
      train->add_option("--epochs", ta.epochs, "Training epochs")->capture_default_str();
  train_opts["lr"] =
      train->add_option("--lr", ta.lr, "Initial learning rate")->capture_default_str();
  train_opts["decay"] = train->add_option("--decay", ta.decay, "Per-epoch learning-rate decay")
                            ->capture_default_str();
  train_opts["batch"] = train->add_option("--batch", ta.batch, "Batch size")
                            ->capture_default_str();
  train_opts["lambda1"] =
      train->add_option("--lambda1", ta.lambda1, "Contrastive loss weight")
          ->capture_default_str();
  train_opts["lambda2"] =
      train->add_option("--lambda2", ta.lambda2, "Consistency loss weight")
          ->capture_default_str();
  train_opts["tau"] = train->add_option("--tau", ta.tau, "Rigidity threshold for positives")
                          ->capture_default_str();
  train_opts["xi"] = train->add_option("--xi", ta.xi, "Rigidity threshold for negatives")
                         ->capture_default_str();
  train_opts["bank"] =
      train->add_option("--bank", ta.bank, "Memory bank capacity")->capture_default_str();
  train_opts["block"] =
      train->add_option("--block", ta.block, "Alternating-schedule block length in epochs")
          ->capture_default_str();
  train_opts["channels"] =
      train->add_option("--channels", ta.channels, "Module widths, halving, comma-separated")
          ->capture_default_str();
  train_opts["rot-layers"] =
      train->add_option("--rot-layers", ta.rot_layers, "Rotation-net hidden widths")
          ->capture_default_str();
  train_opts["t"] =
      train->add_option("--t", ta.t, "Recursion count per module")->capture_default_str();
  train_opts["seed"] = train->add_option("--seed", ta.seed, "Run seed")->capture_default_str();
  train_opts["checkpoint-every"] =
      train->add_option("--checkpoint-every", ta.checkpoint_every, "Checkpoint cadence in epochs")
          ->capture_default_str();
  train_opts["eval-every"] =
      train
          ->add_option("--eval-every", ta.eval_every, "3D-error cadence in epochs; 0 = final only")
          ->capture_default_str();
  train_opts["random-rotation"] =
      train->add_flag("--random-rotation", ta.random_rotation,
                      "Consistency variant: resample the camera instead of exchanging");

  EvalArgs ea;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint against ground truth");
  eval_cmd->add_option("--checkpoint", ea.checkpoint, "Checkpoint path")->required();
  eval_cmd->add_option("--dataset", ea.dataset, "Dataset path with ground truth")->required();
  eval_cmd->add_option("--out", ea.out, "Report output path (.json)")->required();

  ExportArgs xa;
  CLI::App* exp = app.add_subcommand("export-repr", "Export per-frame shape representations");
  exp->add_option("--checkpoint", xa.checkpoint, "Checkpoint path")->required();
  exp->add_option("--dataset", xa.dataset, "Dataset path")->required();
  exp->add_option("--out", xa.out, "CSV output path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help / --version
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) return cmd_synth(sa);
    if (train->parsed()) {
      if (!config_path.empty()) apply_config_file(config_path, ta, train_opts);
      return cmd_train(ta);
    }
    if (eval_cmd->parsed()) return cmd_eval(ea);
    if (exp->parsed()) return cmd_export_repr(xa);
    std::cerr << "error[usage]: no subcommand\n";
    return 2;
  } catch (const usage_error& e) {
    std::cerr << "error[usage]: " << e.what() << "\n";
    return 2;
  } catch (const prrn::numeric_error& e) {
    std::cerr << "error[numeric]: " << e.what() << "\n";
    return 4;
  } catch (const prrn::error& e) {
    std::cerr << "error[data]: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error[internal]: " << e.what() << "\n";
    return 1;
  }
}
