#include "cli.hpp"

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <ostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"

#include "iscf/ablation.hpp"
#include "iscf/autodiff.hpp"
#include "iscf/bench.hpp"
#include "iscf/data.hpp"
#include "iscf/errors.hpp"
#include "iscf/gradcheck_suite.hpp"
#include "iscf/model.hpp"
#include "iscf/ops.hpp"
#include "iscf/pipeline.hpp"

namespace iscf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Raised for conditions the command itself judges as failed verification.
struct CheckFailed : Error {
  using Error::Error;
};

// ---------------------------------------------------------------------------
// Run configuration: JSON file with sections, overridden by flags.

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  SynthSpec synth;
  std::string data;
  std::string out;
};

json synth_to_json(const SynthSpec& s) {
  return {{"count", s.count},       {"min_ellipses", s.min_ellipses}, {"max_ellipses", s.max_ellipses},
          {"min_fraction", s.min_fraction}, {"max_fraction", s.max_fraction}, {"noise", s.noise},
          {"texture", s.texture},   {"contrast", s.contrast},         {"seed", s.seed}};
}

template <typename T>
void read_key(const json& j, const char* section, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    j.at(key).get_to(field);
  } catch (const json::exception& e) {
    throw InvalidConfig(std::string(section) + "." + key + ": " + e.what());
  }
}

void synth_from_json(const json& j, SynthSpec& s) {
  if (!j.is_object()) throw InvalidConfig("synth section must be an object");
  static const std::set<std::string> known = {"count",        "min_ellipses", "max_ellipses",
                                              "min_fraction", "max_fraction", "noise",
                                              "texture",      "contrast",     "seed"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("unknown synth config key '" + key + "'");
  }
  read_key(j, "synth", "count", s.count);
  read_key(j, "synth", "min_ellipses", s.min_ellipses);
  read_key(j, "synth", "max_ellipses", s.max_ellipses);
  read_key(j, "synth", "min_fraction", s.min_fraction);
  read_key(j, "synth", "max_fraction", s.max_fraction);
  read_key(j, "synth", "noise", s.noise);
  read_key(j, "synth", "texture", s.texture);
  read_key(j, "synth", "contrast", s.contrast);
  read_key(j, "synth", "seed", s.seed);
}

json to_json(const RunConfig& c) {
  return {{"model", c.model}, {"train", c.train}, {"synth", synth_to_json(c.synth)}, {"data", c.data}, {"out", c.out}};
}

RunConfig load_run_config(const std::string& path) {
  RunConfig c;
  if (path.empty()) return c;
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot read config file '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw InvalidConfig("config file '" + path + "' is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw InvalidConfig("config file must hold a JSON object");
  static const std::set<std::string> known = {"model", "train", "synth", "data", "out"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw InvalidConfig("unknown config key '" + key + "'");
  }
  if (j.contains("model")) c.model = j["model"].get<ModelConfig>();
  if (j.contains("train")) c.train = j["train"].get<TrainConfig>();
  if (j.contains("synth")) synth_from_json(j["synth"], c.synth);
  read_key(j, "config", "data", c.data);
  read_key(j, "config", "out", c.out);
  return c;
}

/// Flags shared by train and ablate. Unset flags leave the config untouched.
struct Overrides {
  std::string config;
  std::optional<std::string> data, out;
  bool synth = false;
  std::optional<int> epochs, batch_size, base_width, blocks, heads;
  std::optional<double> lr, threshold, val_fraction;
  std::optional<std::uint64_t> seed, synth_seed;
  std::optional<std::int64_t> hw, synth_count;
  std::optional<std::vector<int>> iscf_stages;

  void attach(CLI::App* app, bool with_stages) {
    app->add_option("--config", config, "JSON run configuration");
    app->add_option("--data", data, "directory of <id>.ppm / <id>_mask.pgm pairs");
    app->add_flag("--synth", synth, "use the synthetic ellipse dataset");
    app->add_option("--out", out, "output directory");
    app->add_option("--epochs", epochs);
    app->add_option("--batch-size", batch_size);
    app->add_option("--lr", lr);
    app->add_option("--threshold", threshold);
    app->add_option("--val-fraction", val_fraction);
    app->add_option("--seed", seed, "seed for initialization and data order");
    app->add_option("--base-width", base_width, "d1; stage widths are d1, 2d1, 4d1");
    app->add_option("--blocks", blocks, "transformer blocks per stage");
    app->add_option("--heads", heads);
    app->add_option("--hw", hw, "input height = width (multiple of 32)");
    app->add_option("--synth-count", synth_count);
    app->add_option("--synth-seed", synth_seed);
    if (with_stages) app->add_option("--iscf-stages", iscf_stages, "enabled fusion stages, e.g. 1,2,3")->delimiter(',');
  }

  RunConfig resolve() const {
    RunConfig c = load_run_config(config);
    if (data) c.data = *data;
    if (out) c.out = *out;
    if (epochs) c.train.epochs = *epochs;
    if (batch_size) c.train.batch_size = *batch_size;
    if (lr) c.train.lr = *lr;
    if (threshold) c.train.threshold = *threshold;
    if (val_fraction) c.train.val_fraction = *val_fraction;
    if (seed) c.train.seed = c.model.seed = *seed;
    if (base_width) c.model.base_width = *base_width;
    if (blocks) c.model.blocks_per_stage = *blocks;
    if (heads) c.model.heads = *heads;
    if (hw) c.model.input_h = c.model.input_w = *hw;
    if (iscf_stages) c.model.iscf_stages = normalize_stages(*iscf_stages);
    if (synth_count) c.synth.count = *synth_count;
    if (synth_seed) c.synth.seed = *synth_seed;
    c.synth.h = c.model.input_h;
    c.synth.w = c.model.input_w;
    c.model.validate();
    c.train.validate();
    c.synth.validate();
    if (synth && !c.data.empty()) throw InvalidConfig("--synth and --data are mutually exclusive");
    if (!synth && c.data.empty()) throw InvalidConfig("no dataset: pass --data DIR or --synth");
    if (c.out.empty()) throw InvalidConfig("no output directory: pass --out DIR");
    return c;
  }
};

// ---------------------------------------------------------------------------
// Helpers

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  out << text;
}

/// Prints the effective configuration and stores it as `path`.
void echo_config(std::ostream& out, const json& cfg, const fs::path& path) {
  out << "effective configuration:\n" << cfg.dump(2) << "\n";
  write_text(path, cfg.dump(2) + "\n");
}

std::vector<Sample> samples_of(std::vector<SynthSample> synth) {
  std::vector<Sample> out;
  out.reserve(synth.size());
  for (auto& s : synth) out.push_back(std::move(s.sample));
  return out;
}

std::vector<Sample> load_samples(const RunConfig& c) {
  std::vector<Sample> samples =
      c.data.empty() ? samples_of(synth_dataset(c.synth)) : load_dataset(c.data, c.model.input_h, c.model.input_w);
  if (samples.empty()) throw IoError("dataset '" + (c.data.empty() ? std::string("synthetic") : c.data) + "' holds no samples");
  return samples;
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string metrics_line(const Metrics& m) {
  return "DSC " + fmt(m.dsc) + "  SE " + fmt(m.se) + "  SP " + fmt(m.sp) + "  ACC " + fmt(m.acc);
}

// ---------------------------------------------------------------------------
// Commands

int cmd_train(const Overrides& o, std::ostream& out) {
  const RunConfig c = o.resolve();
  const fs::path dir = c.out;
  fs::create_directories(dir);
  echo_config(out, to_json(c), dir / "effective-config.json");

  const auto [train_set, val_set] = split_train_val(load_samples(c), c.train.val_fraction, c.train.seed);
  out << "train " << train_set.size() << " samples, val " << val_set.size() << " samples, "
      << param_count(build(c.model)) << " parameters\n";

  TrainOptions opts;
  opts.out_dir = dir;
  const auto t0 = std::chrono::steady_clock::now();
  opts.on_epoch = [&](const HistoryRow& r) {
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out << "epoch " << r.epoch << "/" << c.train.epochs << "  loss " << fmt(r.train_loss, 5) << "  val "
        << metrics_line({r.val_dsc, r.val_se, r.val_sp, r.val_acc}) << "  (" << fmt(secs, 1) << " s)\n"
        << std::flush;
  };
  const TrainResult r = train(c.model, c.train, train_set, val_set, opts);
  out << "best val DSC " << fmt(r.best_val_dsc) << " at epoch " << r.best_epoch << "; artifacts in " << dir.string()
      << "\n";
  return kOk;
}

struct EvalOptions {
  std::string ckpt, data, out;
  bool synth = false, overlays = false;
  double threshold = 0.5;
  std::optional<std::int64_t> synth_count;
  std::optional<std::uint64_t> synth_seed;
};

int cmd_eval(const EvalOptions& o, std::ostream& out) {
  if (o.synth == !o.data.empty()) throw InvalidConfig("pass exactly one of --data DIR or --synth");
  if (!(o.threshold >= 0 && o.threshold <= 1)) throw InvalidConfig("--threshold must lie in [0,1]");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  SynthSpec spec;
  spec.h = ck.config.input_h;
  spec.w = ck.config.input_w;
  if (o.synth_count) spec.count = *o.synth_count;
  if (o.synth_seed) spec.seed = *o.synth_seed;

  const fs::path dir = o.out;
  fs::create_directories(dir);
  json cfg = {{"command", "eval"}, {"ckpt", o.ckpt},         {"data", o.data},      {"synth", o.synth},
              {"threshold", o.threshold}, {"overlays", o.overlays}, {"model", ck.config}};
  if (o.synth) cfg["synth_spec"] = synth_to_json(spec);
  echo_config(out, cfg, dir / "effective-config.json");

  const std::vector<Sample> samples =
      o.synth ? samples_of(synth_dataset(spec)) : load_dataset(o.data, ck.config.input_h, ck.config.input_w);
  if (samples.empty()) throw IoError("dataset '" + o.data + "' holds no samples");
  const MetricsReport report = evaluate(ck.params, ck.config, samples, o.threshold);
  write_text(dir / "metrics.json", iscf::to_json(report).dump(2) + "\n");

  if (o.overlays) {
    const Tensor pred = binarize(predict(ck.params, ck.config, samples), o.threshold);
    fs::create_directories(dir / "overlays");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const Tensor p = ops::slice(pred, 0, static_cast<std::int64_t>(i), 1);
      overlay_contours(samples[i].image, samples[i].mask, p.reshaped(samples[i].mask.shape()),
                       dir / "overlays" / (samples[i].id + ".ppm"));
    }
  }
  out << samples.size() << " samples\n"
      << "micro           " << metrics_line(report.micro) << "\n"
      << "per-sample mean " << metrics_line(report.per_sample_mean) << "\n";
  return kOk;
}

struct InferOptions {
  std::string ckpt, image, out, overlay;
  double threshold = 0.5;
};

int cmd_infer(const InferOptions& o, std::ostream& out) {
  if (!(o.threshold >= 0 && o.threshold <= 1)) throw InvalidConfig("--threshold must lie in [0,1]");
  const Checkpoint ck = load_checkpoint(o.ckpt);
  const Image8 raw = read_pnm(o.image);
  if (raw.channels != 3) throw MalformedPnm(o.image + ": expected a P6 colour image");
  echo_config(out,
              {{"command", "infer"}, {"ckpt", o.ckpt}, {"image", o.image}, {"out", o.out}, {"overlay", o.overlay},
               {"threshold", o.threshold}, {"model", ck.config}},
              fs::path(o.out).string() + ".config.json");

  const Tensor input = resize_bilinear(raw, ck.config.input_h, ck.config.input_w);
  const Tensor logits = forward(input.reshaped({1, 3, ck.config.input_h, ck.config.input_w}), ck.params, ck.config).logits;
  const Tensor small = binarize(logits, o.threshold).reshaped({1, ck.config.input_h, ck.config.input_w});

  // Back to the source extents with nearest-neighbour sampling.
  const Tensor mask = resize_mask_nearest(tensor_to_image(small), raw.height, raw.width);
  write_pnm(o.out, tensor_to_image(mask));
  if (!o.overlay.empty()) overlay_contours(image_to_tensor(raw), Tensor::zeros(mask.shape()), mask, o.overlay);

  double positive = 0;
  for (double v : mask.data()) positive += v;
  out << "wrote " << o.out << " (" << raw.width << "x" << raw.height << ", "
      << fmt(100.0 * positive / static_cast<double>(mask.numel()), 1) << "% foreground)\n";
  return kOk;
}

struct GradcheckOptions {
  std::string scope = "all";
  std::string corrupt_op;
};

int cmd_gradcheck(const GradcheckOptions& o, std::ostream& out, std::ostream& err) {
  std::vector<std::string> scopes;
  if (o.scope == "all") {
    scopes = gradcheck_scopes();
  } else {
    gradcheck_threshold(o.scope);  // validates
    scopes = {o.scope};
  }
  out << "effective configuration:\n"
      << json{{"command", "gradcheck"}, {"scope", o.scope}, {"corrupt_op", o.corrupt_op}}.dump(2) << "\n";
  Tape::set_corrupted_op(o.corrupt_op);

  std::vector<GradTarget> failed;
  for (const auto& scope : scopes) {
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& t : run_gradcheck(scope)) {
      out << std::left << std::setw(11) << t.scope << std::setw(28) << t.name << " max rel err "
          << std::scientific << std::setprecision(2) << t.max_rel_error << " (< " << t.threshold << ")  "
          << std::defaultfloat << (t.passed() ? "ok" : "FAIL") << "  [" << t.probes << " probes]\n";
      if (!t.passed()) failed.push_back(t);
    }
    out << scope << ": " << fmt(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count(), 1)
        << " s\n";
  }
  Tape::set_corrupted_op("");
  if (!failed.empty()) {
    err << "gradient check failed for:";
    for (const auto& t : failed) err << ' ' << t.scope << '/' << t.name;
    err << '\n';
    return kCheckFailed;
  }
  out << "all gradient checks passed\n";
  return kOk;
}

struct BenchCliOptions {
  BenchOptions bench;
  std::string out;
};

int cmd_bench(const BenchCliOptions& o, std::ostream& out) {
  if (o.out.empty()) throw InvalidConfig("pass --out FILE.csv");
  echo_config(out,
              {{"command", "bench-attn"}, {"n_list", o.bench.n_list}, {"d", o.bench.d},
               {"variants", o.bench.variants}, {"repeats", o.bench.repeats}, {"seed", o.bench.seed},
               {"out", o.out}},
              o.out + ".config.json");

  const double assoc = associativity_check(o.bench.n_list, o.bench.d, o.bench.seed);
  out << "associativity oracle: max rel err " << std::scientific << std::setprecision(2) << assoc
      << std::defaultfloat << "\n";
  if (!(assoc < 1e-9)) throw CheckFailed("efficient and explicit attention disagree (rel err " + std::to_string(assoc) + ")");

  const auto rows = bench_attention(o.bench);
  write_text(o.out, bench_csv(rows));
  for (const auto& r : rows) {
    out << std::left << std::setw(10) << r.variant << " n=" << std::setw(6) << r.n << fmt(r.wall_ns / 1e6, 3)
        << " ms  " << r.bytes_allocated << " bytes\n";
  }
  for (const auto& v : o.bench.variants) out << "log-log slope " << v << ": " << fmt(loglog_slope(rows, v), 3) << "\n";
  return kOk;
}

struct AblateOptions {
  Overrides run;
  std::vector<std::string> scales = {"1", "12", "123"};
};

int cmd_ablate(const AblateOptions& o, std::ostream& out) {
  const RunConfig c = o.run.resolve();
  std::vector<StageSet> settings;
  for (const auto& s : o.scales) settings.push_back(parse_scale_setting(s));
  const fs::path dir = c.out;
  fs::create_directories(dir);
  json cfg = to_json(c);
  cfg["scales"] = o.scales;
  echo_config(out, cfg, dir / "effective-config.json");

  const auto [train_set, val_set] = split_train_val(load_samples(c), c.train.val_fraction, c.train.seed);
  std::vector<AblationRow> rows;
  ablate(c.model, c.train, train_set, val_set, settings, [&](const AblationRow& r) {
    rows.push_back(r);
    write_text(dir / "ablation.csv", ablation_csv(rows));
    out << "scales {" << r.setting << "} @" << r.input_hw << ": " << metrics_line(r.val) << "  params " << r.params
        << (r.reference ? "  (reference DSC " + fmt(*r.reference) + ")" : std::string()) << "\n"
        << std::flush;
  });
  out << "wrote " << (dir / "ablation.csv").string()
      << "\nreference values are ISIC 2018 results of the original work, shown for context only\n";
  return kOk;
}

struct SynthOptions {
  std::string out;
  SynthSpec spec;
  std::int64_t hw = 64;
};

int cmd_synth(SynthOptions o, std::ostream& out) {
  if (o.out.empty()) throw InvalidConfig("pass --out DIR");
  o.spec.h = o.spec.w = o.hw;
  o.spec.validate();
  fs::create_directories(o.out);
  json cfg = synth_to_json(o.spec);
  cfg["hw"] = o.hw;
  echo_config(out, {{"command", "synth-data"}, {"out", o.out}, {"synth", cfg}}, fs::path(o.out) / "effective-config.json");
  for (const auto& s : synth_dataset(o.spec)) save_sample(o.out, s.sample);
  out << "wrote " << o.spec.count << " image/mask pairs to " << o.out << "\n";
  return kOk;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"U-shaped efficient-attention transformer with inter-scale context fusion"};
  app.require_subcommand(1);
  app.footer("exit codes: 0 ok, 1 configuration error, 2 data/checkpoint error, 3 non-finite loss, "
             "4 verification failure, 5 internal error");

  Overrides train_opts;
  auto* train_cmd = app.add_subcommand("train", "train a model and keep the best-validation checkpoint");
  train_opts.attach(train_cmd, true);

  EvalOptions eval_opts;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (micro and per-sample metrics)");
  eval_cmd->add_option("--ckpt", eval_opts.ckpt)->required();
  eval_cmd->add_option("--data", eval_opts.data);
  eval_cmd->add_flag("--synth", eval_opts.synth);
  eval_cmd->add_option("--synth-count", eval_opts.synth_count);
  eval_cmd->add_option("--synth-seed", eval_opts.synth_seed);
  eval_cmd->add_option("--out", eval_opts.out)->required();
  eval_cmd->add_option("--threshold", eval_opts.threshold);
  eval_cmd->add_flag("--overlays", eval_opts.overlays, "write one contour overlay PPM per sample");

  InferOptions infer_opts;
  auto* infer_cmd = app.add_subcommand("infer", "predict the mask of one P6 image");
  infer_cmd->add_option("--ckpt", infer_opts.ckpt)->required();
  infer_cmd->add_option("--image", infer_opts.image)->required();
  infer_cmd->add_option("--out", infer_opts.out, "output P5 mask")->required();
  infer_cmd->add_option("--overlay", infer_opts.overlay, "optional contour overlay P6");
  infer_cmd->add_option("--threshold", infer_opts.threshold);

  GradcheckOptions gc_opts;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  gc_cmd->add_option("--scope", gc_opts.scope, "primitives|blocks|iscf|model|all");
  gc_cmd->add_option("--corrupt-op", gc_opts.corrupt_op, "test fixture: scale this op's backward by 1.25");

  BenchCliOptions bench_opts;
  auto* bench_cmd = app.add_subcommand("bench-attn", "efficient vs standard attention scaling");
  bench_cmd->add_option("--n-list", bench_opts.bench.n_list)->delimiter(',');
  bench_cmd->add_option("--d", bench_opts.bench.d);
  bench_cmd->add_option("--variants", bench_opts.bench.variants)->delimiter(',');
  bench_cmd->add_option("--repeats", bench_opts.bench.repeats);
  bench_cmd->add_option("--seed", bench_opts.bench.seed);
  bench_cmd->add_option("--out", bench_opts.out, "CSV output")->required();

  AblateOptions ablate_opts;
  auto* ablate_cmd = app.add_subcommand("ablate", "train one model per fusion-scale setting");
  ablate_opts.run.attach(ablate_cmd, false);
  ablate_cmd->add_option("--scales", ablate_opts.scales, "settings such as 1,12,123")->delimiter(',');

  SynthOptions synth_opts;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic ellipse dataset as NetPBM pairs");
  synth_cmd->add_option("--out", synth_opts.out)->required();
  synth_cmd->add_option("--count", synth_opts.spec.count);
  synth_cmd->add_option("--hw", synth_opts.hw);
  synth_cmd->add_option("--seed", synth_opts.spec.seed);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kConfigError;
  }

  try {
    if (*train_cmd) return cmd_train(train_opts, out);
    if (*eval_cmd) return cmd_eval(eval_opts, out);
    if (*infer_cmd) return cmd_infer(infer_opts, out);
    if (*gc_cmd) return cmd_gradcheck(gc_opts, out, err);
    if (*bench_cmd) return cmd_bench(bench_opts, out);
    if (*ablate_cmd) return cmd_ablate(ablate_opts, out);
    if (*synth_cmd) return cmd_synth(synth_opts, out);
  } catch (const InvalidConfig& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const InvalidSpec& e) {
    err << "configuration error: " << e.what() << "\n";
    return kConfigError;
  } catch (const NonFiniteLoss& e) {
    err << "training aborted: " << e.what() << "\n";
    return kNonFiniteLoss;
  } catch (const CheckFailed& e) {
    err << "verification failed: " << e.what() << "\n";
    return kCheckFailed;
  } catch (const IoError& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const FormatError& e) {
    err << "data error: FormatError: " << e.what() << "\n";
    return kDataError;
  } catch (const MissingMask& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const MalformedPnm& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ExtentMismatch& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const ShapeMismatch& e) {
    err << "data error: " << e.what() << "\n";
    return kDataError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kConfigError;
}

}  // namespace iscf::cli
