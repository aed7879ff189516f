// kgs: dataset synthesis, training, evaluation, rendering and ablation sweeps.

#include "kgs/checkpoint.hpp"
#include "kgs/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace {

using namespace kgs;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumerical = 4;

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::int64_t> iterations;
  std::string preset;
  std::string ablate;
  std::string out;
  std::string data;
  std::string checkpoint;
  std::string resume;
};

int resolve_threads(const std::optional<int>& flag, int fallback) {
  if (flag) {
    return *flag;
  }
  if (const char* env = std::getenv("KGS_THREADS")) {
    try {
      std::size_t used = 0;
      const int n = std::stoi(env, &used);
      if (used == std::string(env).size() && n >= 1) {
        return n;
      }
    } catch (const std::logic_error&) {
    }
    throw ConfigError(std::string("KGS_THREADS must be a positive integer, got '") + env + "'");
  }
  return fallback;
}

RunConfig build_config(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  if (c.seed) {
    cfg.seed = *c.seed;
  }
  if (c.iterations) {
    cfg.iterations = *c.iterations;
  }
  cfg.threads = resolve_threads(c.threads, cfg.threads);
  if (!c.ablate.empty()) {
    apply_ablation(cfg, c.ablate);
  }
  cfg.validate();
  return cfg;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("cannot open: " + path);
  }
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path require_out(const Common& c) {
  if (c.out.empty()) {
    throw ConfigError("--out is required");
  }
  std::error_code ec;
  std::filesystem::create_directories(c.out, ec);
  if (ec) {
    throw IoError("cannot create directory " + c.out + ": " + ec.message());
  }
  return c.out;
}

int cmd_synth(const Common& c) {
  if (c.preset.empty() == c.config.empty()) {
    throw ConfigError("synth needs exactly one of --preset or --config");
  }
  SceneSpec spec = c.preset.empty() ? scene_from_json(read_file(c.config), c.config)
                                    : make_preset(c.preset, c.seed.value_or(0));
  if (c.seed && c.preset.empty()) {
    spec.seed = *c.seed;
  }
  const int threads = resolve_threads(c.threads, 1);
  const auto out = require_out(c);
  const Dataset data = synthesize(spec, threads);
  write_dataset(data, out);
  std::cout << "wrote " << data.frames.size() << " frames of '" << spec.name << "' to " << out.string() << "\n";
  return kExitOk;
}

int cmd_train(const Common& c) {
  if (c.data.empty()) {
    throw ConfigError("--data is required");
  }
  const auto out = require_out(c);
  const Dataset data = read_dataset(c.data);
  RunConfig cfg;
  TrainState state;
  if (!c.resume.empty()) {
    Checkpoint ck = load_checkpoint(c.resume);
    cfg = ck.config;
    if (!c.config.empty()) {
      throw ConfigError("--config cannot be combined with --resume (the checkpoint carries its config)");
    }
    if (c.iterations) {
      cfg.iterations = *c.iterations;
    }
    cfg.threads = resolve_threads(c.threads, cfg.threads);
    if (!c.ablate.empty()) {
      apply_ablation(cfg, c.ablate);
    }
    cfg.validate();
    state = std::move(ck.state);
  } else {
    cfg = build_config(c);
    state = initialize(cfg, data.spec);
  }
  std::ofstream(out / "config.json") << config_to_json(cfg) << "\n";
  TrainOptions opt;
  opt.out_dir = out;
  const std::int64_t report_every = std::max<std::int64_t>(1, cfg.iterations / 20);
  opt.on_iteration = [&](const IterationRecord& r) {
    if (r.iteration % report_every == 0 || r.iteration == cfg.iterations) {
      std::printf("iter %lld  loss %.6f  psnr %.3f  gaussians %zu  dynamic %zu\n",
                  static_cast<long long>(r.iteration), r.loss.total, r.loss.psnr, r.gaussians, r.dynamic);
      std::fflush(stdout);
    }
  };
  run_training(state, cfg, data, opt);
  return kExitOk;
}

void write_metrics(const std::filesystem::path& path, const EvalResult& r) {
  std::ofstream out(path);
  out << "frame,psnr,ssim\n";
  char buf[96];
  for (const FrameMetric& m : r.frames) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f\n", m.frame, m.psnr, m.ssim);
    out << buf;
  }
  if (!out) {
    throw IoError("write failed: " + path.string());
  }
}

int cmd_eval(const Common& c) {
  if (c.checkpoint.empty() || c.data.empty()) {
    throw ConfigError("eval needs --checkpoint and --data");
  }
  const auto out = require_out(c);
  Checkpoint ck = load_checkpoint(c.checkpoint);
  ck.config.threads = resolve_threads(c.threads, ck.config.threads);
  const Dataset data = read_dataset(c.data);
  const EvalResult r = evaluate(ck.state.model, ck.config, data);
  write_metrics(out / "eval_metrics.csv", r);
  write_partition(out / "partition.txt", ck.state.model.partition);
  std::printf("held-out frames %zu  mean psnr %.4f  mean ssim %.4f\n", r.frames.size(), r.mean_psnr, r.mean_ssim);
  return kExitOk;
}

int cmd_render(const Common& c, int frame, const std::string& mode) {
  if (c.checkpoint.empty() || c.data.empty()) {
    throw ConfigError("render needs --checkpoint and --data");
  }
  if (mode != "sharp" && mode != "blur") {
    throw ConfigError("--mode must be sharp or blur");
  }
  const auto out = require_out(c);
  Checkpoint ck = load_checkpoint(c.checkpoint);
  ck.config.threads = resolve_threads(c.threads, ck.config.threads);
  const Dataset data = read_dataset(c.data);
  const int first = frame >= 0 ? frame : 0;
  const int last = frame >= 0 ? frame : static_cast<int>(data.frames.size()) - 1;
  if (frame >= static_cast<int>(data.frames.size())) {
    throw ConfigError("--frame out of range");
  }
  for (int i = first; i <= last; ++i) {
    char name[48];
    std::snprintf(name, sizeof name, "%05d_%s.ppm", i, mode.c_str());
    write_ppm(out / name, quantize(render_frame(ck.state.model, ck.config, data, i, mode == "sharp")));
  }
  std::cout << "rendered " << (last - first + 1) << " frames to " << out.string() << "\n";
  return kExitOk;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) {
      out.push_back(item);
    }
  }
  return out;
}

int cmd_ablate(const Common& c, const std::string& variants, const std::string& taus) {
  if (c.data.empty()) {
    throw ConfigError("--data is required");
  }
  if (!c.ablate.empty()) {
    throw ConfigError("ablate takes --variants, not --ablate");
  }
  const auto out = require_out(c);
  const Dataset data = read_dataset(c.data);
  std::vector<std::string> runs = split_list(variants);
  for (const std::string& t : split_list(taus)) {
    runs.push_back("tau=" + t);
  }
  if (runs.empty()) {
    throw ConfigError("no ablation variants requested");
  }
  const RunConfig base = build_config(c);
  for (const std::string& v : runs) {  // reject typos before any training starts
    RunConfig probe = base;
    apply_ablation(probe, v);
  }
  std::ofstream table(out / "ablation.csv");
  table << "variant,tau,psnr,ssim,gaussians,dynamic,train_seconds\n";
  for (const std::string& v : runs) {
    RunConfig cfg = base;
    apply_ablation(cfg, v);
    cfg.validate();
    const std::string name = v.rfind("tau=", 0) == 0 ? "tau_" + v.substr(4) : v;
    const auto start = std::chrono::steady_clock::now();
    TrainState state = initialize(cfg, data.spec);
    TrainOptions opt;
    opt.out_dir = out / name;
    run_training(state, cfg, data, opt);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const EvalResult r = evaluate(state.model, cfg, data);
    write_metrics(out / name / "eval_metrics.csv", r);
    char row[256];
    std::snprintf(row, sizeof row, "%s,%.6g,%.6f,%.6f,%zu,%zu,%.1f\n", v.c_str(), cfg.tau, r.mean_psnr, r.mean_ssim,
                  state.model.size(), state.model.partition.dynamic_indices.size(), secs);
    table << row << std::flush;
    std::printf("%s", row);
    std::fflush(stdout);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinematics-guided dynamic Gaussian splatting from blurred frames"};
  app.require_subcommand(1);
  Common c;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", c.config, "Config file (flat JSON with dotted keys; scene JSON for synth)");
    sub->add_option("--seed", c.seed, "Random seed");
    sub->add_option("--threads", c.threads, "Worker threads (falls back to KGS_THREADS)")->check(CLI::PositiveNumber);
    sub->add_option("--iterations", c.iterations, "Training iterations")->check(CLI::NonNegativeNumber);
    sub->add_option("--out", c.out, "Output directory");
  };

  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  add_common(synth);
  synth->add_option("--preset", c.preset, "Scene preset: rolldice-lite, decomp-100, static-lite");

  auto* train = app.add_subcommand("train", "Optimize a scene on a dataset");
  add_common(train);
  train->add_option("--data", c.data, "Dataset directory");
  train->add_option("--ablate", c.ablate, "Ablation variant: full, no-cf, no-kr, no-lreg, no-lani, tau=<value>");
  train->add_option("--resume", c.resume, "Checkpoint to resume from");

  auto* eval = app.add_subcommand("eval", "Score held-out sharp frames and dump the partition");
  add_common(eval);
  eval->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  eval->add_option("--data", c.data, "Dataset directory");

  int frame = -1;
  std::string mode = "sharp";
  auto* rend = app.add_subcommand("render", "Render frames from a checkpoint");
  add_common(rend);
  rend->add_option("--checkpoint", c.checkpoint, "Checkpoint file");
  rend->add_option("--data", c.data, "Dataset directory (cameras and timestamps)");
  rend->add_option("--frame", frame, "Single frame index (default: all)");
  rend->add_option("--mode", mode, "sharp or blur");

  std::string variants = "full,no-cf,no-kr,no-lreg,no-lani";
  std::string taus;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate an ablation grid");
  add_common(ablate);
  ablate->add_option("--data", c.data, "Dataset directory");
  ablate->add_option("--variants", variants, "Comma-separated variants");
  ablate->add_option("--taus", taus, "Comma-separated tau sweep values");
  ablate->add_option("--ablate", c.ablate, "Not accepted here; use --variants");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*synth) return cmd_synth(c);
    if (*train) return cmd_train(c);
    if (*eval) return cmd_eval(c);
    if (*rend) return cmd_render(c, frame, mode);
    if (*ablate) return cmd_ablate(c, variants, taus);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const InvalidInput& e) {
    std::cerr << "invalid input: " << e.what() << "\n";
    return kExitConfig;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericalError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kExitOk;
}
