#include "ninformer_cli/commands.hpp"

#include <CLI11.hpp>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ninformer/bench.hpp"
#include "ninformer/checkpoint.hpp"
#include "ninformer/gradcheck.hpp"
#include "ninformer/ops.hpp"

namespace ninformer::cli {

namespace fs = std::filesystem;

namespace {

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

// Options shared by the subcommands that resolve a run configuration.
struct CommonOptions {
  std::string preset;
  std::string config_path;
  std::string data_dir = "data";
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::size_t threads = 1;
  std::string precision;
  std::vector<std::string> overrides;
  bool allow_partial_data = false;
};

void add_config_options(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--preset", o.preset, "<vit|mixer|localvit|ninformer>-<mnist|cifar10|cifar100>-<paper|toy>");
  cmd->add_option("--config", o.config_path, "run config JSON, e.g. a resolved-config.json");
  cmd->add_option("--set", o.overrides, "override a config field, key=value (repeatable)");
  cmd->add_option("--seed", o.seed, "random seed for initialization and shuffling")
      ->each([&o](const std::string&) { o.seed_set = true; });
  cmd->add_option("--precision", o.precision, "f32 or f64");
}

void add_runtime_options(CLI::App* cmd, CommonOptions& o) {
  cmd->add_option("--data-dir", o.data_dir, "dataset directory")->capture_default_str();
  cmd->add_option("--out-dir", o.out_dir, "output directory");
  cmd->add_option("--threads", o.threads, "worker threads (kernels are single-threaded; only 1 is accepted)")
      ->capture_default_str();
  cmd->add_flag("--allow-partial-data", o.allow_partial_data,
                "accept dataset files whose sample count differs from the official split size");
}

void require_single_thread(std::size_t threads) {
  if (threads != 1) throw ConfigError("--threads " + std::to_string(threads) + " unsupported: execution is single-threaded");
}

RunConfig resolve(const CommonOptions& o) {
  if (o.preset.empty() == o.config_path.empty()) throw ConfigError("pass exactly one of --preset or --config");
  RunConfig cfg = o.preset.empty() ? run_config_from_json(read_text(o.config_path)) : preset(o.preset);
  cfg = apply_overrides(cfg, o.overrides);
  if (o.seed_set) cfg.train.seed = o.seed;
  if (!o.precision.empty()) cfg.precision = parse_precision(o.precision);
  return cfg;
}

fs::path default_out_dir(const CommonOptions& o, const RunConfig& cfg, const std::string& fallback) {
  if (!o.out_dir.empty()) return o.out_dir;
  return fs::path("runs") / (cfg.preset.empty() ? fallback : cfg.preset);
}

// ---- train ----------------------------------------------------------------

template <typename T>
TrainResult train_typed(const RunConfig& cfg, const PreparedData& data, const fs::path& out_dir, std::ostream& log) {
  Model<T> model(cfg.model, cfg.train.seed);
  log << "training " << to_string(cfg.model.variant) << " (" << model.params().numel() << " parameters) on "
      << data.train.size() << " " << to_string(cfg.dataset) << " samples, " << cfg.train.epochs << " epochs\n";
  std::vector<MetricsRecord> so_far;
  auto on_epoch = [&](const MetricsRecord& r) {
    so_far.push_back(r);
    log << "epoch " << r.epoch << "  train_loss " << format_double(r.train_loss) << "  train_acc "
        << format_double(r.train_accuracy) << "  test_loss " << format_double(r.test_loss) << "  test_acc "
        << format_double(r.test_accuracy) << "  (" << std::fixed << std::setprecision(1) << r.wall_time_s << " s)\n"
        << std::defaultfloat;
    write_text(out_dir / "metrics.csv", metrics_csv(so_far));
    write_text(out_dir / "metrics.jsonl", metrics_jsonl(so_far));
  };
  TrainResult result = train(model, data.train, data.test, cfg.train, on_epoch);

  std::string steps = "step,loss\n";
  for (std::size_t i = 0; i < result.step_losses.size(); ++i) {
    steps += std::to_string(i + 1) + "," + format_double(result.step_losses[i]) + "\n";
  }
  write_text(out_dir / "step_losses.csv", steps);
  save_checkpoint(out_dir / "model.ckpt", make_checkpoint(model));
  return result;
}

// ---- eval -----------------------------------------------------------------

template <typename T>
EvalResult eval_typed(const Checkpoint& ckpt, const LabeledDataset& ds, std::size_t batch_size) {
  const Model<T> model = model_from_checkpoint<T>(ckpt);
  return evaluate(model, ds, batch_size);
}

// ---- export-curves --------------------------------------------------------

std::vector<double> read_step_losses(const fs::path& path) {
  std::istringstream in(read_text(path));
  std::string line;
  std::getline(in, line);
  if (line != "step,loss") throw FormatError(path.string() + ": unexpected header '" + line + "'");
  std::vector<double> losses;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw FormatError(path.string() + ": malformed row '" + line + "'");
    losses.push_back(std::stod(line.substr(comma + 1)));
  }
  return losses;
}

}  // namespace

PreparedData prepare_data(RunConfig& cfg, const fs::path& data_dir, bool require_canonical_count) {
  LoadOptions opts{require_canonical_count};
  PreparedData d;
  d.train = load_dataset(cfg.dataset, data_dir, Split::train, opts);
  d.test = load_dataset(cfg.dataset, data_dir, Split::test, opts);
  if (cfg.train_subset > 0) d.train = take(d.train, cfg.train_subset);
  if (!cfg.normalization) cfg.normalization = channel_stats(d.train);
  d.train = normalize(d.train, *cfg.normalization);
  d.test = normalize(d.test, *cfg.normalization);
  return d;
}

TrainResult train_run(RunConfig cfg, const fs::path& data_dir, const fs::path& out_dir, bool require_canonical_count,
                      std::ostream& log) {
  const PreparedData data = prepare_data(cfg, data_dir, require_canonical_count);
  fs::create_directories(out_dir);
  write_text(out_dir / "resolved-config.json", to_json(cfg));
  return cfg.precision == Precision::f64 ? train_typed<double>(cfg, data, out_dir, log)
                                         : train_typed<float>(cfg, data, out_dir, log);
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"NiNformer: train, evaluate and benchmark ViT, MLP-Mixer, Local-ViT and NiNformer classifiers", "ninformer"};
  app.require_subcommand(1);
  app.footer("Presets: <vit|mixer|localvit|ninformer>-<mnist|cifar10|cifar100>-<paper|toy>, e.g. ninformer-mnist-toy\n"
             "Exit codes: 0 ok, 1 verification failure, 2 usage or config error, 3 numeric abort");

  CommonOptions common;

  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics, checkpoint and resolved config");
  add_config_options(train_cmd, common);
  add_runtime_options(train_cmd, common);

  std::string checkpoint_path;
  std::string split_name = "test";
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint and write eval.json");
  eval_cmd->add_option("--checkpoint", checkpoint_path, "checkpoint file written by train")->required();
  eval_cmd->add_option("--split", split_name, "train or test")->capture_default_str();
  add_config_options(eval_cmd, common);
  add_runtime_options(eval_cmd, common);

  std::string bench_dataset = "cifar10";
  std::string bench_scale = "paper";
  std::vector<std::string> bench_variants{"vit", "mixer", "localvit", "ninformer"};
  std::vector<std::size_t> bench_batches{1};
  std::vector<std::size_t> sweep_tokens{16, 64, 256, 1024};
  bool sweep = false;
  TimingOptions timing;
  auto* bench_cmd = app.add_subcommand("bench", "time per-sample inference of every variant and count FLOPs");
  bench_cmd->add_option("--dataset", bench_dataset, "input shape source: mnist, cifar10 or cifar100")->capture_default_str();
  bench_cmd->add_option("--scale", bench_scale, "paper or toy model size")->capture_default_str();
  bench_cmd->add_option("--variants", bench_variants, "variants to time")->delimiter(',');
  bench_cmd->add_option("--batch-sizes", bench_batches, "batch sizes to time (1 is per-sample latency)")->delimiter(',');
  bench_cmd->add_option("--warmup", timing.warmup_iters, "untimed warmup iterations (>= 5)")->capture_default_str();
  bench_cmd->add_option("--iters", timing.measured_iters, "timed iterations (>= 30)")->capture_default_str();
  bench_cmd->add_flag("--sweep", sweep, "also run the token-count scaling sweep and write sweep.csv");
  bench_cmd->add_option("--tokens", sweep_tokens, "token counts for --sweep")->delimiter(',');
  bench_cmd->add_option("--set", common.overrides, "override a model config field, key=value (repeatable)");
  bench_cmd->add_option("--seed", common.seed, "seed for weights and synthetic inputs");
  bench_cmd->add_option("--out-dir", common.out_dir, "output directory (default bench)");
  bench_cmd->add_option("--threads", common.threads, "worker threads (only 1 is accepted)")->capture_default_str();

  GradCheckOptions gc;
  std::vector<std::string> components;
  std::string fault;
  auto* gc_cmd = app.add_subcommand("gradcheck", "compare analytic gradients with central finite differences in f64");
  gc_cmd->add_option("--seeds", gc.seeds, "random seeds per component (>= 10)")->capture_default_str();
  gc_cmd->add_option("--tolerance", gc.tolerance, "maximum relative error")->capture_default_str();
  gc_cmd->add_option("--component", components, "restrict to these components (repeatable)");
  gc_cmd->add_option("--inject-fault", fault, "corrupt the backward rule of an op")->group("");

  std::vector<std::string> run_dirs;
  std::size_t window = 50;
  auto* curves_cmd = app.add_subcommand("export-curves", "collect loss and accuracy curves from run directories");
  curves_cmd->add_option("--run-dir", run_dirs, "run directory written by train (repeatable)")->required();
  curves_cmd->add_option("--window", window, "steps per smoothing window")->capture_default_str();
  curves_cmd->add_option("--out-dir", common.out_dir, "output directory (default: the first run directory)");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) {
      require_single_thread(common.threads);
      RunConfig cfg = resolve(common);
      const fs::path out_dir = default_out_dir(common, cfg, "train");
      train_run(cfg, common.data_dir, out_dir, !common.allow_partial_data, out);
      out << "wrote " << (out_dir / "metrics.csv").string() << ", " << (out_dir / "model.ckpt").string() << "\n";
      return kExitOk;
    }

    if (eval_cmd->parsed()) {
      require_single_thread(common.threads);
      const fs::path ckpt_file(checkpoint_path);
      const Checkpoint ckpt = load_checkpoint(ckpt_file);
      const fs::path sibling = ckpt_file.parent_path() / "resolved-config.json";
      if (common.preset.empty() && common.config_path.empty()) {
        if (!fs::exists(sibling)) throw ConfigError("no --preset or --config given and " + sibling.string() + " is missing");
        common.config_path = sibling.string();
      }
      RunConfig cfg = resolve(common);
      if (!(cfg.model == ckpt.config)) {
        throw ConfigError("checkpoint " + ckpt_file.string() + " was written for a different model config");
      }
      const Split split = split_name == "train" ? Split::train
                          : split_name == "test" ? Split::test
                                                 : throw ConfigError("--split must be train or test");
      LoadOptions opts{!common.allow_partial_data};
      if (!cfg.normalization) {
        LabeledDataset reference = load_dataset(cfg.dataset, common.data_dir, Split::train, opts);
        if (cfg.train_subset > 0) reference = take(reference, cfg.train_subset);
        cfg.normalization = channel_stats(reference);
      }
      const LabeledDataset ds = normalize(load_dataset(cfg.dataset, common.data_dir, split, opts), *cfg.normalization);
      const EvalResult r = cfg.precision == Precision::f64 ? eval_typed<double>(ckpt, ds, cfg.train.eval_batch_size)
                                                           : eval_typed<float>(ckpt, ds, cfg.train.eval_batch_size);
      nlohmann::ordered_json j;
      j["dataset"] = to_string(cfg.dataset);
      j["split"] = to_string(split);
      j["samples"] = r.samples;
      j["loss"] = r.loss;
      j["accuracy"] = r.accuracy;
      j["checkpoint"] = ckpt_file.string();
      const fs::path out_dir = common.out_dir.empty() ? ckpt_file.parent_path() : fs::path(common.out_dir);
      write_text(out_dir / "eval.json", j.dump(2) + "\n");
      out << to_string(cfg.dataset) << " " << to_string(split) << ": loss " << format_double(r.loss) << "  accuracy "
          << format_double(r.accuracy) << "  samples " << r.samples << "\n";
      return kExitOk;
    }

    if (bench_cmd->parsed()) {
      require_single_thread(common.threads);
      timing.threads = common.threads;
      timing.seed = common.seed;
      validate(timing);
      const RunConfig base = apply_overrides(preset("ninformer-" + bench_dataset + "-" + bench_scale), common.overrides);
      const fs::path out_dir = common.out_dir.empty() ? fs::path("bench") : fs::path(common.out_dir);
      std::vector<BenchReport> reports;
      std::vector<Variant> variants;
      for (const auto& name : bench_variants) variants.push_back(parse_variant(name));
      for (std::size_t bs : bench_batches) {
        if (bs == 0) throw ConfigError("batch sizes must be at least 1");
        for (Variant v : variants) {
          ModelConfig mc = base.model;
          mc.variant = v;
          mc.use_positional_embedding = default_positional_embedding(v);
          const Model<float> model(mc, common.seed);
          TimingOptions t = timing;
          t.batch_size = bs;
          reports.push_back(time_inference(model, t));
          const auto& r = reports.back();
          out << std::left << std::setw(10) << r.variant << " batch " << std::setw(4) << bs << " median "
              << std::fixed << std::setprecision(1) << r.median_ns << " ns/sample  iqr " << r.iqr_ns << "  flops "
              << r.flops_per_sample << std::defaultfloat << "\n";
        }
      }
      write_text(out_dir / "bench.csv", bench_csv(reports));
      write_text(out_dir / "bench.json", bench_json(reports));
      out << "wrote " << (out_dir / "bench.csv").string() << "\n";
      if (sweep) {
        TimingOptions t = timing;
        t.batch_size = 1;
        const auto rows = scaling_sweep(base.model, variants, sweep_tokens, t);
        write_text(out_dir / "sweep.csv", sweep_csv(rows));
        out << "wrote " << (out_dir / "sweep.csv").string() << "\n";
      }
      return kExitOk;
    }

    if (gc_cmd->parsed()) {
      if (gc.seeds < 10) throw ConfigError("--seeds must be at least 10");
      set_backward_fault(fault);
      std::vector<std::string> names = components.empty() ? gradcheck_components() : components;
      std::vector<std::string> failed;
      for (const auto& name : names) {
        const GradCheckResult r = run_gradcheck(name, gc);
        out << std::left << std::setw(26) << r.component << " max_rel_err " << std::scientific << std::setprecision(3)
            << r.max_relative_error << std::defaultfloat << "  values " << r.values_checked << "  "
            << (r.passed ? "ok" : "FAIL") << "\n";
        if (!r.passed) failed.push_back(r.component);
      }
      set_backward_fault("");
      if (!failed.empty()) {
        err << "gradient check failed for:";
        for (const auto& f : failed) err << " " << f;
        err << "\n";
        return kExitVerificationFailure;
      }
      out << "all " << names.size() << " components within " << gc.tolerance << "\n";
      return kExitOk;
    }

    if (curves_cmd->parsed()) {
      if (window == 0) throw ConfigError("--window must be at least 1");
      const fs::path out_dir = common.out_dir.empty() ? fs::path(run_dirs.front()) : fs::path(common.out_dir);
      std::string epochs = "run,epoch,train_loss,train_acc,test_loss,test_acc\n";
      std::string steps = "run,step,loss\n";
      std::string smooth = "run,window,first_step,last_step,mean_loss\n";
      for (const auto& dir : run_dirs) {
        const std::string run_name = fs::path(dir).lexically_normal().filename().string();
        for (const auto& r : parse_metrics_jsonl(read_text(fs::path(dir) / "metrics.jsonl"))) {
          epochs += run_name + "," + std::to_string(r.epoch) + "," + format_double(r.train_loss) + "," +
                    format_double(r.train_accuracy) + "," + format_double(r.test_loss) + "," +
                    format_double(r.test_accuracy) + "\n";
        }
        const auto losses = read_step_losses(fs::path(dir) / "step_losses.csv");
        for (std::size_t i = 0; i < losses.size(); ++i) {
          steps += run_name + "," + std::to_string(i + 1) + "," + format_double(losses[i]) + "\n";
        }
        const auto means = window_means(losses, window);
        for (std::size_t w = 0; w < means.size(); ++w) {
          smooth += run_name + "," + std::to_string(w + 1) + "," + std::to_string(w * window + 1) + "," +
                    std::to_string((w + 1) * window) + "," + format_double(means[w]) + "\n";
        }
      }
      write_text(out_dir / "curves_epoch.csv", epochs);
      write_text(out_dir / "curves_step.csv", steps);
      write_text(out_dir / "curves_smoothed.csv", smooth);
      out << "wrote curves_epoch.csv, curves_step.csv and curves_smoothed.csv to " << out_dir.string() << "\n";
      return kExitOk;
    }
  } catch (const NumericError& e) {
    err << "error: " << e.what() << "\n";
    return kExitNumericAbort;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n\n" << app.get_subcommands().front()->help();
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}

}  // namespace ninformer::cli
