// Acceptance checks. Prints one PASS or FAIL line per criterion and exits
// non-zero when any selected criterion fails.
//
//   ninformer_acceptance [--criterion N]... [--data-dir DIR] [--work-dir DIR]

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "fixtures.hpp"
#include "naive.hpp"
#include "ninformer/bench.hpp"
#include "ninformer/blocks.hpp"
#include "ninformer/data.hpp"
#include "ninformer/gradcheck.hpp"
#include "ninformer/ops.hpp"
#include "ninformer/training.hpp"
#include "ninformer_cli/commands.hpp"
#include "ninformer_cli/run_config.hpp"

namespace fs = std::filesystem;
using namespace ninformer;

namespace {

struct Outcome {
  bool passed = false;
  std::string detail;
};

struct Context {
  fs::path data_dir;
  fs::path work_dir;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

std::string fmt(const char* pattern, double v) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, v);
  return buf;
}

template <typename T>
Tensor<T> gaussian(Shape s, std::mt19937_64& rng) {
  std::normal_distribution<double> dist;
  Tensor<T> t(std::move(s));
  for (auto& x : t.data()) x = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
void zero(LinearParams<T>& p) {
  p.weight.mutable_value().fill(T{0});
  p.bias.mutable_value().fill(T{0});
}

template <typename T>
void randomize(const ParamStore<T>& store, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-1.0, 1.0);
  for (const auto& [name, var] : store) {
    Variable<T> v = var;
    for (auto& x : v.mutable_value().data()) x = static_cast<T>(dist(rng));
  }
}

// 1. Analytic gradients against central differences in f64.
Outcome gradient_correctness(const Context&) {
  const auto start = Clock::now();
  GradCheckOptions opts;
  opts.seeds = 10;
  opts.tolerance = 1e-6;
  const auto results = run_gradcheck_suite(opts);
  const double elapsed = seconds_since(start);
  double worst = 0;
  std::string failed;
  for (const auto& r : results) {
    worst = std::max(worst, r.max_relative_error);
    if (!r.passed) failed += " " + r.component;
  }

  set_backward_fault("gelu");
  const bool control_caught = !run_gradcheck("block:nin_block", opts).passed;
  set_backward_fault("");

  Outcome o;
  o.passed = failed.empty() && control_caught && elapsed < 300.0;
  o.detail = std::to_string(results.size()) + " components x 10 seeds, max rel err " + fmt("%.2e", worst) +
             ", " + fmt("%.1f", elapsed) + " s, corrupted gelu backward " +
             (control_caught ? "detected" : "NOT detected");
  if (!failed.empty()) o.detail += ", failing:" + failed;
  return o;
}

// 2. Attention, mixer and gating against loop oracles.
Outcome oracle_equivalence(const Context&) {
  std::mt19937_64 rng(20240);
  std::uniform_int_distribution<std::size_t> small(1, 4);
  double worst = 0;
  std::size_t trials = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = small(rng), d = small(rng), tok = small(rng), ch = small(rng);
    std::vector<std::size_t> divisors;
    for (std::size_t h = 1; h <= d; ++h) {
      if (d % h == 0) divisors.push_back(h);
    }
    const std::size_t heads = divisors[rng() % divisors.size()];
    ParamStore<double> store;
    ParamBuilder<double> pb(store, trial);
    auto attn = make_attention(pb, "attn", d, heads);
    auto mix = make_mixer(pb, "mix", n, d, tok, ch);
    auto gate = make_gating(pb, "gate", n, d, tok, ch);
    naive::randomize(store, rng);
    const auto x = gaussian<double>({1, n, d}, rng);
    const naive::Vec xv(x.data().begin(), x.data().end());
    const Variable<double> in(x);
    worst = std::max(worst, naive::max_relative_error(attention(in, attn).value().data(), naive::attention(xv, n, d, attn)));
    worst = std::max(worst, naive::max_relative_error(mixer_block(in, mix).value().data(),
                                                      naive::mixer_block(xv, n, d, tok, ch, mix)));
    worst = std::max(worst, naive::max_relative_error(nin_gating(in, gate).value().data(),
                                                      naive::nin_gating(xv, n, d, tok, ch, gate)));
    ++trials;
  }
  return {worst < 1e-5, std::to_string(trials) + " random shapes with n, d <= 4, max rel err " + fmt("%.2e", worst)};
}

template <typename T>
bool residual_identity_holds(std::size_t n, const Grid& grid, std::size_t d, std::size_t heads, std::mt19937_64& rng,
                             std::string& broken) {
  const auto x = gaussian<T>({2, n, d}, rng);
  const Variable<T> in(x);
  ParamStore<T> store;
  ParamBuilder<T> pb(store, rng());
  auto vit = make_vit_block(pb, "vit", d, heads, 2 * d);
  auto mix = make_mixer(pb, "mix", n, d, 2 * n, 2 * d);
  auto nin = make_nin_block(pb, "nin", n, d, 2 * d, 2 * n, 2 * d);
  auto local = make_localvit_block(pb, "local", d, heads, 2 * d);
  randomize(store, rng);
  zero(vit.attention.output);
  zero(vit.mlp.fc2);
  zero(mix.token_mlp.fc2);
  zero(mix.channel_mlp.fc2);
  zero(nin.gating.projection);
  zero(nin.mlp.fc2);
  zero(local.attention.output);
  zero(local.conv.project);
  bool ok = true;
  auto check = [&](const char* name, const Tensor<T>& out) {
    if (!(out == x)) {
      ok = false;
      broken += std::string(" ") + name;
    }
  };
  check("vit", vit_block(in, vit).value());
  check("mixer", mixer_block(in, mix).value());
  check("ninformer", nin_block(in, nin).value());
  check("localvit", localvit_block(in, grid, local).value());
  return ok;
}

// 3. Blocks with zeroed output projections are exactly the identity.
Outcome residual_identity(const Context&) {
  std::mt19937_64 rng(3);
  std::string broken;
  bool ok = true;
  std::size_t cases = 0;
  for (const Grid g : {Grid{1, 1}, Grid{2, 2}, Grid{2, 3}, Grid{4, 4}}) {
    for (std::size_t d : {4u, 8u, 16u}) {
      ok &= residual_identity_holds<float>(g.tokens(), g, d, 2, rng, broken);
      ok &= residual_identity_holds<double>(g.tokens(), g, d, 2, rng, broken);
      cases += 2;
    }
  }
  return {ok, std::to_string(cases) + " shape/precision cases x 4 block families, bit-exact" +
                  (broken.empty() ? std::string() : ", broken:" + broken)};
}

ModelConfig cifar_paper(Variant v) {
  ModelConfig c = cli::preset("ninformer-cifar10-paper").model;
  c.variant = v;
  c.use_positional_embedding = default_positional_embedding(v);
  return c;
}

// 4. Token-count scaling: closed-form FLOP ratios, then measured time ratios.
Outcome complexity(const Context&) {
  const auto vit = cifar_paper(Variant::vit);
  const auto nin = cifar_paper(Variant::ninformer);
  const double nin_ratio = static_cast<double>(count_flops(config_with_tokens(nin, 128)).per_block) /
                           static_cast<double>(count_flops(config_with_tokens(nin, 64)).per_block);
  const double attn_ratio = static_cast<double>(count_flops(config_with_tokens(vit, 128)).attention_core) /
                            static_cast<double>(count_flops(config_with_tokens(vit, 64)).attention_core);
  const bool analytic = nin_ratio <= 2.2 && attn_ratio >= 3.0;

  TimingOptions t;
  t.batch_size = 1;
  auto time_at = [&](const ModelConfig& base, std::size_t n) {
    const Model<float> m(config_with_tokens(base, n), 0);
    return time_inference(m, t).median_ns;
  };
  bool measured = true;
  std::ostringstream reps;
  for (int rep = 1; rep <= 3; ++rep) {
    const double vit_ratio = time_at(vit, 512) / time_at(vit, 256);
    const double nin_time_ratio = time_at(nin, 512) / time_at(nin, 256);
    measured &= nin_time_ratio < vit_ratio;
    reps << " rep" << rep << " ninformer " << fmt("%.3f", nin_time_ratio) << " vs vit " << fmt("%.3f", vit_ratio)
         << ";";
  }
  Outcome o;
  o.passed = analytic && measured;
  o.detail = "(a) ninformer block FLOPs(128)/FLOPs(64) " + fmt("%.3f", nin_ratio) + ", vit attention " +
             fmt("%.3f", attn_ratio) + (analytic ? " ok" : " FAIL") + "; (b) t(512)/t(256):" + reps.str() +
             (measured ? " ok" : " FAIL");
  return o;
}

struct ToyRun {
  TrainResult result;
  fs::path dir;
  double seconds = 0;
};

ToyRun toy_run(const std::string& variant, const Context& ctx, const fs::path& out_dir) {
  auto cfg = cli::preset(variant + "-mnist-toy");
  std::ostringstream log;
  const auto start = Clock::now();
  ToyRun run;
  run.result = cli::train_run(cfg, ctx.data_dir, out_dir, false, log);
  run.seconds = seconds_since(start);
  run.dir = out_dir;
  return run;
}

bool have_mnist(const Context& ctx) { return fs::exists(ctx.data_dir / "train-images-idx3-ubyte"); }

// 5. Toy preset on an MNIST training subset: accuracy floor and a smoothed
// loss curve that never rises.
Outcome toy_training(const Context& ctx) {
  if (!have_mnist(ctx)) return {false, "MNIST files not found in " + ctx.data_dir.string()};
  const std::size_t train_samples =
      load_mnist(ctx.data_dir, Split::train, LoadOptions{false}).size();
  bool ok = true;
  double total = 0;
  std::ostringstream detail;
  detail << "train subset " << std::min<std::size_t>(train_samples, 10000) << " samples;";
  for (const char* v : {"vit", "mixer", "localvit", "ninformer"}) {
    const auto run = toy_run(v, ctx, ctx.work_dir / "toy" / v);
    total += run.seconds;
    double best = 0;
    for (const auto& e : run.result.epochs) best = std::max(best, e.test_accuracy);
    const bool reached = best >= 0.90;
    ok &= reached;
    detail << " " << v << " " << fmt("%.4f", best) << (reached ? "" : " (<0.90)") << ";";
    if (std::string(v) == "ninformer") {
      const auto means = window_means(run.result.step_losses, 50);
      std::size_t rises = 0;
      for (std::size_t i = 1; i < means.size(); ++i) rises += means[i] > means[i - 1];
      ok &= rises == 0 && !means.empty();
      detail << " ninformer 50-step means: " << means.size() << " windows, " << rises << " increases;";
    }
  }
  ok &= total <= 1800.0;
  detail << " total " << fmt("%.0f", total) << " s";
  return {ok, detail.str()};
}

// Canonical-size synthetic archives for the loaders, written to `dir`.
void write_canonical_archives(const fs::path& dir) {
  auto labels = [](std::size_t n, std::size_t classes) {
    std::vector<unsigned char> out(n);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<unsigned char>(i % classes);
    return out;
  };
  fixtures::write_file(dir / "mnist" / "train-images-idx3-ubyte", fixtures::idx_images(60000));
  fixtures::write_file(dir / "mnist" / "train-labels-idx1-ubyte", fixtures::idx_labels(labels(60000, 10)));
  fixtures::write_file(dir / "mnist" / "t10k-images-idx3-ubyte", fixtures::idx_images(10000));
  fixtures::write_file(dir / "mnist" / "t10k-labels-idx1-ubyte", fixtures::idx_labels(labels(10000, 10)));

  auto cifar10 = [&](std::size_t first) {
    std::vector<std::vector<unsigned char>> l(10000);
    for (std::size_t i = 0; i < l.size(); ++i) l[i] = {static_cast<unsigned char>((first + i) % 10)};
    return fixtures::cifar_records(l, first);
  };
  for (int b = 1; b <= 5; ++b) {
    fixtures::write_file(dir / "cifar10" / "cifar-10-batches-bin" / ("data_batch_" + std::to_string(b) + ".bin"),
                         cifar10((b - 1) * 10000));
  }
  fixtures::write_file(dir / "cifar10" / "cifar-10-batches-bin" / "test_batch.bin", cifar10(0));

  auto cifar100 = [](std::size_t n) {
    std::vector<std::vector<unsigned char>> l(n);
    for (std::size_t i = 0; i < n; ++i) l[i] = {static_cast<unsigned char>(i % 20), static_cast<unsigned char>(i % 100)};
    return fixtures::cifar_records(l);
  };
  fixtures::write_file(dir / "cifar100" / "cifar-100-binary" / "train.bin", cifar100(50000));
  fixtures::write_file(dir / "cifar100" / "cifar-100-binary" / "test.bin", cifar100(10000));
}

// 6. Per-sample inference time of NiNformer below ViT at CIFAR-10 paper shapes.
Outcome inference_ordering(const Context&) {
  TimingOptions t;
  t.batch_size = 1;
  const auto vit = time_inference(Model<float>(cifar_paper(Variant::vit), 0), t);
  const auto nin = time_inference(Model<float>(cifar_paper(Variant::ninformer), 0), t);
  std::ostringstream detail;
  detail << "batch 1, median per-sample: ninformer " << fmt("%.0f", nin.median_ns) << " ns (IQR "
         << fmt("%.0f", nin.iqr_ns) << ", " << nin.flops_per_sample << " MACs) vs vit " << fmt("%.0f", vit.median_ns)
         << " ns (IQR " << fmt("%.0f", vit.iqr_ns) << ", " << vit.flops_per_sample << " MACs)";
  return {nin.median_ns < vit.median_ns, detail.str()};
}

// 7. Loader counts and label ranges on canonical-size archives, plus
// byte-exact two-record fixtures.
Outcome data_fidelity(const Context& ctx) {
  const fs::path dir = ctx.work_dir / "canonical_archives";
  write_canonical_archives(dir);
  bool ok = true;
  std::ostringstream detail;
  struct Case {
    DatasetName name;
    const char* sub;
  };
  for (const Case c : {Case{DatasetName::mnist, "mnist"}, Case{DatasetName::cifar10, "cifar10"},
                       Case{DatasetName::cifar100, "cifar100"}}) {
    for (const Split s : {Split::train, Split::test}) {
      const auto ds = load_dataset(c.name, dir / c.sub, s);
      const auto [lo, hi] = std::minmax_element(ds.labels.begin(), ds.labels.end());
      const bool count_ok = ds.size() == canonical_count(c.name, s);
      const bool range_ok = *lo == 0 && *hi + 1u == class_count(c.name) && ds.n_classes == class_count(c.name);
      ok &= count_ok && range_ok;
      detail << to_string(c.name) << "/" << to_string(s) << " " << ds.size() << " labels " << *lo << ".." << *hi
             << (count_ok && range_ok ? "" : " (wrong)") << "; ";
    }
  }
  fs::remove_all(dir);

  // The count check must reject a truncated archive.
  const fs::path short_dir = ctx.work_dir / "short_archive";
  fixtures::write_file(short_dir / "t10k-images-idx3-ubyte", fixtures::idx_images(2));
  fixtures::write_file(short_dir / "t10k-labels-idx1-ubyte", fixtures::idx_labels({3, 8}));
  bool rejected = false;
  try {
    load_mnist(short_dir, Split::test);
  } catch (const FormatError&) {
    rejected = true;
  }
  fs::remove_all(short_dir);
  ok &= rejected;

  std::size_t mismatches = 0;
  const auto mnist = parse_mnist(fixtures::idx_images(2), fixtures::idx_labels({7, 2}), Split::test);
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t r = 0; r < 28; ++r) {
      for (std::size_t c = 0; c < 28; ++c) {
        mismatches += mnist.images.at({i, r, c, 0}) != fixtures::mnist_pixel(i, r, c) / 255.0f;
      }
    }
  }
  mismatches += mnist.labels != std::vector<std::uint16_t>{7, 2};
  for (int which : {10, 100}) {
    const std::vector<std::vector<unsigned char>> l =
        which == 10 ? std::vector<std::vector<unsigned char>>{{9}, {4}}
                    : std::vector<std::vector<unsigned char>>{{5, 99}, {0, 1}};
    const auto cifar = parse_cifar(fixtures::cifar_records(l), which, Split::test);
    for (std::size_t i = 0; i < 2; ++i) {
      for (std::size_t r = 0; r < 32; ++r) {
        for (std::size_t c = 0; c < 32; ++c) {
          for (std::size_t ch = 0; ch < 3; ++ch) {
            mismatches += cifar.images.at({i, r, c, ch}) != fixtures::cifar_pixel(i, r, c, ch) / 255.0f;
          }
        }
      }
    }
    mismatches += cifar.labels != (which == 10 ? std::vector<std::uint16_t>{9, 4} : std::vector<std::uint16_t>{99, 1});
  }
  ok &= mismatches == 0;
  detail << "short archive " << (rejected ? "rejected" : "ACCEPTED") << "; 2-record fixtures " << mismatches
         << " mismatches";
  return {ok, detail.str()};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

// metrics.csv with the wall-clock column removed.
std::string without_wall_time(const std::string& csv) {
  std::istringstream in(csv);
  std::string out, line;
  while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
  return out;
}

// 8. Two toy runs from the same resolved configuration agree.
Outcome determinism(const Context& ctx) {
  if (!have_mnist(ctx)) return {false, "MNIST files not found in " + ctx.data_dir.string()};
  const fs::path a = ctx.work_dir / "determinism" / "a";
  const fs::path b = ctx.work_dir / "determinism" / "b";
  toy_run("ninformer", ctx, a);
  std::ostringstream log;
  cli::train_run(cli::run_config_from_json(read_file(a / "resolved-config.json")), ctx.data_dir, b, false, log);
  const std::string ma = read_file(a / "metrics.csv"), mb = read_file(b / "metrics.csv");
  const bool metrics_same = without_wall_time(ma) == without_wall_time(mb);
  const bool steps_same = read_file(a / "step_losses.csv") == read_file(b / "step_losses.csv");
  const bool ckpt_same = read_file(a / "model.ckpt") == read_file(b / "model.ckpt");
  std::ostringstream detail;
  detail << "metrics.csv loss/accuracy columns " << (metrics_same ? "identical" : "DIFFER")
         << ", step losses " << (steps_same ? "identical" : "DIFFER") << ", checkpoints "
         << (ckpt_same ? "identical" : "DIFFER") << ", wall_time_s column "
         << (ma == mb ? "identical" : "differs (timing)");
  return {metrics_same && steps_same && ckpt_same, detail.str()};
}

struct Criterion {
  int id;
  const char* name;
  std::function<Outcome(const Context&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> selected;
  std::string data_dir = NINFORMER_MNIST_DIR;
  std::string work_dir;
  app.add_option("--criterion", selected, "criterion number to run (repeatable, default all)");
  app.add_option("--data-dir", data_dir, "MNIST directory")->capture_default_str();
  app.add_option("--work-dir", work_dir, "directory for training runs and generated archives");
  CLI11_PARSE(app, argc, argv);

  std::optional<fixtures::TempDir> temp;
  Context ctx{data_dir, work_dir};
  if (work_dir.empty()) {
    temp.emplace("acceptance");
    ctx.work_dir = temp->path();
  }
  fs::create_directories(ctx.work_dir);

  const std::vector<Criterion> criteria = {
      {1, "gradient correctness", gradient_correctness},
      {2, "oracle equivalence", oracle_equivalence},
      {3, "residual identity", residual_identity},
      {4, "token-count complexity", complexity},
      {5, "toy training on MNIST", toy_training},
      {6, "inference time ordering", inference_ordering},
      {7, "data fidelity", data_fidelity},
      {8, "determinism", determinism},
  };

  int failures = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && std::find(selected.begin(), selected.end(), c.id) == selected.end()) continue;
    Outcome o;
    try {
      o = c.run(ctx);
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    failures += !o.passed;
    std::cout << (o.passed ? "PASS" : "FAIL") << " criterion " << c.id << " (" << c.name << "): " << o.detail
              << std::endl;
  }
  return failures == 0 ? 0 : 1;
}
