// mssm: train, evaluate and inspect selective state-space models on
// synthetic sequence tasks.
//
// Exit codes: 0 success, 1 invariant failure or runtime error, 2 invalid
// configuration or arguments.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "mssm/analysis.hpp"
#include "mssm/checkpoint.hpp"
#include "mssm/config.hpp"
#include "mssm/error.hpp"
#include "mssm/gemm.hpp"
#include "mssm/tasks.hpp"
#include "mssm/trainer.hpp"
#include "mssm/verify.hpp"

namespace fs = std::filesystem;
using namespace mssm;

namespace {

struct Global {
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  int threads = 1;
  std::string precision = "f32";
};

struct ProbeArgs {
  std::string checkpoint;
  std::string task = "copy";
  int length = 20;
  int train_length = 0;
  int vocab = 0;
  int num_queries = 0;
  int samples = 256;
};

TaskSpec probe_task(const ProbeArgs& a, const ModelConfig& model) {
  TaskSpec t;
  t.kind = task_from_string(a.task);
  t.vocab = a.vocab > 0 ? a.vocab : model.vocab_size - 2;
  t.num_queries = a.num_queries;
  if (t.vocab + 2 != model.vocab_size) {
    throw ConfigError("vocab", "checkpoint expects content vocab " + std::to_string(model.vocab_size - 2));
  }
  t.check_length(a.length, "length");
  return t;
}

int cmd_train(const Global& g, const std::string& path, bool quiet) {
  TrainConfig cfg = TrainConfig::load(path);
  if (g.seed) cfg.seeds = {*g.seed};
  RunOptions opt;
  opt.out_dir = g.out_dir.empty() ? "." : g.out_dir;
  opt.log = quiet ? nullptr : &std::cerr;
  const SweepResult res = g.precision == "f64" ? sweep<double>(cfg, opt) : sweep<float>(cfg, opt);
  std::cout << "run directory: " << res.run_dir << "\n";
  for (const auto& s : res.summary.per_lr) {
    std::cout << "lr " << s.lr << (s.lr == res.summary.best_lr ? " (best)" : "");
    for (const auto& [len, st] : s.string_acc) {
      char buf[96];
      std::snprintf(buf, sizeof(buf), "  len %d string_acc %.4f +- %.4f", len, st.mean, st.std);
      std::cout << buf;
    }
    if (s.diverged) std::cout << "  diverged " << s.diverged;
    std::cout << "\n";
  }
  return 0;
}

template <typename T>
int cmd_eval(const Global& g, const ProbeArgs& a) {
  const Model<T> model = load_checkpoint<T>(a.checkpoint);
  const TaskSpec task = probe_task(a, model.config());
  const int train_length = a.train_length > 0 ? a.train_length : a.length;
  const Score s = evaluate(model, task, a.length, train_length, a.samples, g.seed.value_or(1000003));
  std::printf("task %s length %d samples %d token_acc %.6f string_acc %.6f\n", to_string(task.kind).c_str(), a.length,
              a.samples, s.token_acc, s.string_acc);
  return 0;
}

template <typename T>
int cmd_inspect(const Global& g, const ProbeArgs& a, const std::string& layers, std::size_t cap) {
  const Model<T> model = load_checkpoint<T>(a.checkpoint);
  const TaskSpec task = probe_task(a, model.config());
  std::set<int> filter;
  if (!layers.empty()) {
    std::stringstream ss(layers);
    std::string item;
    while (std::getline(ss, item, ',')) {
      try {
        filter.insert(std::stoi(item));
      } catch (const std::exception&) {
        throw ConfigError("layers", "expected a comma-separated list of layer indices, got '" + layers + "'");
      }
    }
  }
  Rng rng = Rng(g.seed.value_or(0)).substream("probe");
  const TaskSample sample = task.generate(a.length, a.train_length > 0 ? a.train_length : a.length, rng);
  const auto dumps = capture_maps(model, sample, filter, cap);
  const std::string dir =
      g.out_dir.empty() ? (fs::path(a.checkpoint).parent_path() / "maps").string() : g.out_dir;
  for (const auto& d : dumps) {
    for (const auto& path : export_dump(d, dir)) std::cout << path << "\n";
  }
  return 0;
}

int cmd_verify(const Global& g, const std::string& mode) {
  const auto modes = mode == "all" ? verify_modes() : std::vector<std::string>{mode};
  bool ok = true;
  for (const auto& m : modes) {
    const VerifyReport r = run_verify(m, g.seed.value_or(0));
    std::cout << r.to_string();
    ok = ok && r.passed();
  }
  return ok ? 0 : 1;
}

int cmd_gen(const Global& g, const ProbeArgs& a, int count, const std::string& output) {
  TaskSpec t;
  t.kind = task_from_string(a.task);
  t.vocab = a.vocab > 0 ? a.vocab : (t.kind == TaskKind::sort ? 512 : 16);
  t.num_queries = a.num_queries;
  t.check_length(a.length, "length");
  std::ofstream file;
  if (!output.empty()) {
    file.open(output);
    if (!file) throw Error("cannot write " + output);
  }
  std::ostream& out = output.empty() ? std::cout : file;
  const Rng base = Rng(g.seed.value_or(0)).substream("gen");
  for (int i = 0; i < count; ++i) {
    Rng r = base.substream(static_cast<std::uint64_t>(i));
    write_jsonl(out, t.generate(a.length, a.train_length > 0 ? a.train_length : a.length, r));
  }
  return 0;
}

void add_probe_options(CLI::App* cmd, ProbeArgs& a, bool needs_checkpoint) {
  if (needs_checkpoint) cmd->add_option("--checkpoint", a.checkpoint, "Checkpoint file")->required();
  cmd->add_option("--task", a.task, "copy, stack_copy, mqar or sort")->capture_default_str();
  cmd->add_option("--length", a.length, "String length (pairs for mqar)")->capture_default_str();
  cmd->add_option("--train-length", a.train_length, "Training length used to scale mqar queries");
  cmd->add_option("--vocab", a.vocab, "Content vocabulary size");
  cmd->add_option("--num-queries", a.num_queries, "mqar queries at the training length");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Selective state-space models with mimetic initialization"};
  app.require_subcommand(1);
  Global g;
  app.add_option("--seed", g.seed, "Seed (train: replaces the configured seed list)");
  app.add_option("--out-dir", g.out_dir, "Output directory");
  app.add_option("--threads", g.threads, "BLAS threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_option("--precision", g.precision, "Floating point precision")
      ->capture_default_str()
      ->check(CLI::IsMember({"f32", "f64"}));

  std::string config_path;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "Run the LR x seed sweep described by a config file");
  train->add_option("config", config_path, "JSON config file")->required();
  train->add_flag("--quiet", quiet, "Suppress progress lines");

  ProbeArgs probe;
  auto* eval = app.add_subcommand("eval", "Greedy-decode accuracy of a checkpoint");
  add_probe_options(eval, probe, true);
  eval->add_option("--samples", probe.samples, "Number of samples")->capture_default_str();

  std::string layers;
  std::size_t cap = kMatrixFormCap;
  auto* inspect = app.add_subcommand("inspect", "Export averaged attention maps and masks");
  add_probe_options(inspect, probe, true);
  inspect->add_option("--layers", layers, "Comma-separated layer indices (default: all)");
  inspect->add_option("--cap", cap, "Maximum sequence length for the matrix form")->capture_default_str();

  std::string mode;
  auto* verify = app.add_subcommand("verify", "Run an invariant suite");
  verify->add_option("mode", mode, "grad, scan-matrix, lin-attn-limit, init-stats or all")
      ->required()
      ->check(CLI::IsMember({"grad", "scan-matrix", "lin-attn-limit", "init-stats", "all"}));

  int count = 1;
  std::string output;
  auto* gen = app.add_subcommand("gen", "Dump task samples as JSON lines");
  add_probe_options(gen, probe, false);
  gen->add_option("--count", count, "Number of samples")->capture_default_str()->check(CLI::PositiveNumber);
  gen->add_option("--output", output, "Output file (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    set_blas_threads(g.threads);
    tune_allocator();
    const bool f64 = g.precision == "f64";
    if (*train) return cmd_train(g, config_path, quiet);
    if (*eval) return f64 ? cmd_eval<double>(g, probe) : cmd_eval<float>(g, probe);
    if (*inspect) return f64 ? cmd_inspect<double>(g, probe, layers, cap) : cmd_inspect<float>(g, probe, layers, cap);
    if (*verify) return cmd_verify(g, mode);
    if (*gen) return cmd_gen(g, probe, count, output);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CapExceeded& e) {
    std::cerr << "refused: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
