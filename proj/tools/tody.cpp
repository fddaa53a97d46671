#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "tody/ablate.hpp"
#include "tody/bench.hpp"
#include "tody/ctdg_store.hpp"
#include "tody/errors.hpp"
#include "tody/kernels.hpp"
#include "tody/synth.hpp"
#include "tody/trainer.hpp"

namespace fs = std::filesystem;
using namespace tody;

namespace {

void print_metrics(const std::vector<MetricRow>& rows, const std::string& split) {
  for (const MetricRow& r : rows) {
    if (r.split != split) continue;
    std::printf("%-6s %-5s %-9s %.6f\n", r.split.c_str(), r.task.c_str(), r.metric.c_str(), r.value);
  }
}

struct Overrides {
  std::string task;
  std::int64_t seed = -1;
  int epochs = -1;
  std::string output;
};

RunConfig resolve(const fs::path& config_path, const Overrides& o) {
  std::ifstream in(config_path);
  if (!in) throw ConfigError("cannot open config file " + config_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config file " + config_path.string() + " is not valid JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!o.task.empty()) j["task"] = o.task;
  if (o.seed >= 0) j["seed"] = o.seed;
  if (o.epochs >= 0) j["epochs"] = o.epochs;
  if (!o.output.empty()) j["output"] = o.output;
  return parse_run_config(j);
}

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--task", o.task, "Override the task (flp|dnc)");
  cmd->add_option("--seed", o.seed, "Override the run seed");
  cmd->add_option("--epochs", o.epochs, "Override the epoch count");
  cmd->add_option("--output", o.output, "Override the output directory");
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (c == ',') {
      if (!cur.empty()) out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Temporal graph transformer: training, evaluation and tooling"};
  app.require_subcommand(1);
  std::string workdir = ".";
  app.add_option("--workdir", workdir, "Directory all relative paths resolve against");

  // prepare
  auto* prep = app.add_subcommand("prepare", "Validate a dataset, write its canonical form and statistics");
  std::string prep_in, prep_out = "prepared";
  bool prep_labels = false;
  prep->add_option("dataset", prep_in, "Edge CSV")->required();
  prep->add_option("--out", prep_out, "Output directory");
  prep->add_flag("--labels", prep_labels, "The CSV has a label column");

  // train / evaluate
  auto* train = app.add_subcommand("train", "Train a model");
  std::string config;
  Overrides ov;
  train->add_option("--config", config, "Run configuration JSON")->required();
  add_overrides(train, ov);

  auto* eval = app.add_subcommand("evaluate", "Evaluate a checkpoint");
  std::string checkpoint, split = "test";
  eval->add_option("--config", config, "Run configuration JSON")->required();
  eval->add_option("--checkpoint", checkpoint, "Checkpoint (default <output>/best.ckpt)");
  eval->add_option("--split", split, "val or test")->check(CLI::IsMember({"val", "test"}));
  add_overrides(eval, ov);

  // ablate
  auto* abl = app.add_subcommand("ablate", "Sweep one configuration axis");
  std::string axis, values, abl_out = "ablation.csv";
  abl->add_option("--config", config, "Base run configuration JSON")->required();
  abl->add_option("--axis", axis, "pe_kind|pe_input|num_patches|window|blocks")->required();
  abl->add_option("--values", values, "Comma-separated settings (default grid per axis)");
  abl->add_option("--out", abl_out, "Output CSV");
  add_overrides(abl, ov);

  // bench
  auto* bench = app.add_subcommand("bench", "Time the encoder forward pass");
  std::vector<std::int64_t> scales{4096, 8192, 16384, 32768};
  std::vector<int> patch_counts{8};
  BenchOptions bopts;
  std::string bench_out = "bench.csv";
  bench->add_option("--scale", scales, "Edge counts");
  bench->add_option("--patches", patch_counts, "Patch counts");
  bench->add_option("--blocks", bopts.blocks, "Blocks L");
  bench->add_option("--hidden", bopts.hidden, "Hidden width");
  bench->add_option("--repeats", bopts.repeats, "Timed repetitions per point");
  bench->add_option("--seed", bopts.seed, "Seed");
  bench->add_option("--out", bench_out, "Output CSV");

  // synth
  auto* synth = app.add_subcommand("synth", "Generate a synthetic edge stream");
  SynthOptions sopts;
  std::string pattern = "periodic", synth_out = "synth.csv";
  synth->add_option("--pattern", pattern, "periodic|longrange");
  synth->add_option("--nodes", sopts.nodes, "Node count");
  synth->add_option("--edges", sopts.edges, "Edge count");
  synth->add_option("--seed", sopts.seed, "Seed");
  synth->add_option("--noise", sopts.noise, "periodic: replacement probability");
  synth->add_option("--gap", sopts.gap_patches, "longrange: patches between recurrences");
  synth->add_option("--patch-edges", sopts.patch_edges, "longrange: edges per block");
  synth->add_option("--out", synth_out, "Output CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : static_cast<int>(ErrorKind::kConfig);
  }

  try {
    if (const char* env = std::getenv("TODY_NUM_THREADS")) {
      const int n = std::atoi(env);
      if (n < 1) throw ConfigError("TODY_NUM_THREADS must be a positive integer");
      kernels::set_num_threads(n);
    }
    const fs::path wd(workdir);
    if (!fs::is_directory(wd)) throw ConfigError("workdir " + workdir + " is not a directory");

    if (*prep) {
      const EventGraph g = load_edge_stream(wd / prep_in, prep_labels);
      const DatasetStats s = dataset_stats(g);
      fs::create_directories(wd / prep_out);
      std::ofstream(wd / prep_out / "edges.csv") << format_edge_stream(g, prep_labels);
      const nlohmann::json j = {{"nodes", s.nodes},
                                {"edges", s.edges},
                                {"unique_edges", s.unique_edges},
                                {"repetitive_edge_pct", s.repetitive_edge_pct},
                                {"edge_dim", s.edge_dim},
                                {"has_labels", s.has_labels},
                                {"bipartite", s.bipartite}};
      std::ofstream(wd / prep_out / "stats.json") << j.dump(2) << '\n';
      std::cout << j.dump(2) << '\n';
    } else if (*train) {
      const RunConfig cfg = resolve(wd / config, ov);
      const RunResult r = run_training(cfg, wd, &std::cerr);
      std::printf("best epoch %d\n", r.best_epoch);
      print_metrics(r.metrics, "test");
    } else if (*eval) {
      const RunConfig cfg = resolve(wd / config, ov);
      const fs::path ck = checkpoint.empty() ? wd / cfg.output / "best.ckpt" : wd / checkpoint;
      const auto rows = run_evaluation(cfg, wd, ck, split);
      fs::create_directories(wd / cfg.output);
      std::ofstream out(wd / cfg.output / ("eval_" + split + ".csv"));
      write_metrics_csv(out, rows);
      print_metrics(rows, split);
    } else if (*abl) {
      const RunConfig cfg = resolve(wd / config, ov);
      const auto vals = split_list(values);
      const auto rows = run_ablation(cfg, axis, vals, wd, &std::cerr);
      std::ofstream out(wd / abl_out);
      write_ablation_csv(out, rows);
      write_ablation_csv(std::cout, rows);
    } else if (*bench) {
      const auto rows = bench_encoder(scales, patch_counts, bopts);
      std::ofstream out(wd / bench_out);
      write_bench_csv(out, rows);
      write_bench_csv(std::cout, rows);
    } else if (*synth) {
      sopts.pattern = parse_synth_pattern(pattern);
      const EventGraph g = synthesize(sopts);
      std::ofstream(wd / synth_out, std::ios::binary) << format_edge_stream(g, false);
      const DatasetStats s = dataset_stats(g);
      std::printf("nodes %lld edges %lld repetitive %.2f%%\n", static_cast<long long>(s.nodes),
                  static_cast<long long>(s.edges), s.repetitive_edge_pct);
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::kInternal);
  }
  return 0;
}
