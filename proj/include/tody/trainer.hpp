#pragma once

// Training and evaluation over a chronologically batched edge stream.
//
// Every prediction batch is scored from the window of the W edges that
// precede its first edge, so no scored edge is ever visible to the encoder.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tody/ctdg_store.hpp"
#include "tody/encoder.hpp"
#include "tody/params.hpp"
#include "tody/tasks.hpp"

namespace tody {

struct RunConfig {
  std::string dataset;  // CSV path, relative to the working directory
  Task task = Task::kFlp;
  bool labels = false;  // the CSV carries a label column (implied by dnc)
  SplitMode split = SplitMode::kTransductive;
  double inductive_frac = 0.1;
  std::int64_t window = 65536;
  int num_patches = 8;
  int blocks = 3;
  int mpnn_layers = 3;
  int attn_layers = 2;
  int heads = 2;
  std::int64_t hidden = 64;
  int time_dim = 16;
  Fanouts fanouts{64, 1, 1};
  SamplingMode sampling = SamplingMode::kUniform;
  PeKind pe_kind = PeKind::kSineCosine;
  PeInput pe_input = PeInput::kPatchIndex;
  ReadoutMode readout = ReadoutMode::kLast;
  bool use_global = true;
  int batch_size = 200;
  double lr = 3e-4;
  int epochs = 100;
  std::uint64_t seed = 0;
  std::string precision = "f32";
  int num_negatives = 1;
  bool bipartite_negatives = false;
  std::uint64_t eval_seed = 2024;
  std::string encoder_checkpoint;  // dnc: FLP checkpoint providing the frozen encoder
  std::string output = "run";      // output directory, relative to the working directory
  std::int64_t max_batches = 0;    // per-epoch cap on training batches, 0 = all

  EncoderConfig encoder_config(const EventGraph& g) const;
  // Range checks; throws ConfigError naming the offending key.
  void validate() const;
};

// Required keys: "dataset", "task". Unknown keys are rejected.
RunConfig parse_run_config(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);
nlohmann::json to_json(const RunConfig& c);

// Git blob hash of a file's bytes: sha1("blob <size>\0" + content), hex.
std::string git_blob_sha1(const std::filesystem::path& path);

template <typename T>
struct Adam {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t steps = 0;
  std::vector<std::vector<double>> m, v;

  // Updates every parameter that requires gradients, then clears gradients.
  void step(ParamSet<T>& params);
};

template <typename T>
struct Model {
  ParamSet<T> params;
  EncoderParams<T> encoder;
  FlpDecoderParams<T> flp;
  std::optional<DncDecoderParams<T>> dnc;

  // Parameters are registered encoder first, then the FLP head, then the DNC
  // head, all from one generator seeded with `seed`.
  static Model make(const RunConfig& cfg, const EventGraph& g, std::uint64_t seed);
};

struct Batch {
  std::int64_t index = 0;
  std::vector<std::int64_t> edges;  // positions in the graph the batch is drawn from
};

// Consecutive groups of `batch_size` positions, skipping groups whose
// preceding window would hold fewer than `min_window` edges.
std::vector<Batch> make_batches(const std::vector<std::int64_t>& positions, int batch_size,
                                std::int64_t min_window);

template <typename T>
class Trainer {
 public:
  Trainer(RunConfig cfg, const EventGraph& g);

  const RunConfig& config() const { return cfg_; }
  Model<T>& model() { return model_; }
  const SplitSpec& split() const { return split_; }

  // One pass over the training batches; returns the mean batch loss.
  double train_epoch(int epoch);
  // Metric name -> value on "val" or "test". Deterministic given the config.
  std::map<std::string, double> evaluate(const std::string& split_name);
  // Loss of one training batch without updating anything (for checks).
  double batch_loss(int epoch, std::size_t batch);

  std::size_t num_train_batches() const { return train_batches_.size(); }

 private:
  Tensor<T> flp_batch(const EventGraph& g, const Batch& b, std::uint64_t seed, std::vector<int>& labels,
                      std::size_t& queries);
  Tensor<T> dnc_batch(const EventGraph& g, const Batch& b, std::uint64_t seed, std::vector<int>& labels);
  Tensor<T> loss_for(int epoch, std::size_t batch);

  RunConfig cfg_;
  const EventGraph* g_;
  SplitSpec split_;
  EventGraph train_graph_;  // inductive: training edges only
  const EventGraph* train_source_;
  std::vector<Batch> train_batches_;
  Model<T> model_;
  Adam<T> opt_;
};

struct RunResult {
  std::vector<MetricRow> metrics;
  nlohmann::json manifest;
  int best_epoch = -1;
  double best_val = 0;
};

// Trains per the config, writes <output>/{best.ckpt, metrics.csv,
// manifest.json} under `workdir`, and returns the metrics history. The test
// split is evaluated once with the best checkpoint.
RunResult run_training(const RunConfig& cfg, const std::filesystem::path& workdir, std::ostream* log = nullptr);

// Loads `checkpoint` into a model built from `cfg` and evaluates `split`.
std::vector<MetricRow> run_evaluation(const RunConfig& cfg, const std::filesystem::path& workdir,
                                      const std::filesystem::path& checkpoint, const std::string& split);

}  // namespace tody
