#include "tody/trainer.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "tody/checkpoint.hpp"
#include "tody/errors.hpp"
#include "tody/rng.hpp"

namespace tody {

namespace {

using json = nlohmann::json;

const std::vector<std::string> kConfigKeys = {
    "dataset",   "task",        "labels",      "split",         "inductive_frac", "window",
    "num_patches", "blocks",    "mpnn_layers", "attn_layers",   "heads",          "hidden",
    "time_dim",  "fanouts",     "sampling",    "pe_kind",       "pe_input",       "readout",
    "use_global", "batch_size", "lr",          "epochs",        "seed",           "precision",
    "num_negatives", "bipartite_negatives", "eval_seed", "encoder_checkpoint", "output", "max_batches"};

template <typename V>
V get_key(const json& j, const char* key, V fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<V>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + std::string(key) + "' has the wrong type: " + j.at(key).dump());
  }
}

SamplingMode parse_sampling(const std::string& s) {
  if (s == "uniform") return SamplingMode::kUniform;
  if (s == "last") return SamplingMode::kLast;
  throw ConfigError("config key 'sampling': expected uniform or last, got '" + s + "'");
}

SplitMode parse_split(const std::string& s) {
  if (s == "transductive") return SplitMode::kTransductive;
  if (s == "inductive") return SplitMode::kInductive;
  throw ConfigError("config key 'split': expected transductive or inductive, got '" + s + "'");
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError("config key '" + key + "' " + what);
}

}  // namespace

EncoderConfig RunConfig::encoder_config(const EventGraph& g) const {
  EncoderConfig e;
  e.width = hidden;
  e.node_dim = g.node_dim();
  e.edge_dim = g.edge_dim();
  e.time_dim = time_dim;
  e.blocks = blocks;
  e.mpnn_layers = mpnn_layers;
  e.attn_layers = attn_layers;
  e.heads = heads;
  e.use_global = use_global;
  e.pe_kind = pe_kind;
  e.pe_input = pe_input;
  e.readout = readout;
  e.fanouts = fanouts;
  e.sampling = sampling;
  return e;
}

void RunConfig::validate() const {
  require(!dataset.empty(), "dataset", "must not be empty");
  require(inductive_frac > 0 && inductive_frac < 1, "inductive_frac", "must lie in (0, 1)");
  require(window >= 1, "window", "must be positive");
  require(num_patches >= 1, "num_patches", "must be positive");
  require(num_patches <= window, "num_patches", "must not exceed the window size");
  require(blocks >= 1, "blocks", "must be positive");
  require(mpnn_layers >= 1, "mpnn_layers", "must be positive");
  require(attn_layers >= 1, "attn_layers", "must be positive");
  require(hidden >= 2, "hidden", "must be at least 2");
  require(heads >= 1 && hidden % heads == 0, "heads", "must divide 'hidden'");
  require(pe_kind != PeKind::kSineCosine || hidden % 2 == 0, "hidden", "must be even for sine-cosine encodings");
  require(time_dim >= 0 && time_dim % 2 == 0, "time_dim", "must be even and non-negative");
  for (int f : fanouts) require(f >= 0, "fanouts", "entries must be non-negative");
  require(batch_size >= 1, "batch_size", "must be positive");
  require(std::isfinite(lr) && lr >= 0, "lr", "must be finite and non-negative");
  require(epochs >= 0, "epochs", "must be non-negative");
  require(precision == "f32" || precision == "f64", "precision", "must be f32 or f64");
  require(num_negatives >= 1, "num_negatives", "must be positive");
  require(max_batches >= 0, "max_batches", "must be non-negative");
  require(!output.empty(), "output", "must not be empty");
}

RunConfig parse_run_config(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    if (std::find(kConfigKeys.begin(), kConfigKeys.end(), key) == kConfigKeys.end()) {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  for (const char* key : {"dataset", "task"}) {
    if (!j.contains(key)) throw ConfigError("missing required config key '" + std::string(key) + "'");
  }
  RunConfig c;
  c.dataset = get_key<std::string>(j, "dataset", "");
  c.task = parse_task(get_key<std::string>(j, "task", ""));
  c.labels = get_key<bool>(j, "labels", c.task == Task::kDnc);
  if (c.task == Task::kDnc) c.labels = true;
  c.split = parse_split(get_key<std::string>(j, "split", "transductive"));
  c.inductive_frac = get_key<double>(j, "inductive_frac", c.inductive_frac);
  c.window = get_key<std::int64_t>(j, "window", c.window);
  c.num_patches = get_key<int>(j, "num_patches", c.num_patches);
  c.blocks = get_key<int>(j, "blocks", c.blocks);
  c.mpnn_layers = get_key<int>(j, "mpnn_layers", c.mpnn_layers);
  c.attn_layers = get_key<int>(j, "attn_layers", c.attn_layers);
  c.heads = get_key<int>(j, "heads", c.heads);
  c.hidden = get_key<std::int64_t>(j, "hidden", c.hidden);
  c.time_dim = get_key<int>(j, "time_dim", c.time_dim);
  if (j.contains("fanouts")) {
    const auto f = get_key<std::vector<int>>(j, "fanouts", {});
    require(f.size() == 3, "fanouts", "must list exactly 3 hop fanouts");
    std::copy(f.begin(), f.end(), c.fanouts.begin());
  }
  c.sampling = parse_sampling(get_key<std::string>(j, "sampling", "uniform"));
  c.pe_kind = parse_pe_kind(get_key<std::string>(j, "pe_kind", to_string(c.pe_kind)));
  c.pe_input = parse_pe_input(get_key<std::string>(j, "pe_input", to_string(c.pe_input)));
  c.readout = parse_readout(get_key<std::string>(j, "readout", to_string(c.readout)));
  c.use_global = get_key<bool>(j, "use_global", c.use_global);
  c.batch_size = get_key<int>(j, "batch_size", c.batch_size);
  c.lr = get_key<double>(j, "lr", c.lr);
  c.epochs = get_key<int>(j, "epochs", c.epochs);
  c.seed = get_key<std::uint64_t>(j, "seed", c.seed);
  c.precision = get_key<std::string>(j, "precision", c.precision);
  c.num_negatives = get_key<int>(j, "num_negatives", c.num_negatives);
  c.bipartite_negatives = get_key<bool>(j, "bipartite_negatives", c.bipartite_negatives);
  c.eval_seed = get_key<std::uint64_t>(j, "eval_seed", c.eval_seed);
  c.encoder_checkpoint = get_key<std::string>(j, "encoder_checkpoint", c.encoder_checkpoint);
  c.output = get_key<std::string>(j, "output", c.output);
  c.max_batches = get_key<std::int64_t>(j, "max_batches", c.max_batches);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return parse_run_config(j);
}

json to_json(const RunConfig& c) {
  return json{{"dataset", c.dataset},
              {"task", to_string(c.task)},
              {"labels", c.labels},
              {"split", c.split == SplitMode::kTransductive ? "transductive" : "inductive"},
              {"inductive_frac", c.inductive_frac},
              {"window", c.window},
              {"num_patches", c.num_patches},
              {"blocks", c.blocks},
              {"mpnn_layers", c.mpnn_layers},
              {"attn_layers", c.attn_layers},
              {"heads", c.heads},
              {"hidden", c.hidden},
              {"time_dim", c.time_dim},
              {"fanouts", c.fanouts},
              {"sampling", c.sampling == SamplingMode::kUniform ? "uniform" : "last"},
              {"pe_kind", to_string(c.pe_kind)},
              {"pe_input", to_string(c.pe_input)},
              {"readout", to_string(c.readout)},
              {"use_global", c.use_global},
              {"batch_size", c.batch_size},
              {"lr", c.lr},
              {"epochs", c.epochs},
              {"seed", c.seed},
              {"precision", c.precision},
              {"num_negatives", c.num_negatives},
              {"bipartite_negatives", c.bipartite_negatives},
              {"eval_seed", c.eval_seed},
              {"encoder_checkpoint", c.encoder_checkpoint},
              {"output", c.output},
              {"max_batches", c.max_batches}};
}

std::string git_blob_sha1(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string body = ss.str();
  const std::string data = "blob " + std::to_string(body.size()) + std::string(1, '\0') + body;
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha1(), nullptr) != 1) {
    throw ContractError("SHA-1 digest failed");
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", md[i]);
    hex += buf;
  }
  return hex;
}

template <typename T>
void Adam<T>::step(ParamSet<T>& params) {
  auto& entries = params.entries();
  if (m.empty()) {
    m.resize(entries.size());
    v.resize(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) {
      m[i].assign(static_cast<std::size_t>(entries[i].second.numel()), 0.0);
      v[i].assign(static_cast<std::size_t>(entries[i].second.numel()), 0.0);
    }
  }
  ++steps;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<T>& p = entries[i].second;
    if (!p.requires_grad()) continue;
    const auto g = p.grad();
    auto w = p.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) {
      const double gk = static_cast<double>(g[k]);
      m[i][k] = beta1 * m[i][k] + (1 - beta1) * gk;
      v[i][k] = beta2 * v[i][k] + (1 - beta2) * gk * gk;
      const double upd = lr * (m[i][k] / c1) / (std::sqrt(v[i][k] / c2) + eps);
      w[k] = static_cast<T>(static_cast<double>(w[k]) - upd);
    }
    p.zero_grad();
  }
}

template <typename T>
Model<T> Model<T>::make(const RunConfig& cfg, const EventGraph& g, std::uint64_t seed) {
  Rng rng(seed);
  Model m;
  m.encoder = EncoderParams<T>::make(m.params, cfg.encoder_config(g), rng);
  m.flp = FlpDecoderParams<T>::make(m.params, "flp", cfg.hidden, rng);
  if (cfg.task == Task::kDnc) {
    if (!g.has_labels()) throw DataError("task dnc needs interaction labels, but the dataset has none");
    m.dnc = DncDecoderParams<T>::make(m.params, "dnc", cfg.hidden, g.num_classes(), rng);
  }
  return m;
}

std::vector<Batch> make_batches(const std::vector<std::int64_t>& positions, int batch_size,
                                std::int64_t min_window) {
  std::vector<Batch> out;
  for (std::size_t i = 0; i < positions.size(); i += static_cast<std::size_t>(batch_size)) {
    if (positions[i] < min_window) continue;
    Batch b;
    b.index = static_cast<std::int64_t>(i / static_cast<std::size_t>(batch_size));
    const std::size_t end = std::min(positions.size(), i + static_cast<std::size_t>(batch_size));
    b.edges.assign(positions.begin() + static_cast<std::ptrdiff_t>(i), positions.begin() + static_cast<std::ptrdiff_t>(end));
    out.push_back(std::move(b));
  }
  return out;
}

template <typename T>
Trainer<T>::Trainer(RunConfig cfg, const EventGraph& g) : cfg_(std::move(cfg)), g_(&g) {
  cfg_.validate();
  if (cfg_.task == Task::kDnc && !g.has_labels()) {
    throw DataError("task dnc needs interaction labels, but the dataset has none");
  }
  if (cfg_.split == SplitMode::kTransductive) {
    split_ = chronological_split(g);
    train_source_ = g_;
  } else {
    split_ = inductive_split(g, cfg_.inductive_frac, cfg_.seed);
    train_graph_ = g.subgraph(split_.train_edges);
    train_source_ = &train_graph_;
  }
  // Transductive training uses the stream prefix; inductive training the filtered sub-stream.
  const std::int64_t n_train =
      cfg_.split == SplitMode::kTransductive ? split_.train_end : train_source_->num_edges();
  std::vector<std::int64_t> train_pos(static_cast<std::size_t>(n_train));
  std::iota(train_pos.begin(), train_pos.end(), 0);
  train_batches_ = make_batches(train_pos, cfg_.batch_size, cfg_.num_patches);
  if (cfg_.max_batches > 0 && static_cast<std::int64_t>(train_batches_.size()) > cfg_.max_batches) {
    train_batches_.resize(static_cast<std::size_t>(cfg_.max_batches));
  }
  model_ = Model<T>::make(cfg_, g, derive_seed(cfg_.seed, {0x1a17}));
  if (cfg_.task == Task::kDnc) {
    model_.params.set_trainable("", false);
    model_.params.set_trainable("dnc.", true);
  }
  opt_.lr = cfg_.lr;
}

template <typename T>
Tensor<T> Trainer<T>::flp_batch(const EventGraph& g, const Batch& b, std::uint64_t seed, std::vector<int>& labels,
                                std::size_t& queries) {
  std::vector<Edge> pos;
  pos.reserve(b.edges.size());
  for (std::int64_t e : b.edges) pos.push_back(g.edge(e));
  const auto negs = sample_negatives(pos, g, cfg_.num_negatives, derive_seed(seed, {1}),
                                     NegativeSamplerOptions{cfg_.bipartite_negatives});
  std::vector<std::int64_t> us, vs;
  for (const Edge& e : pos) {
    us.push_back(e.src);
    vs.push_back(e.dst);
  }
  for (std::size_t i = 0; i < pos.size(); ++i) {
    for (NodeId n : negs[i]) {
      us.push_back(pos[i].src);
      vs.push_back(n);
    }
  }
  std::vector<NodeId> anchors(us.begin(), us.end());
  anchors.insert(anchors.end(), vs.begin(), vs.end());
  std::sort(anchors.begin(), anchors.end());
  anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());

  const WindowedGraph window = extract_window(g, b.edges.front(), cfg_.window);
  const PatchSet patches(window, cfg_.num_patches);
  const Tensor<T> h = encode(patches, model_.encoder, anchors, derive_seed(seed, {2}));
  labels.assign(us.size(), 0);
  std::fill(labels.begin(), labels.begin() + static_cast<std::ptrdiff_t>(pos.size()), 1);
  queries = pos.size();
  return flp_score(ops::gather_rows(h, us), ops::gather_rows(h, vs), model_.flp);
}

template <typename T>
Tensor<T> Trainer<T>::dnc_batch(const EventGraph& g, const Batch& b, std::uint64_t seed, std::vector<int>& labels) {
  std::vector<std::int64_t> us;
  labels.clear();
  for (std::int64_t e : b.edges) {
    if (g.edge(e).label < 0) continue;
    us.push_back(g.edge(e).src);
    labels.push_back(g.edge(e).label);
  }
  if (us.empty()) return {};
  std::vector<NodeId> anchors(us.begin(), us.end());
  std::sort(anchors.begin(), anchors.end());
  anchors.erase(std::unique(anchors.begin(), anchors.end()), anchors.end());
  const WindowedGraph window = extract_window(g, b.edges.front(), cfg_.window);
  const PatchSet patches(window, cfg_.num_patches);
  const Tensor<T> h = encode(patches, model_.encoder, anchors, derive_seed(seed, {2}));
  return dnc_logits(ops::gather_rows(h, us), *model_.dnc);
}

template <typename T>
Tensor<T> Trainer<T>::loss_for(int epoch, std::size_t batch) {
  const Batch& b = train_batches_.at(batch);
  const std::uint64_t seed = derive_seed(cfg_.seed, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(b.index)});
  std::vector<int> labels;
  if (cfg_.task == Task::kFlp) {
    std::size_t queries = 0;
    const Tensor<T> p = flp_batch(*train_source_, b, seed, labels, queries);
    std::vector<T> y(labels.begin(), labels.end());
    return ops::bce_loss(p, std::span<const T>(y));
  }
  const Tensor<T> logits = dnc_batch(*train_source_, b, seed, labels);
  if (!logits.defined()) return {};
  return ops::ce_loss(logits, std::span<const int>(labels));
}

template <typename T>
double Trainer<T>::batch_loss(int epoch, std::size_t batch) {
  NoGrad<T> guard;
  const Tensor<T> l = loss_for(epoch, batch);
  return l.defined() ? static_cast<double>(l.item()) : 0.0;
}

template <typename T>
double Trainer<T>::train_epoch(int epoch) {
  double total = 0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < train_batches_.size(); ++i) {
    GradientTape<T> tape;
    const Tensor<T> loss = loss_for(epoch, i);
    if (!loss.defined()) continue;
    const double lv = static_cast<double>(loss.item());
    tape.backward(loss);
    if (!std::isfinite(lv)) {
      std::ostringstream msg;
      msg << "non-finite loss " << lv << " at epoch " << epoch << ", batch " << train_batches_[i].index
          << "; gradient norms:";
      for (const auto& [name, t] : model_.params.entries()) {
        if (!t.requires_grad()) continue;
        double s = 0;
        for (T g : t.grad()) s += static_cast<double>(g) * static_cast<double>(g);
        msg << ' ' << name << '=' << std::sqrt(s);
      }
      throw NumericError(msg.str());
    }
    opt_.step(model_.params);
    total += lv;
    ++counted;
  }
  return counted ? total / static_cast<double>(counted) : 0.0;
}

template <typename T>
std::map<std::string, double> Trainer<T>::evaluate(const std::string& split_name) {
  const std::vector<std::int64_t>* positions = nullptr;
  std::vector<std::int64_t> range;
  if (split_name == "val" || split_name == "test") {
    if (cfg_.split == SplitMode::kTransductive) {
      const std::int64_t lo = split_name == "val" ? split_.train_end : split_.val_end;
      const std::int64_t hi = split_name == "val" ? split_.val_end : g_->num_edges();
      for (std::int64_t i = lo; i < hi; ++i) range.push_back(i);
      positions = &range;
    } else {
      positions = split_name == "val" ? &split_.val_edges : &split_.test_edges;
    }
  } else {
    throw ConfigError("unknown split '" + split_name + "' (expected val or test)");
  }
  NoGrad<T> guard;
  const std::vector<Batch> batches = make_batches(*positions, cfg_.batch_size, cfg_.num_patches);
  const std::uint64_t split_key = split_name == "val" ? 1 : 2;
  std::vector<double> scores;
  std::vector<int> labels;
  std::map<std::string, double> out;
  if (cfg_.task == Task::kFlp) {
    std::vector<double> pos_scores, neg_scores;
    for (const Batch& b : batches) {
      std::vector<int> bl;
      std::size_t q = 0;
      const Tensor<T> p = flp_batch(*g_, b, derive_seed(cfg_.eval_seed, {split_key, static_cast<std::uint64_t>(b.index)}), bl, q);
      const auto pd = p.data();
      for (std::size_t i = 0; i < pd.size(); ++i) {
        scores.push_back(static_cast<double>(pd[i]));
        (i < q ? pos_scores : neg_scores).push_back(static_cast<double>(pd[i]));
      }
      labels.insert(labels.end(), bl.begin(), bl.end());
    }
    if (scores.empty()) throw DataError("split '" + split_name + "' has no scorable batches");
    out["ap"] = average_precision(scores, labels);
    out["auc"] = roc_auc(scores, labels);
    out["mrr"] = mrr(pos_scores, neg_scores, static_cast<std::size_t>(cfg_.num_negatives));
    return out;
  }
  std::vector<int> predicted;
  const int c = model_.dnc->num_classes;
  for (const Batch& b : batches) {
    std::vector<int> bl;
    const Tensor<T> logits = dnc_batch(*g_, b, derive_seed(cfg_.eval_seed, {split_key, static_cast<std::uint64_t>(b.index)}), bl);
    if (!logits.defined()) continue;
    const auto ld = logits.data();
    for (std::size_t i = 0; i < bl.size(); ++i) {
      const T* row = ld.data() + i * static_cast<std::size_t>(c);
      predicted.push_back(static_cast<int>(std::max_element(row, row + c) - row));
      if (c == 2) scores.push_back(static_cast<double>(row[1]) - static_cast<double>(row[0]));
    }
    labels.insert(labels.end(), bl.begin(), bl.end());
  }
  if (labels.empty()) throw DataError("split '" + split_name + "' has no labeled interactions");
  out["accuracy"] = accuracy(predicted, labels);
  if (c == 2) {
    const bool both = std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0;
    if (both) out["auc"] = roc_auc(scores, labels);
  }
  return out;
}

template struct Adam<float>;
template struct Adam<double>;
template struct Model<float>;
template struct Model<double>;
template class Trainer<float>;
template class Trainer<double>;

namespace {

std::string selection_metric(Task t) { return t == Task::kFlp ? "ap" : "accuracy"; }

EventGraph load_dataset(const RunConfig& cfg, const std::filesystem::path& workdir) {
  return load_edge_stream(workdir / cfg.dataset, cfg.labels);
}

template <typename T>
RunResult train_impl(const RunConfig& cfg, const std::filesystem::path& workdir, std::ostream* log) {
  const EventGraph g = load_dataset(cfg, workdir);
  Trainer<T> trainer(cfg, g);
  if (cfg.task == Task::kDnc && !cfg.encoder_checkpoint.empty()) {
    load_prefix(read_checkpoint(workdir / cfg.encoder_checkpoint), trainer.model().params, "encoder.");
  }
  const std::filesystem::path out_dir = workdir / cfg.output;
  std::filesystem::create_directories(out_dir);
  const std::filesystem::path ckpt = out_dir / "best.ckpt";
  const std::string sel = selection_metric(cfg.task);
  const std::string task = to_string(cfg.task);

  RunResult r;
  r.manifest = {{"config", to_json(cfg)},
                {"dataset_sha1", git_blob_sha1(workdir / cfg.dataset)},
                {"num_parameters", trainer.model().params.num_values()},
                {"train_batches", trainer.num_train_batches()}};
  auto save = [&](int epoch, double val) {
    save_checkpoint(ckpt, trainer.model().params,
                    json{{"config", to_json(cfg)}, {"epoch", epoch}, {"val_" + sel, val}});
  };
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double loss = trainer.train_epoch(epoch);
    r.metrics.push_back({epoch, "train", task, "loss", loss, cfg.seed});
    const auto val = trainer.evaluate("val");
    for (const auto& [k, v] : val) r.metrics.push_back({epoch, "val", task, k, v, cfg.seed});
    const double score = val.count(sel) ? val.at(sel) : 0.0;
    if (log) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "epoch %3d  loss %.5f  val %s %.5f\n", epoch, loss, sel.c_str(), score);
      *log << buf << std::flush;
    }
    if (r.best_epoch < 0 || score > r.best_val) {
      r.best_epoch = epoch;
      r.best_val = score;
      save(epoch, score);
    }
  }
  if (r.best_epoch < 0) {
    // Zero epochs: the initial model is the selected one.
    const auto val = trainer.evaluate("val");
    r.best_val = val.count(sel) ? val.at(sel) : 0.0;
    r.best_epoch = 0;
    save(0, r.best_val);
  }
  load_into(read_checkpoint(ckpt), trainer.model().params);
  for (const auto& [k, v] : trainer.evaluate("test")) r.metrics.push_back({r.best_epoch, "test", task, k, v, cfg.seed});
  r.manifest["best_epoch"] = r.best_epoch;
  r.manifest["best_val_" + sel] = r.best_val;

  std::ofstream csv(out_dir / "metrics.csv");
  write_metrics_csv(csv, r.metrics);
  std::ofstream(out_dir / "manifest.json") << r.manifest.dump(2) << '\n';
  return r;
}

template <typename T>
std::vector<MetricRow> eval_impl(const RunConfig& cfg, const std::filesystem::path& workdir,
                                 const std::filesystem::path& checkpoint, const std::string& split) {
  const EventGraph g = load_dataset(cfg, workdir);
  Trainer<T> trainer(cfg, g);
  const Checkpoint ck = read_checkpoint(checkpoint);
  if (ck.meta.contains("config")) {
    // Only the architecture has to agree; run-time knobs may differ.
    const json saved = ck.meta.at("config");
    const json now = to_json(cfg);
    for (const char* key : {"task", "blocks", "mpnn_layers", "attn_layers", "heads", "hidden", "time_dim",
                            "pe_kind", "use_global", "precision"}) {
      if (saved.contains(key) && saved.at(key) != now.at(key)) {
        throw VersionError("checkpoint was written with " + std::string(key) + "=" + saved.at(key).dump() +
                           " but the config says " + now.at(key).dump());
      }
    }
  }
  load_into(ck, trainer.model().params);
  const int epoch = ck.meta.value("epoch", 0);
  std::vector<MetricRow> rows;
  for (const auto& [k, v] : trainer.evaluate(split)) rows.push_back({epoch, split, to_string(cfg.task), k, v, cfg.seed});
  return rows;
}

}  // namespace

RunResult run_training(const RunConfig& cfg, const std::filesystem::path& workdir, std::ostream* log) {
  cfg.validate();
  return cfg.precision == "f64" ? train_impl<double>(cfg, workdir, log) : train_impl<float>(cfg, workdir, log);
}

std::vector<MetricRow> run_evaluation(const RunConfig& cfg, const std::filesystem::path& workdir,
                                      const std::filesystem::path& checkpoint, const std::string& split) {
  cfg.validate();
  return cfg.precision == "f64" ? eval_impl<double>(cfg, workdir, checkpoint, split)
                                : eval_impl<float>(cfg, workdir, checkpoint, split);
}

}  // namespace tody
