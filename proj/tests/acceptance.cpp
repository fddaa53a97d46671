// Acceptance checks 1-10. `acceptance` runs all of them; `acceptance c3 c5`
// runs a subset. One PASS/FAIL/SKIP line per check. Exit status: 0 if every
// selected check passed, 77 if the only non-pass was a skip, 1 otherwise.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "gradcheck.hpp"
#include "metric_oracles.hpp"
#include "tody/bench.hpp"
#include "tody/encoder.hpp"
#include "tody/global_attn.hpp"
#include "tody/seqpack.hpp"
#include "tody/synth.hpp"
#include "tody/tasks.hpp"
#include "tody/trainer.hpp"

using namespace tody;
using namespace tody::testing;
namespace fs = std::filesystem;

namespace {

enum class Outcome { kPass, kFail, kSkip };

struct Result {
  Outcome outcome;
  std::string detail;
};

Result verdict(bool ok, std::string detail) { return {ok ? Outcome::kPass : Outcome::kFail, std::move(detail)}; }

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("tody_accept_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// 1. End-to-end gradients against central differences.
Result gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(2024);
  const EventGraph g = random_graph(rng, 16, 60, 2);
  const WindowedGraph w(g, 0, g.num_edges());
  const PatchSet patches(w, 4);
  RunConfig cfg;
  cfg.blocks = 2;
  cfg.mpnn_layers = 2;
  cfg.attn_layers = 2;
  cfg.heads = 2;
  cfg.hidden = 8;
  cfg.time_dim = 4;
  cfg.fanouts = {3, 2, 1};
  Model<double> model = Model<double>::make(cfg, g, 7);
  const std::vector<std::int64_t> us{0, 1, 2, 3, 4, 5}, vs{8, 9, 10, 11, 12, 13};
  const std::vector<double> y{1, 0, 1, 0, 1, 0};
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, t] : model.params.entries()) inputs.push_back(t);
  const auto loss = [&] {
    const Tensor<double> h = encode(patches, model.encoder, std::span<const NodeId>(), 11);
    const Tensor<double> p = flp_score(ops::gather_rows(h, us), ops::gather_rows(h, vs), model.flp);
    return ops::bce_loss(p, std::span<const double>(y));
  };
  const GradReport r = check_gradients(inputs, loss);
  const double secs = seconds_since(t0);
  return verdict(r.max_rel < 1e-5 && secs < 60.0 && r.checked == static_cast<std::size_t>(model.params.num_values()),
                 fmt("max rel err %.3g over %.0f parameters, %.1f s", r.max_rel, static_cast<double>(r.checked), secs));
}

// 2. unpack(pack(X)) == X on occupied entries.
Result roundtrip() {
  Rng rng(1);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 49);
    const int m = 1 + static_cast<int>(rng() % 16);
    const int d = 1 + static_cast<int>(rng() % 32);
    const int e = m + static_cast<int>(rng() % 200);
    const EventGraph g = random_graph(rng, n, e);
    const WindowedGraph w(g, 0, e);
    const PatchSet patches(w, m);
    std::vector<NodeId> nodes;
    for (NodeId v = 0; v < n; ++v)
      if (rng() % 3 != 0) nodes.push_back(v);
    const TokenLayout l = make_layout(patches, nodes);
    const Tensor<double> x = random_tensor<double>({l.num_cells(), d}, rng);
    const Tensor<double> back = unpack(pack(x, l, random_tensor<double>({d}, rng)));
    if (back.shape() != x.shape() || !std::equal(x.data().begin(), x.data().end(), back.data().begin())) ++bad;
  }
  return verdict(bad == 0, fmt("%.0f of 1000 instances differ", bad));
}

// 3. Patches partition the window into balanced, time-ordered pieces.
Result partition() {
  Rng rng(3);
  int bad = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int e = 1 + static_cast<int>(rng() % 400);
    const EventGraph g = random_graph(rng, 2 + static_cast<int>(rng() % 30), e, 0, trial % 2 == 0);
    const std::int64_t end = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(e));
    const std::int64_t size = 1 + static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(end));
    const WindowedGraph w = extract_window(g, end, size);
    const int m = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(std::min<std::int64_t>(w.size(), 64)));
    const PatchSet p(w, m);
    bool ok = p.num_patches() == m && p.patch_begin(0) == 0 && p.patch_end(m - 1) == w.size();
    std::int64_t lo = w.size(), hi = 0;
    for (int k = 0; k < m && ok; ++k) {
      const std::int64_t len = p.patch_end(k) - p.patch_begin(k);
      lo = std::min(lo, len);
      hi = std::max(hi, len);
      if (k + 1 < m) ok = ok && p.patch_end(k) == p.patch_begin(k + 1);
      for (std::int64_t i = p.patch_begin(k); i < p.patch_end(k); ++i) ok = ok && p.patch_of(i) == k;
      if (k + 1 < m) {
        double last = -INFINITY, first = INFINITY;
        for (std::int64_t i = p.patch_begin(k); i < p.patch_end(k); ++i) last = std::max(last, w.edge(i).t);
        for (std::int64_t i = p.patch_begin(k + 1); i < p.patch_end(k + 1); ++i) first = std::min(first, w.edge(i).t);
        ok = ok && last <= first;
      }
    }
    ok = ok && hi - lo <= 1 && lo >= 1;
    if (!ok) ++bad;
  }
  return verdict(bad == 0, fmt("%.0f of 1000 windows violate the partition properties", bad));
}

// 4. Future slots and future patches never influence the past.
Result causality() {
  Rng rng(4);
  int bad_attn = 0, bad_tok = 0;
  for (int trial = 0; trial < 200; ++trial) {
    const int n = 3 + static_cast<int>(rng() % 12);
    const int m = 2 + static_cast<int>(rng() % 7);
    const int e = m * (2 + static_cast<int>(rng() % 6));
    const EventGraph g = random_graph(rng, n, e, 2);
    const WindowedGraph w(g, 0, e);
    const PatchSet patches(w, m);
    const int j = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(m - 1));

    // Global attention: overwrite every token at slots >= j.
    std::vector<NodeId> all(static_cast<std::size_t>(n));
    std::iota(all.begin(), all.end(), 0);
    const TokenLayout l = make_layout(patches, all);
    ParamSet<double> ps;
    const auto tp = TransformerParams<double>::make(ps, "attn", 8, 2, 2, rng);
    const auto packed = pack(random_tensor<double>({l.num_cells(), 8}, rng), l, random_tensor<double>({8}, rng));
    auto perturbed = packed;
    std::vector<double> tok(packed.tokens.data().begin(), packed.tokens.data().end());
    for (std::int64_t r = 0; r < l.num_rows(); ++r)
      for (int s = j; s < m; ++s)
        for (int k = 0; k < 8; ++k) tok[static_cast<std::size_t>((r * m + s) * 8 + k)] += 1.0 + static_cast<double>(rng() % 7);
    perturbed.tokens = Tensor<double>::from(packed.tokens.shape(), tok);
    const Tensor<double> ta = attend(packed, tp).tokens;
    const Tensor<double> tb = attend(perturbed, tp).tokens;
    const auto a = ta.data();
    const auto b = tb.data();
    for (std::int64_t r = 0; r < l.num_rows(); ++r)
      for (int s = 0; s < j; ++s)
        for (int k = 0; k < 8; ++k) {
          const auto i = static_cast<std::size_t>((r * m + s) * 8 + k);
          if (a[i] != b[i]) ++bad_attn;
        }

    // Block-0 tokens: rewrite endpoints and features of every edge in patch j.
    std::vector<Edge> edges = g.edges();
    std::vector<float> feats = g.edge_feats();
    for (std::int64_t i = patches.patch_begin(j); i < patches.patch_end(j); ++i) {
      auto& ed = edges[static_cast<std::size_t>(i)];
      ed.dst = static_cast<NodeId>((ed.dst + 1 + rng() % static_cast<std::uint64_t>(n - 1)) % static_cast<std::uint64_t>(n));
      if (ed.dst == ed.src) ed.dst = static_cast<NodeId>((ed.dst + 1) % n);
      feats[static_cast<std::size_t>(i) * 2] = static_cast<float>(rng() % 100) / 10.0f;
    }
    const EventGraph g2(n, edges, 2, feats);
    const WindowedGraph w2(g2, 0, e);
    const PatchSet patches2(w2, m);
    EncoderConfig cfg;
    cfg.width = 8;
    cfg.edge_dim = 2;
    cfg.time_dim = 4;
    cfg.blocks = 1;
    cfg.mpnn_layers = 2;
    cfg.fanouts = {3, 2, 1};
    ParamSet<double> eps;
    const auto ep = EncoderParams<double>::make(eps, cfg, rng);
    EncodeTrace<double> t1, t2;
    const auto seed = rng();
    encode(patches, ep, std::span<const NodeId>(), seed, &t1);
    encode(patches2, ep, std::span<const NodeId>(), seed, &t2);
    for (std::int64_t c = 0; c < t1.layout.num_cells(); ++c) {
      const int patch = t1.layout.cell_patch[static_cast<std::size_t>(c)];
      if (patch >= j) continue;
      const auto c2 = t2.layout.cell_of(t1.layout.cell_node[static_cast<std::size_t>(c)], patch);
      if (c2 < 0) {
        ++bad_tok;
        continue;
      }
      for (std::int64_t k = 0; k < 8; ++k)
        if (t1.block0_tokens.at({c, k}) != t2.block0_tokens.at({c2, k})) ++bad_tok;
    }
  }
  return verdict(bad_attn == 0 && bad_tok == 0,
                 fmt("%.0f attention outputs and %.0f block-0 token values changed", bad_attn, bad_tok));
}

// 5. Metrics against quadratic references, and AUC under the null.
Result metrics() {
  Rng rng(5);
  double worst = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 100);
    const int levels = 1 + static_cast<int>(rng() % 20);
    std::vector<double> s(static_cast<std::size_t>(n));
    std::vector<int> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      // Half the instances have heavy ties.
      s[static_cast<std::size_t>(i)] = trial % 2 ? std::uniform_real_distribution<double>(0, 1)(rng)
                                                 : static_cast<double>(rng() % static_cast<unsigned>(levels));
      y[static_cast<std::size_t>(i)] = static_cast<int>(rng() % 2);
    }
    // both classes present
    const auto pos_count = std::count(y.begin(), y.end(), 1);
    if (pos_count == 0) y[0] = 1;
    if (pos_count == n) y[0] = 0;
    worst = std::max(worst, std::abs(average_precision(s, y) - brute_ap(s, y)));
    worst = std::max(worst, std::abs(roc_auc(s, y) - brute_auc(s, y)));
    const std::size_t k = 1 + rng() % 10;
    std::vector<double> pos(static_cast<std::size_t>(n)), neg(static_cast<std::size_t>(n) * k);
    for (auto& v : pos) v = static_cast<double>(rng() % static_cast<unsigned>(levels));
    for (auto& v : neg) v = static_cast<double>(rng() % static_cast<unsigned>(levels));
    worst = std::max(worst, std::abs(mrr(pos, neg, k) - brute_mrr(pos, neg, k)));
  }
  double sum = 0;
  const int trials = 10000;
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < trials; ++t) {
    std::vector<double> s(100);
    std::vector<int> y(100);
    for (std::size_t i = 0; i < 100; ++i) {
      s[i] = u(rng);
      y[i] = static_cast<int>(rng() % 2);
    }
    y[0] = 1;
    y[1] = 0;
    sum += roc_auc(s, y);
  }
  const double mean = sum / trials;
  return verdict(worst <= 1e-12 && std::abs(mean - 0.5) <= 0.02,
                 fmt("max deviation from reference %.3g; null AUC mean %.4f", worst, mean));
}

RunConfig synthetic_config(const std::string& dataset) {
  RunConfig c;
  c.dataset = dataset;
  c.window = 256;
  c.num_patches = 8;
  c.hidden = 32;
  c.time_dim = 8;
  c.fanouts = {8, 1, 1};
  return c;
}

// 6. The periodic stream is learnable.
Result periodic() {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = scratch("periodic");
  SynthOptions o;
  o.nodes = 20;
  o.edges = 2000;
  o.seed = 7;
  std::ofstream(dir / "periodic.csv") << format_edge_stream(synthesize(o), false);
  RunConfig c = synthetic_config("periodic.csv");
  c.batch_size = 100;
  c.epochs = 50;
  c.seed = 1;
  const RunResult r = run_training(c, dir);
  double best = 0;
  int first_hit = -1;
  for (const auto& row : r.metrics) {
    if (row.split != "val" || row.metric != "ap") continue;
    best = std::max(best, row.value);
    if (first_hit < 0 && row.value >= 0.95) first_hit = row.epoch;
  }
  const double secs = seconds_since(t0);
  return verdict(best >= 0.95 && secs < 300,
                 fmt("best val AP %.4f (first >= 0.95 at epoch %.0f), %.0f s", best, first_hit, secs));
}

// 7. Real data, when available.
Result uci() {
  const char* path = std::getenv("TODY_UCI_CSV");
  if (!path || !fs::exists(path)) {
    return {Outcome::kSkip, "TODY_UCI_CSV does not point at the UCI edge list; not run"};
  }
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir = scratch("uci");
  RunConfig c;
  c.dataset = fs::absolute(path).string();
  c.epochs = 30;
  c.window = 4096;
  c.seed = 1;
  const RunResult r = run_training(c, dir);
  double ap = 0;
  for (const auto& row : r.metrics)
    if (row.split == "test" && row.metric == "ap") ap = row.value;
  const double secs = seconds_since(t0);
  return verdict(ap >= 0.90 && secs < 3600, fmt("test AP %.4f, %.0f s", ap, secs));
}

// 8. Ablation ordering on the long-range stream.
Result ablation() {
  const fs::path dir = scratch("longrange");
  SynthOptions o;
  o.pattern = SynthPattern::kLongRange;
  o.nodes = 24;
  o.edges = 3200;
  o.seed = 3;
  o.gap_patches = 5;
  o.patch_edges = 32;
  std::ofstream(dir / "lr.csv") << format_edge_stream(synthesize(o), false);
  RunConfig base = synthetic_config("lr.csv");
  base.batch_size = 32;
  base.lr = 1e-3;
  base.epochs = 15;
  struct Variant {
    const char* name;
    std::function<void(RunConfig&)> apply;
  };
  const std::vector<Variant> variants{
      {"full", [](RunConfig&) {}},
      {"one block", [](RunConfig& c) { c.blocks = 1; }},
      {"no PE", [](RunConfig& c) { c.pe_kind = PeKind::kNone; }},
      {"no global", [](RunConfig& c) { c.use_global = false; }},
  };
  std::vector<double> med;
  std::string detail;
  for (const auto& v : variants) {
    std::vector<double> aps;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      RunConfig c = base;
      v.apply(c);
      c.seed = seed;
      c.output = "run";
      for (const auto& row : run_training(c, dir).metrics)
        if (row.split == "test" && row.metric == "ap") aps.push_back(row.value);
    }
    std::sort(aps.begin(), aps.end());
    med.push_back(aps[1]);
    detail += std::string(detail.empty() ? "" : ", ") + v.name + fmt(" %.4f", aps[1]);
  }
  const bool ok = med[0] >= med[1] && med[1] >= med[2] && med[2] >= med[3] && med[0] - med[3] >= 0.02;
  return verdict(ok, "median test AP: " + detail);
}

// 9. Forward time is near-linear in E.
Result scaling() {
  const std::vector<std::int64_t> es{4096, 8192, 16384, 32768};
  const std::vector<int> ms{8};
  BenchOptions opts;
  opts.repeats = 5;
  const auto rows = bench_encoder(es, ms, opts);
  double worst = 0;
  std::string detail;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    detail += fmt(i ? ", %.0f ms" : "%.0f ms", rows[i].ms);
    if (i) worst = std::max(worst, rows[i].ms / rows[i - 1].ms);
  }
  return verdict(worst <= 2.5, "times " + detail + fmt("; worst doubling ratio %.2f", worst));
}

// 10. Repeated train/evaluate runs give identical metrics files.
Result determinism() {
  const fs::path dir = scratch("determinism");
  SynthOptions o;
  o.nodes = 20;
  o.edges = 800;
  o.seed = 11;
  std::ofstream(dir / "d.csv") << format_edge_stream(synthesize(o), false);
  RunConfig c = synthetic_config("d.csv");
  c.window = 128;
  c.hidden = 16;
  c.batch_size = 50;
  c.epochs = 3;
  c.seed = 9;
  auto slurp = [](const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  };
  c.output = "a";
  run_training(c, dir);
  c.output = "b";
  run_training(c, dir);
  const bool train_same = slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv");
  std::ostringstream e1, e2;
  write_metrics_csv(e1, run_evaluation(c, dir, dir / "a" / "best.ckpt", "test"));
  write_metrics_csv(e2, run_evaluation(c, dir, dir / "b" / "best.ckpt", "test"));
  const bool eval_same = e1.str() == e2.str();
  return verdict(train_same && eval_same && !slurp(dir / "a" / "metrics.csv").empty(),
                 std::string("train metrics ") + (train_same ? "identical" : "differ") + ", evaluate metrics " +
                     (eval_same ? "identical" : "differ"));
}

struct Criterion {
  const char* id;
  const char* title;
  Result (*run)();
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> all{
      {"c1", "gradient correctness", gradients},  {"c2", "pack/unpack roundtrip", roundtrip},
      {"c3", "patch partition", partition},       {"c4", "causality", causality},
      {"c5", "metric oracles", metrics},          {"c6", "periodic synthetic learning", periodic},
      {"c7", "UCI desk-scale", uci},              {"c8", "ablation ordering", ablation},
      {"c9", "scaling in E", scaling},            {"c10", "determinism", determinism},
  };
  std::vector<const Criterion*> selected;
  for (int i = 1; i < argc; ++i) {
    const auto it = std::find_if(all.begin(), all.end(), [&](const Criterion& c) { return argv[i] == std::string(c.id); });
    if (it == all.end()) {
      std::fprintf(stderr, "unknown criterion %s\n", argv[i]);
      return 2;
    }
    selected.push_back(&*it);
  }
  if (selected.empty())
    for (const auto& c : all) selected.push_back(&c);

  int failed = 0, skipped = 0;
  for (const Criterion* c : selected) {
    Result r;
    try {
      r = c->run();
    } catch (const std::exception& e) {
      r = {Outcome::kFail, std::string("exception: ") + e.what()};
    }
    const char* tag = r.outcome == Outcome::kPass ? "PASS" : r.outcome == Outcome::kFail ? "FAIL" : "SKIP";
    std::printf("criterion %s (%s): %s: %s\n", c->id + 1, c->title, tag, r.detail.c_str());
    std::fflush(stdout);
    failed += r.outcome == Outcome::kFail;
    skipped += r.outcome == Outcome::kSkip;
  }
  if (failed) return 1;
  return skipped ? 77 : 0;
}
