#include "tody/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <limits>
#include <memory>
#include <ostream>
#include <random>

#ifdef __GLIBC__
#include <malloc.h>
#endif

#include "tody/encoder.hpp"
#include "tody/errors.hpp"
#include "tody/rng.hpp"

namespace tody {

namespace {

EventGraph random_stream(std::int64_t edges, std::uint64_t seed) {
  const auto n = static_cast<NodeId>(std::max<std::int64_t>(16, edges / 8));
  Rng rng(seed);
  std::uniform_int_distribution<NodeId> node(0, n - 1);
  std::vector<Edge> es;
  es.reserve(static_cast<std::size_t>(edges));
  for (std::int64_t i = 0; i < edges; ++i) {
    const NodeId u = node(rng);
    NodeId v = node(rng);
    if (v == u) v = (v + 1) % n;
    es.push_back({u, v, static_cast<double>(i), i, -1});
  }
  return EventGraph(n, std::move(es), 0, {});
}

}  // namespace

std::vector<BenchRow> bench_encoder(std::span<const std::int64_t> edge_counts, std::span<const int> patch_counts,
                                    const BenchOptions& opts) {
  if (opts.repeats < 1) throw ConfigError("bench repeats must be positive");
#ifdef __GLIBC__
  // Keep freed tensor buffers in the heap; otherwise every pass pays fresh page faults.
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
  struct Case {
    std::int64_t edges;
    int patches;
    NodeId nodes;
    std::unique_ptr<EventGraph> graph;
    std::unique_ptr<WindowedGraph> window;
    std::unique_ptr<PatchSet> patch_set;
    ParamSet<float> ps;
    std::unique_ptr<EncoderParams<float>> params;
    double best = std::numeric_limits<double>::infinity();
  };
  std::vector<std::unique_ptr<Case>> cases;
  for (std::int64_t e : edge_counts) {
    if (e < 1) throw ConfigError("bench scale must be positive");
    for (int m : patch_counts) {
      auto c = std::make_unique<Case>();
      c->edges = e;
      c->patches = m;
      c->graph = std::make_unique<EventGraph>(random_stream(e, derive_seed(opts.seed, {static_cast<std::uint64_t>(e)})));
      c->nodes = c->graph->num_nodes();
      c->window = std::make_unique<WindowedGraph>(extract_window(*c->graph, c->graph->num_edges(), c->graph->num_edges()));
      c->patch_set = std::make_unique<PatchSet>(*c->window, m);
      EncoderConfig cfg;
      cfg.width = opts.hidden;
      cfg.blocks = opts.blocks;
      cfg.mpnn_layers = opts.mpnn_layers;
      Rng rng(opts.seed);
      c->params = std::make_unique<EncoderParams<float>>(EncoderParams<float>::make(c->ps, cfg, rng));
      cases.push_back(std::move(c));
    }
  }
  NoGrad<float> guard;
  for (auto& c : cases) encode(*c->patch_set, *c->params, {}, opts.seed);  // warm-up
  // Rounds visit every case once, so a slow stretch on a shared machine hits all sizes alike.
  for (int r = 0; r < opts.repeats; ++r) {
    for (auto& c : cases) {
      const auto t0 = std::chrono::steady_clock::now();
      const Tensor<float> h = encode(*c->patch_set, *c->params, {}, opts.seed);
      const auto t1 = std::chrono::steady_clock::now();
      if (h.dim(0) != c->nodes) throw ContractError("bench: unexpected embedding shape");
      c->best = std::min(c->best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
  }
  std::vector<BenchRow> rows;
  for (const auto& c : cases) rows.push_back({c->edges, c->patches, opts.blocks, c->best});
  return rows;
}

void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows) {
  os << "E,M,L,ms\n";
  char buf[64];
  for (const BenchRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.3f", r.ms);
    os << r.edges << ',' << r.patches << ',' << r.blocks << ',' << buf << '\n';
  }
}

}  // namespace tody
