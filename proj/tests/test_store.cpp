#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <set>

#include "tody/ctdg_store.hpp"
#include "tody/errors.hpp"
#include "tody/rng.hpp"
#include "tody/stream.hpp"
#include "tody/synth.hpp"

using namespace tody;

namespace {

EventGraph random_graph(Rng& rng, int n, int e, bool ties = false) {
  std::uniform_int_distribution<int> node(0, n - 1);
  std::uniform_int_distribution<int> tick(0, ties ? e / 4 : 1000000);
  std::vector<Edge> es;
  for (int i = 0; i < e; ++i) {
    int u = node(rng), v = node(rng);
    if (u == v) v = (v + 1) % n;
    es.push_back({u, v, static_cast<double>(tick(rng)), 0, -1});
  }
  return EventGraph(n, std::move(es), 0, {});
}

}  // namespace

TEST_CASE("csv parsing: header, labels, features") {
  const auto g = parse_edge_stream("src,dst,t,label,f1,f2\n10,20,2.0,1,0.5,1\n20,30,1.0,0,0.25,2\n", true);
  CHECK(g.num_nodes() == 3);
  CHECK(g.num_edges() == 2);
  CHECK(g.edge_dim() == 2);
  CHECK(g.has_labels());
  // sorted by time
  CHECK(g.edge(0).t == 1.0);
  CHECK(g.edge(0).label == 0);
  CHECK(g.edge_feat(0)[0] == 0.25f);
  CHECK(g.edge_feat(1)[1] == 1.0f);
  CHECK(g.original_ids() == std::vector<std::int64_t>{10, 20, 30});
}

TEST_CASE("csv errors are data errors") {
  CHECK_THROWS_AS(parse_edge_stream("src,dst,t\n", false), DataError);
  CHECK_THROWS_AS(parse_edge_stream("src,dst,t\n1,2\n", false), DataError);
  CHECK_THROWS_AS(parse_edge_stream("src,dst,t\n1,2,x\n", false), DataError);
  CHECK_THROWS_AS(parse_edge_stream("src,dst,t\n1,2,nan\n", false), DataError);
  CHECK_THROWS_AS(parse_edge_stream("src,dst,t\n1,2,0,1\n1,2,1\n", false), DataError);
  CHECK_THROWS_AS(load_edge_stream("/nonexistent/file.csv", false), DataError);
}

TEST_CASE("format/parse roundtrip is stable") {
  Rng rng(5);
  const auto g = random_graph(rng, 30, 200, true);
  const std::string a = format_edge_stream(g, false);
  const std::string b = format_edge_stream(parse_edge_stream(a, false), false);
  CHECK(a == b);
}

TEST_CASE("construction sorts stably and reassigns indices") {
  std::vector<Edge> es{{0, 1, 3.0, 0, -1}, {1, 2, 1.0, 0, -1}, {2, 0, 1.0, 0, -1}};
  EventGraph g(3, es, 0, {});
  CHECK(g.edge(0).src == 1);
  CHECK(g.edge(1).src == 2);
  CHECK(g.edge(2).src == 0);
  for (std::int64_t i = 0; i < 3; ++i) CHECK(g.edge(i).global_idx == i);
  CHECK_THROWS_AS(EventGraph(2, {{0, 5, 0.0, 0, -1}}, 0, {}), DataError);
}

TEST_CASE("chronological split 70/15/15") {
  Rng rng(1);
  const auto g = random_graph(rng, 10, 1000);
  const auto s = chronological_split(g);
  CHECK(s.train_end == 700);
  CHECK(s.val_end == 850);
  CHECK(s.test_edges.size() == 150);
  CHECK_THROWS_AS(chronological_split(g, {0.5, 0.5, 0.5}), ConfigError);
}

TEST_CASE("inductive split masks nodes") {
  Rng rng(2);
  const auto g = random_graph(rng, 50, 2000);
  const auto s = inductive_split(g, 0.1, 7);
  CHECK(s.masked_nodes.size() == 5);
  const std::set<NodeId> masked(s.masked_nodes.begin(), s.masked_nodes.end());
  for (auto i : s.train_edges) {
    CHECK(masked.count(g.edge(i).src) == 0);
    CHECK(masked.count(g.edge(i).dst) == 0);
  }
  for (auto i : s.test_edges) {
    CHECK((masked.count(g.edge(i).src) + masked.count(g.edge(i).dst)) > 0);
  }
  const auto again = inductive_split(g, 0.1, 7);
  CHECK(again.masked_nodes == s.masked_nodes);
}

TEST_CASE("negative sampler excludes the true destination") {
  Rng rng(3);
  const auto g = random_graph(rng, 12, 300);
  std::vector<Edge> batch(g.edges().begin(), g.edges().begin() + 100);
  const auto neg = sample_negatives(batch, g, 5, 99);
  REQUIRE(neg.size() == batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    CHECK(neg[i].size() == 5);
    for (NodeId v : neg[i]) CHECK(v != batch[i].dst);
  }
  CHECK(sample_negatives(batch, g, 5, 99) == neg);
}

TEST_CASE("negative sampler is uniform (chi-square)") {
  // Single query over 11 candidates; expected count 2000 each.
  std::vector<Edge> es;
  for (int i = 0; i < 12; ++i) es.push_back({i, (i + 1) % 12, static_cast<double>(i), 0, -1});
  EventGraph g(12, es, 0, {});
  std::vector<Edge> batch(22000, g.edge(0));  // true dst is 1
  const auto neg = sample_negatives(batch, g, 1, 4);
  std::map<NodeId, int> counts;
  for (const auto& v : neg) counts[v[0]]++;
  CHECK(counts.count(1) == 0);
  double chi2 = 0;
  for (const auto& [n, c] : counts) chi2 += (c - 2000.0) * (c - 2000.0) / 2000.0;
  CHECK(counts.size() == 11);
  CHECK(chi2 < 29.59);  // df = 10, p = 0.001
}

TEST_CASE("bipartite negatives draw destinations only") {
  std::vector<Edge> es;
  for (int i = 0; i < 40; ++i) es.push_back({i % 5, 5 + i % 7, static_cast<double>(i), 0, -1});
  EventGraph g(12, es, 0, {});
  const auto neg = sample_negatives(g.edges(), g, 3, 1, {true});
  for (const auto& row : neg)
    for (NodeId v : row) CHECK(v >= 5);
}

TEST_CASE("dataset stats") {
  std::vector<Edge> es{{0, 1, 0, 0, -1}, {0, 1, 1, 0, -1}, {1, 2, 2, 0, -1}};
  const auto s = dataset_stats(EventGraph(3, es, 0, {}));
  CHECK(s.edges == 3);
  CHECK(s.unique_edges == 2);
  CHECK(s.repetitive_edge_pct == doctest::Approx(200.0 / 3.0));
}

TEST_CASE("windows hold the W edges before the end index") {
  Rng rng(4);
  const auto g = random_graph(rng, 20, 100);
  const auto w = extract_window(g, 60, 25);
  CHECK(w.lo() == 35);
  CHECK(w.hi() == 60);
  const auto clipped = extract_window(g, 10, 25);
  CHECK(clipped.lo() == 0);
  CHECK_THROWS_AS(extract_window(g, 101, 5), ContractError);
  std::set<NodeId> touched;
  for (std::int64_t i = 0; i < w.size(); ++i) {
    touched.insert(w.edge(i).src);
    touched.insert(w.edge(i).dst);
  }
  CHECK(std::vector<NodeId>(touched.begin(), touched.end()) == w.nodes());
}

TEST_CASE("patch incidence matches a direct scan") {
  Rng rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const auto g = random_graph(rng, 15, 120);
    const auto w = extract_window(g, 120, 90);
    const PatchSet p(w, 1 + trial % 9);
    for (NodeId n = 0; n < 15; ++n) {
      for (int m = 0; m < p.num_patches(); ++m) {
        std::vector<std::int64_t> want;
        for (auto e = p.patch_begin(m); e < p.patch_end(m); ++e)
          if (w.edge(e).src == n || w.edge(e).dst == n) want.push_back(e);
        const auto got = p.incident(n, m);
        CHECK(std::vector<std::int64_t>(got.begin(), got.end()) == want);
        CHECK(p.occurs(n, m) == !want.empty());
      }
    }
  }
}

TEST_CASE("neighborhood sampling respects fanouts and stays in the patch") {
  Rng rng(8);
  const auto g = random_graph(rng, 10, 400);
  const auto w = extract_window(g, 400, 400);
  const PatchSet p(w, 4);
  std::vector<NodeId> anchors{0, 1, 2, 3};
  for (auto mode : {SamplingMode::kUniform, SamplingMode::kLast}) {
    const auto s = sample_neighborhood(p, 2, anchors, {3, 2, 1}, mode, 17);
    for (const auto& h : s.hops)
      for (auto e : h) {
        CHECK(e >= p.patch_begin(2));
        CHECK(e < p.patch_end(2));
      }
    CHECK(s.hops[0].size() <= 3 * s.anchors.size());
    const auto again = sample_neighborhood(p, 2, anchors, {3, 2, 1}, mode, 17);
    CHECK(again.edge_set() == s.edge_set());
  }
  // Last mode keeps the most recent incident edges.
  const auto last = sample_neighborhood(p, 1, std::vector<NodeId>{5}, {2, 0, 0}, SamplingMode::kLast, 0);
  const auto inc = p.incident(5, 1);
  if (inc.size() >= 2) {
    CHECK(last.hops[0] == std::vector<std::int64_t>{inc[inc.size() - 2], inc[inc.size() - 1]});
  }
  CHECK_THROWS_AS(sample_neighborhood(p, 0, anchors, {-1, 1, 1}, SamplingMode::kUniform, 0), ConfigError);
  CHECK_THROWS_AS(sample_neighborhood(p, 4, anchors, {1, 1, 1}, SamplingMode::kUniform, 0), ContractError);
}

TEST_CASE("uniform sampling picks each incident edge equally often") {
  // Node 0 has 10 edges in one patch; fanout 3 -> each chosen with p = 0.3.
  std::vector<Edge> es;
  for (int i = 0; i < 10; ++i) es.push_back({0, 1 + i, static_cast<double>(i), 0, -1});
  EventGraph g(11, es, 0, {});
  const auto w = extract_window(g, 10, 10);
  const PatchSet p(w, 1);
  std::vector<int> counts(10, 0);
  const int trials = 5000;
  for (int t = 0; t < trials; ++t) {
    const auto s = sample_neighborhood(p, 0, std::vector<NodeId>{0}, {3, 0, 0}, SamplingMode::kUniform,
                                       static_cast<std::uint64_t>(t));
    for (auto e : s.hops[0]) counts[static_cast<std::size_t>(e)]++;
  }
  double chi2 = 0;
  for (int c : counts) chi2 += (c - 1500.0) * (c - 1500.0) / 1500.0;
  CHECK(chi2 < 27.88);  // df = 9, p = 0.001
}

TEST_CASE("synthetic periodic stream") {
  SynthOptions o;
  o.nodes = 20;
  o.edges = 2000;
  o.seed = 7;
  const auto a = format_edge_stream(synthesize(o), false);
  CHECK(a == format_edge_stream(synthesize(o), false));
  const auto s = dataset_stats(synthesize(o));
  CHECK(s.repetitive_edge_pct > 90.0);
  CHECK(s.bipartite);
}

TEST_CASE("synthetic long-range stream: receivers rotate with the gap") {
  SynthOptions o;
  o.pattern = SynthPattern::kLongRange;
  o.nodes = 24;
  o.edges = 32 * 30;
  o.gap_patches = 5;
  o.patch_edges = 32;
  const auto g = synthesize(o);
  auto receivers = [&](int b) {
    std::set<NodeId> r;
    for (int i = 0; i < 32; ++i) r.insert(g.edge(b * 32 + i).dst);
    return r;
  };
  auto active = [&](int b) {
    std::set<NodeId> r;
    for (int i = 0; i < 32; ++i) {
      r.insert(g.edge(b * 32 + i).dst);
      r.insert(g.edge(b * 32 + i).src);
    }
    return r;
  };
  for (int b = 6; b < 30; ++b) {
    CHECK(receivers(b) == receivers(b - 6));
    CHECK(active(b).size() == 24);
    for (int k = 1; k < 6; ++k) {
      std::vector<NodeId> common;
      const auto x = receivers(b), y = receivers(b - k);
      std::set_intersection(x.begin(), x.end(), y.begin(), y.end(), std::back_inserter(common));
      CHECK(common.empty());
    }
  }
  o.nodes = 8;
  CHECK_THROWS_AS(synthesize(o), ConfigError);
}
