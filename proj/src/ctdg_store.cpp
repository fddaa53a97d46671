#include "tody/ctdg_store.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

#include "tody/errors.hpp"
#include "tody/rng.hpp"

namespace tody {

EventGraph::EventGraph(std::int32_t num_nodes, std::vector<Edge> edges, int edge_dim,
                       std::vector<float> edge_feats, int node_dim,
                       std::vector<float> node_feats)
    : num_nodes_(num_nodes), edge_dim_(edge_dim), node_dim_(node_dim) {
  const std::size_t e = edges.size();
  if (edge_feats.size() != e * static_cast<std::size_t>(edge_dim)) {
    throw DataError("edge feature buffer has " + std::to_string(edge_feats.size()) +
                    " values, expected " + std::to_string(e) + " x " + std::to_string(edge_dim));
  }
  if (node_feats.empty()) {
    node_feats.assign(static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(node_dim), 0.0f);
  } else if (node_feats.size() != static_cast<std::size_t>(num_nodes) * static_cast<std::size_t>(node_dim)) {
    throw DataError("node feature buffer does not match N x node_dim");
  }
  for (const Edge& ed : edges) {
    if (ed.src < 0 || ed.src >= num_nodes || ed.dst < 0 || ed.dst >= num_nodes) {
      throw DataError("edge endpoint outside [0, " + std::to_string(num_nodes) + ")");
    }
    if (!std::isfinite(ed.t)) throw DataError("non-finite timestamp");
  }

  // Stable sort by time; ties keep input order.
  std::vector<std::size_t> order(e);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return edges[a].t < edges[b].t; });
  edges_.reserve(e);
  edge_feats_.resize(edge_feats.size());
  const auto d = static_cast<std::size_t>(edge_dim);
  for (std::size_t i = 0; i < e; ++i) {
    Edge ed = edges[order[i]];
    ed.global_idx = static_cast<std::int64_t>(i);
    edges_.push_back(ed);
    std::copy_n(edge_feats.begin() + static_cast<std::ptrdiff_t>(order[i] * d), d,
                edge_feats_.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  node_feats_ = std::move(node_feats);
  original_ids_.resize(static_cast<std::size_t>(num_nodes));
  std::iota(original_ids_.begin(), original_ids_.end(), std::int64_t{0});
}

bool EventGraph::has_labels() const {
  return std::any_of(edges_.begin(), edges_.end(), [](const Edge& e) { return e.label >= 0; });
}

int EventGraph::num_classes() const {
  int c = 0;
  for (const Edge& e : edges_) c = std::max(c, e.label + 1);
  return c;
}

EventGraph EventGraph::subgraph(const std::vector<std::int64_t>& keep) const {
  std::vector<Edge> edges;
  std::vector<float> feats;
  edges.reserve(keep.size());
  feats.reserve(keep.size() * static_cast<std::size_t>(edge_dim_));
  for (std::int64_t i : keep) {
    edges.push_back(edge(i));
    feats.insert(feats.end(), edge_feat(i), edge_feat(i) + edge_dim_);
  }
  EventGraph out(num_nodes_, std::move(edges), edge_dim_, std::move(feats), node_dim_, node_feats_);
  out.original_ids_ = original_ids_;
  return out;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? std::string_view::npos
                                                                             : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t')) f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

template <typename V>
V parse_field(std::string_view f, std::size_t line_no, const char* what) {
  V v{};
  const auto* end = f.data() + f.size();
  auto [ptr, ec] = std::from_chars(f.data(), end, v);
  if (ec != std::errc() || ptr != end || f.empty()) {
    throw DataError("line " + std::to_string(line_no) + ": cannot parse " + what + " '" +
                    std::string(f) + "'");
  }
  return v;
}

}  // namespace

EventGraph parse_edge_stream(const std::string& text, bool has_labels) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  const std::size_t fixed = has_labels ? 4 : 3;
  std::optional<std::size_t> arity;

  std::vector<std::int64_t> raw_src, raw_dst;
  std::vector<Edge> edges;
  std::vector<float> feats;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (!header_seen) {
      header_seen = true;
      continue;
    }
    const auto fields = split_fields(line);
    if (fields.size() < fixed) {
      throw DataError("line " + std::to_string(line_no) + ": expected at least " +
                      std::to_string(fixed) + " columns, got " + std::to_string(fields.size()));
    }
    const std::size_t nf = fields.size() - fixed;
    if (!arity) {
      arity = nf;
    } else if (*arity != nf) {
      throw DataError("line " + std::to_string(line_no) + ": schema error, " + std::to_string(nf) +
                      " edge features where earlier rows have " + std::to_string(*arity));
    }
    Edge e;
    raw_src.push_back(parse_field<std::int64_t>(fields[0], line_no, "src"));
    raw_dst.push_back(parse_field<std::int64_t>(fields[1], line_no, "dst"));
    e.t = parse_field<double>(fields[2], line_no, "timestamp");
    if (!std::isfinite(e.t)) throw DataError("line " + std::to_string(line_no) + ": non-finite timestamp");
    if (has_labels) e.label = static_cast<int>(parse_field<double>(fields[3], line_no, "label"));
    for (std::size_t k = fixed; k < fields.size(); ++k) {
      feats.push_back(parse_field<float>(fields[k], line_no, "edge feature"));
    }
    edges.push_back(e);
  }
  if (edges.empty()) throw DataError("empty dataset: no edge rows");

  // Compact ids in ascending order of original id.
  std::map<std::int64_t, NodeId> ids;
  for (std::size_t i = 0; i < edges.size(); ++i) {
    ids.emplace(raw_src[i], 0);
    ids.emplace(raw_dst[i], 0);
  }
  std::vector<std::int64_t> original;
  original.reserve(ids.size());
  for (auto& [raw, id] : ids) {
    id = static_cast<NodeId>(original.size());
    original.push_back(raw);
  }
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i].src = ids.at(raw_src[i]);
    edges[i].dst = ids.at(raw_dst[i]);
  }
  EventGraph g(static_cast<std::int32_t>(original.size()), std::move(edges),
               static_cast<int>(arity.value_or(0)), std::move(feats));
  g.set_original_ids(std::move(original));
  return g;
}

EventGraph load_edge_stream(const std::filesystem::path& path, bool has_labels) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_edge_stream(buf.str(), has_labels);
}

std::string format_edge_stream(const EventGraph& g, bool with_labels) {
  std::ostringstream out;
  out.precision(17);
  out << "src,dst,timestamp";
  if (with_labels) out << ",label";
  for (int k = 0; k < g.edge_dim(); ++k) out << ",f" << (k + 1);
  out << '\n';
  for (const Edge& e : g.edges()) {
    out << e.src << ',' << e.dst << ',' << e.t;
    if (with_labels) out << ',' << e.label;
    const float* f = g.edge_feat(e.global_idx);
    for (int k = 0; k < g.edge_dim(); ++k) out << ',' << f[k];
    out << '\n';
  }
  return out.str();
}

namespace {

void check_ratios(const SplitRatios& r) {
  const double s = r.train + r.val + r.test;
  if (std::abs(s - 1.0) > 1e-9 || r.train < 0 || r.val < 0 || r.test < 0) {
    throw ConfigError("split ratios must be non-negative and sum to 1 (got " + std::to_string(s) + ")");
  }
}

std::vector<std::int64_t> iota_range(std::int64_t lo, std::int64_t hi) {
  std::vector<std::int64_t> v(static_cast<std::size_t>(std::max<std::int64_t>(0, hi - lo)));
  std::iota(v.begin(), v.end(), lo);
  return v;
}

}  // namespace

SplitSpec chronological_split(const EventGraph& g, SplitRatios ratios) {
  check_ratios(ratios);
  const std::int64_t e = g.num_edges();
  if (e < 3) throw ConfigError("chronological split needs at least 3 edges");
  SplitSpec s;
  s.mode = SplitMode::kTransductive;
  // Integer arithmetic for the default 70/15/15 avoids 0.7*E rounding below the true floor.
  const auto floor_frac = [e](double r) {
    const auto scaled = static_cast<std::int64_t>(std::llround(r * 1e9));
    return static_cast<std::int64_t>((static_cast<__int128>(e) * scaled) / 1000000000);
  };
  s.train_end = floor_frac(ratios.train);
  s.val_end = s.train_end + floor_frac(ratios.val);
  s.train_edges = iota_range(0, s.train_end);
  s.val_edges = iota_range(s.train_end, s.val_end);
  s.test_edges = iota_range(s.val_end, e);
  return s;
}

SplitSpec inductive_split(const EventGraph& g, double frac, std::uint64_t seed, SplitRatios ratios) {
  if (!(frac > 0.0 && frac < 1.0)) throw ConfigError("inductive mask fraction must lie in (0, 1)");
  if (g.num_nodes() < 10) throw ConfigError("inductive split needs at least 10 nodes");
  SplitSpec s = chronological_split(g, ratios);
  s.mode = SplitMode::kInductive;
  s.seed = seed;

  const auto n = static_cast<std::size_t>(g.num_nodes());
  const auto count = static_cast<std::size_t>(std::floor(frac * static_cast<double>(n)));
  std::vector<NodeId> nodes(n);
  std::iota(nodes.begin(), nodes.end(), NodeId{0});
  Rng rng(derive_seed(seed, {0x1d5c}));
  // Partial Fisher-Yates: the first `count` entries are a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(nodes[i], nodes[pick(rng)]);
  }
  nodes.resize(count);
  std::sort(nodes.begin(), nodes.end());
  s.masked_nodes = nodes;

  std::vector<char> masked(n, 0);
  for (NodeId v : nodes) masked[static_cast<std::size_t>(v)] = 1;
  const auto touches = [&](std::int64_t i) {
    const Edge& e = g.edge(i);
    return masked[static_cast<std::size_t>(e.src)] || masked[static_cast<std::size_t>(e.dst)];
  };
  std::erase_if(s.train_edges, touches);
  std::erase_if(s.test_edges, [&](std::int64_t i) { return !touches(i); });
  return s;
}

std::vector<std::vector<NodeId>> sample_negatives(const std::vector<Edge>& batch, const EventGraph& g,
                                                  int k, std::uint64_t seed,
                                                  NegativeSamplerOptions opts) {
  if (k < 1) throw ConfigError("negative sample count must be >= 1");
  std::vector<NodeId> candidates;
  if (opts.bipartite) {
    std::vector<char> seen(static_cast<std::size_t>(g.num_nodes()), 0);
    for (const Edge& e : g.edges()) seen[static_cast<std::size_t>(e.dst)] = 1;
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
      if (seen[static_cast<std::size_t>(v)]) candidates.push_back(v);
    }
  } else {
    candidates.resize(static_cast<std::size_t>(g.num_nodes()));
    std::iota(candidates.begin(), candidates.end(), NodeId{0});
  }
  Rng rng(derive_seed(seed, {0x6e6567}));
  std::vector<std::vector<NodeId>> out;
  out.reserve(batch.size());
  for (const Edge& e : batch) {
    const bool dst_is_candidate = std::binary_search(candidates.begin(), candidates.end(), e.dst);
    const std::size_t pool = candidates.size() - (dst_is_candidate ? 1 : 0);
    if (pool < 1) throw DataError("negative sampling needs at least 2 candidate nodes");
    std::uniform_int_distribution<std::size_t> pick(0, pool - 1);
    std::vector<NodeId> negs;
    negs.reserve(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
      std::size_t r = pick(rng);
      // Skip over the true destination so every other candidate has mass 1/pool.
      if (dst_is_candidate && candidates[r] >= e.dst) ++r;
      negs.push_back(candidates[r]);
    }
    out.push_back(std::move(negs));
  }
  return out;
}

DatasetStats dataset_stats(const EventGraph& g) {
  DatasetStats s;
  s.nodes = g.num_nodes();
  s.edges = g.num_edges();
  s.edge_dim = g.edge_dim();
  s.has_labels = g.has_labels();
  std::unordered_map<std::uint64_t, std::int64_t> counts;
  std::unordered_set<NodeId> srcs, dsts;
  for (const Edge& e : g.edges()) {
    const auto a = static_cast<std::uint64_t>(std::min(e.src, e.dst));
    const auto b = static_cast<std::uint64_t>(std::max(e.src, e.dst));
    ++counts[(a << 32) | b];
    srcs.insert(e.src);
    dsts.insert(e.dst);
  }
  s.unique_edges = static_cast<std::int64_t>(counts.size());
  std::int64_t repeated = 0;
  for (const auto& [key, c] : counts) {
    if (c > 1) repeated += c;
  }
  s.repetitive_edge_pct = s.edges ? 100.0 * static_cast<double>(repeated) / static_cast<double>(s.edges) : 0.0;
  s.bipartite = std::none_of(srcs.begin(), srcs.end(), [&](NodeId v) { return dsts.count(v) > 0; });
  return s;
}

}  // namespace tody
