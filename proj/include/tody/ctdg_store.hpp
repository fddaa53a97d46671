#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tody {

using NodeId = std::int32_t;

struct Edge {
  NodeId src = 0;
  NodeId dst = 0;
  double t = 0.0;
  std::int64_t global_idx = 0;
  int label = -1;  // per-interaction label for node classification, -1 if absent
};

// Continuous-time dynamic graph: an undirected, time-ordered multigraph edge
// stream. Immutable after construction.
class EventGraph {
 public:
  EventGraph() = default;

  // Sorts (stably) by timestamp, reassigns global_idx, and validates feature
  // arity. `edge_feats` is row-major E x edge_dim, `node_feats` N x node_dim.
  EventGraph(std::int32_t num_nodes, std::vector<Edge> edges, int edge_dim,
             std::vector<float> edge_feats, int node_dim = 0,
             std::vector<float> node_feats = {});

  std::int32_t num_nodes() const { return num_nodes_; }
  std::int64_t num_edges() const { return static_cast<std::int64_t>(edges_.size()); }
  int edge_dim() const { return edge_dim_; }
  int node_dim() const { return node_dim_; }

  const std::vector<Edge>& edges() const { return edges_; }
  const Edge& edge(std::int64_t i) const { return edges_[static_cast<std::size_t>(i)]; }
  const float* edge_feat(std::int64_t i) const {
    return edge_feats_.data() + static_cast<std::size_t>(i) * static_cast<std::size_t>(edge_dim_);
  }
  const float* node_feat(NodeId n) const {
    return node_feats_.data() + static_cast<std::size_t>(n) * static_cast<std::size_t>(node_dim_);
  }
  const std::vector<float>& edge_feats() const { return edge_feats_; }

  bool has_labels() const;
  int num_classes() const;

  // Original (file) id of each compacted node; identity when built in memory.
  const std::vector<std::int64_t>& original_ids() const { return original_ids_; }
  void set_original_ids(std::vector<std::int64_t> ids) { original_ids_ = std::move(ids); }

  // Sub-stream of the edges whose position is listed in `keep` (ascending).
  // Node ids are preserved; global_idx is reassigned within the sub-stream.
  EventGraph subgraph(const std::vector<std::int64_t>& keep) const;

 private:
  std::int32_t num_nodes_ = 0;
  int edge_dim_ = 0;
  int node_dim_ = 0;
  std::vector<Edge> edges_;
  std::vector<float> edge_feats_;
  std::vector<float> node_feats_;
  std::vector<std::int64_t> original_ids_;
};

// CSV: header row, then `src,dst,timestamp[,label][,f1..fD]`. The label column
// is present when `has_labels` is true (-1 marks an unlabeled interaction).
EventGraph load_edge_stream(const std::filesystem::path& path, bool has_labels);
EventGraph parse_edge_stream(const std::string& text, bool has_labels);

// Canonical CSV form of a graph (compacted ids, sorted order).
std::string format_edge_stream(const EventGraph& g, bool with_labels);

enum class SplitMode { kTransductive, kInductive };

struct SplitSpec {
  SplitMode mode = SplitMode::kTransductive;
  std::int64_t train_end = 0;  // edges [0, train_end) are training edges
  std::int64_t val_end = 0;    // [train_end, val_end) validation, rest test
  std::vector<NodeId> masked_nodes;  // sorted; inductive only
  std::uint64_t seed = 0;

  // Edge positions of each split after inductive filtering.
  std::vector<std::int64_t> train_edges;
  std::vector<std::int64_t> val_edges;
  std::vector<std::int64_t> test_edges;
};

struct SplitRatios {
  double train = 0.70;
  double val = 0.15;
  double test = 0.15;
};

SplitSpec chronological_split(const EventGraph& g, SplitRatios ratios = {});

// Masks floor(frac * N) nodes: training edges touching them are dropped and
// test edges touching none of them are dropped.
SplitSpec inductive_split(const EventGraph& g, double frac, std::uint64_t seed,
                          SplitRatios ratios = {});

struct NegativeSamplerOptions {
  // Restrict candidates to nodes observed as destinations anywhere in the
  // stream (bipartite-aware mode).
  bool bipartite = false;
};

// For each positive edge, k destinations drawn uniformly from the candidate
// set excluding the true destination.
std::vector<std::vector<NodeId>> sample_negatives(const std::vector<Edge>& batch,
                                                  const EventGraph& g, int k,
                                                  std::uint64_t seed,
                                                  NegativeSamplerOptions opts = {});

struct DatasetStats {
  std::int64_t nodes = 0;
  std::int64_t edges = 0;
  std::int64_t unique_edges = 0;
  double repetitive_edge_pct = 0.0;  // % of edges whose (src,dst) pair occurs more than once
  int edge_dim = 0;
  bool has_labels = false;
  bool bipartite = false;
};

DatasetStats dataset_stats(const EventGraph& g);

}  // namespace tody
