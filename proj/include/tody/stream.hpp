#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "tody/ctdg_store.hpp"

namespace tody {

// Contiguous slice [lo, hi) of an event stream. Holds a pointer to the parent
// graph, which must outlive it.
class WindowedGraph {
 public:
  WindowedGraph(const EventGraph& parent, std::int64_t lo, std::int64_t hi);

  const EventGraph& parent() const { return *parent_; }
  std::int64_t lo() const { return lo_; }
  std::int64_t hi() const { return hi_; }
  std::int64_t size() const { return hi_ - lo_; }
  const Edge& edge(std::int64_t local) const { return parent_->edge(lo_ + local); }

  // Nodes touched by the window, ascending, and the inverse map (-1 if absent).
  const std::vector<NodeId>& nodes() const { return nodes_; }
  std::int32_t local_id(NodeId n) const { return local_[static_cast<std::size_t>(n)]; }

 private:
  const EventGraph* parent_;
  std::int64_t lo_;
  std::int64_t hi_;
  std::vector<NodeId> nodes_;
  std::vector<std::int32_t> local_;
};

// Window of the `window_size` edges preceding `end_idx` (exclusive).
WindowedGraph extract_window(const EventGraph& g, std::int64_t end_idx, std::int64_t window_size);

// Balanced contiguous partition of a window into M patches. Patch m covers
// window-local edges [bounds[m], bounds[m+1]).
class PatchSet {
 public:
  PatchSet(const WindowedGraph& window, int num_patches);

  const WindowedGraph& window() const { return *window_; }
  int num_patches() const { return num_patches_; }
  const std::vector<std::int64_t>& bounds() const { return bounds_; }
  std::int64_t patch_begin(int m) const { return bounds_[static_cast<std::size_t>(m)]; }
  std::int64_t patch_end(int m) const { return bounds_[static_cast<std::size_t>(m) + 1]; }
  int patch_of(std::int64_t local_edge) const;

  // Ascending patch indices in which node n has at least one edge.
  std::span<const int> occurrences(NodeId n) const;
  bool occurs(NodeId n, int m) const;

  // Window-local edges incident to node n inside patch m, in time order.
  std::span<const std::int64_t> incident(NodeId n, int m) const;

 private:
  const WindowedGraph* window_;
  int num_patches_;
  std::vector<std::int64_t> bounds_;
  // CSR over window-local node ids.
  std::vector<std::int64_t> occ_offsets_;
  std::vector<int> occ_patches_;
  // CSR over (local node, occurrence slot) -> incident edges.
  std::vector<std::int64_t> inc_offsets_;
  std::vector<std::int64_t> inc_edges_;
};

PatchSet patchify(const WindowedGraph& window, int num_patches);

enum class SamplingMode { kUniform, kLast };

using Fanouts = std::array<int, 3>;

// Sampled temporal neighborhood inside one patch. Edge ids are window-local.
struct SampledNeighborhood {
  int patch = 0;
  std::vector<NodeId> anchors;  // anchors occurring in the patch, ascending
  Fanouts fanouts{};
  std::array<std::vector<std::int64_t>, 3> hops;

  // Union of all hop edges, ascending and deduplicated.
  std::vector<std::int64_t> edge_set() const;
};

SampledNeighborhood sample_neighborhood(const PatchSet& patches, int patch,
                                        std::span<const NodeId> anchors, Fanouts fanouts,
                                        SamplingMode mode, std::uint64_t seed);

}  // namespace tody
