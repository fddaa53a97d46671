#include "tody/stream.hpp"

#include <algorithm>
#include <numeric>
#include <random>
#include <string>

#include "tody/errors.hpp"
#include "tody/rng.hpp"

namespace tody {

WindowedGraph::WindowedGraph(const EventGraph& parent, std::int64_t lo, std::int64_t hi)
    : parent_(&parent), lo_(lo), hi_(hi) {
  if (lo < 0 || hi < lo || hi > parent.num_edges()) {
    throw ContractError("window [" + std::to_string(lo) + ", " + std::to_string(hi) +
                        ") outside stream of " + std::to_string(parent.num_edges()) + " edges");
  }
  local_.assign(static_cast<std::size_t>(parent.num_nodes()), -1);
  for (std::int64_t i = lo; i < hi; ++i) {
    const Edge& e = parent.edge(i);
    local_[static_cast<std::size_t>(e.src)] = 0;
    local_[static_cast<std::size_t>(e.dst)] = 0;
  }
  for (NodeId n = 0; n < parent.num_nodes(); ++n) {
    if (local_[static_cast<std::size_t>(n)] == 0) {
      local_[static_cast<std::size_t>(n)] = static_cast<std::int32_t>(nodes_.size());
      nodes_.push_back(n);
    }
  }
}

WindowedGraph extract_window(const EventGraph& g, std::int64_t end_idx, std::int64_t window_size) {
  if (end_idx <= 0 || end_idx > g.num_edges()) {
    throw ContractError("window end " + std::to_string(end_idx) + " outside (0, " +
                        std::to_string(g.num_edges()) + "]");
  }
  if (window_size < 1) throw ConfigError("window size must be >= 1");
  return WindowedGraph(g, std::max<std::int64_t>(0, end_idx - window_size), end_idx);
}

PatchSet::PatchSet(const WindowedGraph& window, int num_patches)
    : window_(&window), num_patches_(num_patches) {
  const std::int64_t e = window.size();
  if (num_patches < 1) throw ConfigError("number of patches must be >= 1");
  if (num_patches > e) {
    throw ConfigError("number of patches (" + std::to_string(num_patches) + ") exceeds window edge count (" +
                      std::to_string(e) + ")");
  }
  // The first (E mod M) patches take one extra edge.
  const std::int64_t base = e / num_patches;
  const std::int64_t extra = e % num_patches;
  bounds_.resize(static_cast<std::size_t>(num_patches) + 1);
  bounds_[0] = 0;
  for (int m = 0; m < num_patches; ++m) {
    bounds_[static_cast<std::size_t>(m) + 1] = bounds_[static_cast<std::size_t>(m)] + base + (m < extra ? 1 : 0);
  }

  // Occurrence index: for each local node, the ascending patches it touches,
  // and per occurrence the incident edges in time order.
  const std::size_t n = window.nodes().size();
  std::vector<std::vector<std::pair<int, std::int64_t>>> per_node(n);
  for (int m = 0; m < num_patches; ++m) {
    for (std::int64_t i = patch_begin(m); i < patch_end(m); ++i) {
      const Edge& ed = window.edge(i);
      per_node[static_cast<std::size_t>(window.local_id(ed.src))].emplace_back(m, i);
      if (ed.dst != ed.src) per_node[static_cast<std::size_t>(window.local_id(ed.dst))].emplace_back(m, i);
    }
  }
  occ_offsets_.assign(n + 1, 0);
  inc_offsets_.push_back(0);
  for (std::size_t v = 0; v < n; ++v) {
    int last = -1;
    for (const auto& [m, i] : per_node[v]) {
      if (m != last) {
        if (last >= 0) inc_offsets_.push_back(static_cast<std::int64_t>(inc_edges_.size()));
        occ_patches_.push_back(m);
        last = m;
      }
      inc_edges_.push_back(i);
    }
    if (last >= 0) inc_offsets_.push_back(static_cast<std::int64_t>(inc_edges_.size()));
    occ_offsets_[v + 1] = static_cast<std::int64_t>(occ_patches_.size());
  }
}

int PatchSet::patch_of(std::int64_t local_edge) const {
  const auto it = std::upper_bound(bounds_.begin(), bounds_.end(), local_edge);
  return static_cast<int>(it - bounds_.begin()) - 1;
}

std::span<const int> PatchSet::occurrences(NodeId n) const {
  const std::int32_t v = window_->local_id(n);
  if (v < 0) return {};
  const auto b = static_cast<std::size_t>(occ_offsets_[static_cast<std::size_t>(v)]);
  const auto e = static_cast<std::size_t>(occ_offsets_[static_cast<std::size_t>(v) + 1]);
  return std::span<const int>(occ_patches_).subspan(b, e - b);
}

bool PatchSet::occurs(NodeId n, int m) const {
  const auto occ = occurrences(n);
  return std::binary_search(occ.begin(), occ.end(), m);
}

std::span<const std::int64_t> PatchSet::incident(NodeId n, int m) const {
  const std::int32_t v = window_->local_id(n);
  if (v < 0) return {};
  const auto b = occ_offsets_[static_cast<std::size_t>(v)];
  const auto occ = occurrences(n);
  const auto it = std::lower_bound(occ.begin(), occ.end(), m);
  if (it == occ.end() || *it != m) return {};
  const auto slot = static_cast<std::size_t>(b + (it - occ.begin()));
  const auto lo = static_cast<std::size_t>(inc_offsets_[slot]);
  const auto hi = static_cast<std::size_t>(inc_offsets_[slot + 1]);
  return std::span<const std::int64_t>(inc_edges_).subspan(lo, hi - lo);
}

PatchSet patchify(const WindowedGraph& window, int num_patches) { return PatchSet(window, num_patches); }

std::vector<std::int64_t> SampledNeighborhood::edge_set() const {
  std::vector<std::int64_t> all;
  for (const auto& h : hops) all.insert(all.end(), h.begin(), h.end());
  std::sort(all.begin(), all.end());
  all.erase(std::unique(all.begin(), all.end()), all.end());
  return all;
}

SampledNeighborhood sample_neighborhood(const PatchSet& patches, int patch, std::span<const NodeId> anchors,
                                        Fanouts fanouts, SamplingMode mode, std::uint64_t seed) {
  if (patch < 0 || patch >= patches.num_patches()) throw ContractError("patch index out of range");
  for (int f : fanouts) {
    if (f < 0) throw ConfigError("fanouts must be non-negative");
  }
  const WindowedGraph& w = patches.window();
  SampledNeighborhood out;
  out.patch = patch;
  out.fanouts = fanouts;
  for (NodeId a : anchors) {
    if (a >= 0 && a < w.parent().num_nodes() && patches.occurs(a, patch)) out.anchors.push_back(a);
  }
  std::sort(out.anchors.begin(), out.anchors.end());
  out.anchors.erase(std::unique(out.anchors.begin(), out.anchors.end()), out.anchors.end());

  std::vector<NodeId> frontier = out.anchors;
  std::vector<NodeId> expanded = frontier;  // sorted
  std::vector<std::int64_t> pool;
  for (std::size_t h = 0; h < 3; ++h) {
    const int fan = fanouts[h];
    std::vector<NodeId> next;
    for (NodeId v : frontier) {
      const auto inc = patches.incident(v, patch);
      if (inc.empty() || fan == 0) continue;
      std::span<const std::int64_t> chosen;
      if (static_cast<std::size_t>(fan) >= inc.size()) {
        chosen = inc;
      } else if (mode == SamplingMode::kLast) {
        chosen = inc.subspan(inc.size() - static_cast<std::size_t>(fan));
      } else {
        pool.assign(inc.begin(), inc.end());
        SplitMix64 rng(derive_seed(seed, {static_cast<std::uint64_t>(patch), h, static_cast<std::uint64_t>(v)}));
        for (std::size_t i = 0; i < static_cast<std::size_t>(fan); ++i) {
          std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
          std::swap(pool[i], pool[pick(rng)]);
        }
        pool.resize(static_cast<std::size_t>(fan));
        std::sort(pool.begin(), pool.end());
        chosen = pool;
      }
      for (std::int64_t e : chosen) {
        out.hops[h].push_back(e);
        const Edge& ed = w.edge(e);
        next.push_back(ed.src == v ? ed.dst : ed.src);
      }
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    std::vector<NodeId> fresh;
    std::set_difference(next.begin(), next.end(), expanded.begin(), expanded.end(), std::back_inserter(fresh));
    std::vector<NodeId> merged;
    std::merge(expanded.begin(), expanded.end(), fresh.begin(), fresh.end(), std::back_inserter(merged));
    expanded.swap(merged);
    frontier.swap(fresh);
  }
  return out;
}

}  // namespace tody
