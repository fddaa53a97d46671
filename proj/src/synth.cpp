#include "tody/synth.hpp"

#include <algorithm>
#include <numeric>
#include <random>

#include "tody/errors.hpp"
#include "tody/rng.hpp"

namespace tody {

SynthPattern parse_synth_pattern(const std::string& s) {
  if (s == "periodic") return SynthPattern::kPeriodic;
  if (s == "longrange") return SynthPattern::kLongRange;
  throw ConfigError("unknown synthetic pattern '" + s + "' (expected periodic or longrange)");
}

namespace {

EventGraph periodic(const SynthOptions& o) {
  if (o.nodes < 4) throw ConfigError("periodic pattern needs at least 4 nodes");
  if (o.noise < 0 || o.noise > 1) throw ConfigError("noise must lie in [0, 1]");
  const int s = o.nodes / 2;
  Rng rng(o.seed);
  std::vector<NodeId> partner(static_cast<std::size_t>(s));
  std::iota(partner.begin(), partner.end(), s);
  std::shuffle(partner.begin(), partner.end(), rng);
  std::vector<NodeId> order(static_cast<std::size_t>(s));
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  std::uniform_real_distribution<double> coin(0.0, 1.0);
  std::uniform_int_distribution<NodeId> right(s, o.nodes - 1);
  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(o.edges));
  for (std::int64_t i = 0; i < o.edges; ++i) {
    const NodeId u = order[static_cast<std::size_t>(i % s)];
    NodeId v = partner[static_cast<std::size_t>(u)];
    if (coin(rng) < o.noise) v = right(rng);
    edges.push_back({u, v, static_cast<double>(i), i, -1});
  }
  return EventGraph(o.nodes, std::move(edges), 0, {});
}

EventGraph longrange(const SynthOptions& o) {
  if (o.gap_patches < 1) throw ConfigError("gap_patches must be at least 1");
  const int cycle = o.gap_patches + 1;
  if (o.nodes < 2 * cycle) {
    throw ConfigError("long-range pattern needs at least " + std::to_string(2 * cycle) + " nodes for gap " +
                      std::to_string(o.gap_patches));
  }
  Rng rng(o.seed);
  std::vector<NodeId> perm(static_cast<std::size_t>(o.nodes));
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  std::vector<std::vector<NodeId>> phase(static_cast<std::size_t>(cycle));
  for (std::size_t i = 0; i < perm.size(); ++i) phase[i % static_cast<std::size_t>(cycle)].push_back(perm[i]);
  const std::size_t max_senders = perm.size() - phase.back().size();
  if (static_cast<std::size_t>(o.patch_edges) < max_senders) {
    throw ConfigError("patch_edges must be at least " + std::to_string(max_senders));
  }

  std::vector<Edge> edges;
  edges.reserve(static_cast<std::size_t>(o.edges));
  std::vector<NodeId> senders, src, dst;
  for (std::int64_t b = 0; static_cast<std::int64_t>(edges.size()) < o.edges; ++b) {
    const auto& due = phase[static_cast<std::size_t>(b % cycle)];
    senders.clear();
    for (int p = 0; p < cycle; ++p) {
      if (p == b % cycle) continue;
      senders.insert(senders.end(), phase[static_cast<std::size_t>(p)].begin(), phase[static_cast<std::size_t>(p)].end());
    }
    // every sender at least once, every due node equally often
    src.clear();
    dst.clear();
    for (int i = 0; i < o.patch_edges; ++i) {
      src.push_back(senders[static_cast<std::size_t>(i) % senders.size()]);
      dst.push_back(due[static_cast<std::size_t>(i) % due.size()]);
    }
    std::shuffle(src.begin(), src.end(), rng);
    std::shuffle(dst.begin(), dst.end(), rng);
    for (std::size_t i = 0; i < src.size() && static_cast<std::int64_t>(edges.size()) < o.edges; ++i) {
      const auto k = static_cast<std::int64_t>(edges.size());
      edges.push_back({src[i], dst[i], static_cast<double>(k), k, -1});
    }
  }
  return EventGraph(o.nodes, std::move(edges), 0, {});
}

}  // namespace

EventGraph synthesize(const SynthOptions& opts) {
  if (opts.edges < 1) throw ConfigError("edge count must be positive");
  return opts.pattern == SynthPattern::kPeriodic ? periodic(opts) : longrange(opts);
}

}  // namespace tody
