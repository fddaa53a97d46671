#include "tody/encoder.hpp"

#include <algorithm>

#include "tody/errors.hpp"

namespace tody {

template <typename T>
EncoderParams<T> EncoderParams<T>::make(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng) {
  if (cfg.blocks < 1) throw ConfigError("encoder needs at least one block");
  if (cfg.width < 1) throw ConfigError("hidden width must be positive");
  EncoderParams p;
  p.config = cfg;
  p.input_proj = Linear<T>::make(ps, "encoder.input", cfg.node_dim, cfg.width, rng);
  p.mask_embedding = ps.add("encoder.mask", {cfg.width}, Init::kFanIn, rng);
  // Positions only feed the global encoder.
  p.pe = PositionalEncoderParams<T>::make(ps, "encoder.pe", cfg.use_global ? cfg.pe_kind : PeKind::kNone,
                                          cfg.pe_input, cfg.width, rng);
  for (int l = 0; l < cfg.blocks; ++l) {
    const std::string pre = "encoder.block" + std::to_string(l);
    p.tokenizers.push_back(
        TokenizerParams<T>::make(ps, pre + ".tok", cfg.width, cfg.edge_dim, cfg.time_dim, cfg.mpnn_layers, rng));
    if (cfg.use_global) {
      p.transformers.push_back(TransformerParams<T>::make(ps, pre + ".attn", cfg.width, cfg.heads, cfg.attn_layers, rng));
    }
  }
  return p;
}

template <typename T>
Tensor<T> encode(const PatchSet& patches, const EncoderParams<T>& params, std::span<const NodeId> anchors,
                 std::uint64_t seed, EncodeTrace<T>* trace) {
  const EncoderConfig& cfg = params.config;
  const WindowedGraph& window = patches.window();
  const EventGraph& g = window.parent();
  if (g.edge_dim() != cfg.edge_dim || g.node_dim() != cfg.node_dim) {
    throw ConfigError("encoder built for edge/node feature widths " + std::to_string(cfg.edge_dim) + "/" +
                      std::to_string(cfg.node_dim) + " but graph has " + std::to_string(g.edge_dim()) + "/" +
                      std::to_string(g.node_dim()));
  }
  const std::span<const NodeId> roots = anchors.empty() ? std::span<const NodeId>(window.nodes()) : anchors;

  std::vector<SampledNeighborhood> neigh;
  neigh.reserve(static_cast<std::size_t>(patches.num_patches()));
  std::vector<NodeId> active;
  for (NodeId a : roots) {
    if (a >= 0 && a < g.num_nodes() && window.local_id(a) >= 0) active.push_back(a);
  }
  for (int m = 0; m < patches.num_patches(); ++m) {
    neigh.push_back(sample_neighborhood(patches, m, roots, cfg.fanouts, cfg.sampling, seed));
    for (const auto& hop : neigh.back().hops) {
      for (std::int64_t e : hop) {
        active.push_back(window.edge(e).src);
        active.push_back(window.edge(e).dst);
      }
    }
  }
  EncodeTrace<T> local_trace;
  EncodeTrace<T>& tr = trace ? *trace : local_trace;
  tr.layout = make_layout(patches, active);
  const TokenLayout& layout = tr.layout;
  tr.active_nodes = layout.nodes;

  const MessageGraph<T> graph = build_message_graph<T>(patches, layout, neigh, cfg.time_dim);
  const std::vector<double> positions = cfg.pe_kind == PeKind::kNone || !cfg.use_global
                                            ? std::vector<double>(layout.occupancy.size(), 0.0)
                                            : slot_positions(layout, patches, cfg.pe_input);

  // Block-0 input: projected node features, one copy per occupied cell.
  const auto dv = static_cast<std::size_t>(cfg.node_dim);
  std::vector<T> feats(layout.nodes.size() * dv);
  for (std::size_t r = 0; r < layout.nodes.size(); ++r) {
    const float* f = g.node_feat(layout.nodes[r]);
    for (std::size_t k = 0; k < dv; ++k) feats[r * dv + k] = static_cast<T>(f[k]);
  }
  const Tensor<T> projected =
      params.input_proj(Tensor<T>::from({layout.num_rows(), cfg.node_dim}, std::move(feats)));
  std::vector<std::int64_t> cell_row(static_cast<std::size_t>(layout.num_cells()));
  for (std::int64_t r = 0; r < layout.num_rows(); ++r) {
    for (std::int64_t c = layout.cell_offsets[static_cast<std::size_t>(r)];
         c < layout.cell_offsets[static_cast<std::size_t>(r) + 1]; ++c) {
      cell_row[static_cast<std::size_t>(c)] = r;
    }
  }
  Tensor<T> states = ops::gather_rows(projected, cell_row);

  Tensor<T> pooled;
  for (int l = 0; l < cfg.blocks; ++l) {
    const Tensor<T> tokens = tokenize(graph, states, params.tokenizers[static_cast<std::size_t>(l)]);
    if (l == 0) tr.block0_tokens = tokens;
    PackedSequences<T> packed = pack(tokens, layout, params.mask_embedding, positions);
    if (cfg.use_global) {
      packed = encode_positions(packed, params.pe);
      packed = attend(packed, params.transformers[static_cast<std::size_t>(l)]);
    }
    if (l + 1 < cfg.blocks) {
      states = unpack(packed);
    } else {
      pooled = readout(packed, cfg.readout);
    }
  }
  tr.pooled = pooled;
  std::vector<std::int64_t> node_ids(layout.nodes.begin(), layout.nodes.end());
  return ops::scatter_rows(pooled, node_ids, g.num_nodes());
}

template struct EncoderParams<float>;
template struct EncoderParams<double>;
template Tensor<float> encode(const PatchSet&, const EncoderParams<float>&, std::span<const NodeId>, std::uint64_t,
                              EncodeTrace<float>*);
template Tensor<double> encode(const PatchSet&, const EncoderParams<double>&, std::span<const NodeId>, std::uint64_t,
                               EncodeTrace<double>*);

}  // namespace tody
