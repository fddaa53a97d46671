#include "tody/seqpack.hpp"

#include <algorithm>
#include <cmath>

#include "tody/errors.hpp"

namespace tody {

std::int64_t TokenLayout::row_of(NodeId n) const {
  const auto it = std::lower_bound(nodes.begin(), nodes.end(), n);
  return it != nodes.end() && *it == n ? it - nodes.begin() : -1;
}

std::int64_t TokenLayout::cell_of(NodeId n, int m) const {
  const std::int64_t r = row_of(n);
  if (r < 0 || m < 0 || m >= num_patches) return -1;
  return slot_cell[static_cast<std::size_t>(r * num_patches + m)];
}

TokenLayout make_layout(const PatchSet& patches, std::span<const NodeId> nodes) {
  TokenLayout l;
  l.num_patches = patches.num_patches();
  l.nodes.assign(nodes.begin(), nodes.end());
  std::sort(l.nodes.begin(), l.nodes.end());
  l.nodes.erase(std::unique(l.nodes.begin(), l.nodes.end()), l.nodes.end());
  const auto m = static_cast<std::size_t>(l.num_patches);
  l.slot_cell.assign(l.nodes.size() * m, -1);
  l.occupancy.assign(l.nodes.size() * m, 0);
  l.cell_offsets.push_back(0);
  for (std::size_t r = 0; r < l.nodes.size(); ++r) {
    for (int p : patches.occurrences(l.nodes[r])) {
      const std::size_t slot = r * m + static_cast<std::size_t>(p);
      l.slot_cell[slot] = static_cast<std::int64_t>(l.cell_node.size());
      l.occupancy[slot] = 1;
      l.cell_node.push_back(l.nodes[r]);
      l.cell_patch.push_back(p);
      l.cell_slot.push_back(static_cast<std::int64_t>(slot));
    }
    l.cell_offsets.push_back(static_cast<std::int64_t>(l.cell_node.size()));
  }
  return l;
}

PeKind parse_pe_kind(const std::string& s) {
  if (s == "none") return PeKind::kNone;
  if (s == "sinecosine" || s == "SineCosine") return PeKind::kSineCosine;
  if (s == "time2vec" || s == "Time2Vec") return PeKind::kTime2Vec;
  if (s == "identity" || s == "Identity") return PeKind::kIdentity;
  if (s == "linear" || s == "Linear") return PeKind::kLinear;
  throw ConfigError("unknown positional encoding kind '" + s + "'");
}

PeInput parse_pe_input(const std::string& s) {
  if (s == "patch_index") return PeInput::kPatchIndex;
  if (s == "edge_index") return PeInput::kEdgeIndex;
  if (s == "edge_time") return PeInput::kEdgeTime;
  throw ConfigError("unknown positional encoding input '" + s + "'");
}

std::string to_string(PeKind k) {
  switch (k) {
    case PeKind::kNone: return "none";
    case PeKind::kSineCosine: return "sinecosine";
    case PeKind::kTime2Vec: return "time2vec";
    case PeKind::kIdentity: return "identity";
    case PeKind::kLinear: return "linear";
  }
  return "?";
}

std::string to_string(PeInput i) {
  switch (i) {
    case PeInput::kPatchIndex: return "patch_index";
    case PeInput::kEdgeIndex: return "edge_index";
    case PeInput::kEdgeTime: return "edge_time";
  }
  return "?";
}

ReadoutMode parse_readout(const std::string& s) {
  if (s == "max" || s == "MAX") return ReadoutMode::kMax;
  if (s == "mean" || s == "MEAN") return ReadoutMode::kMean;
  if (s == "last" || s == "LAST") return ReadoutMode::kLast;
  throw ConfigError("unknown readout '" + s + "'");
}

std::string to_string(ReadoutMode m) {
  switch (m) {
    case ReadoutMode::kMax: return "max";
    case ReadoutMode::kMean: return "mean";
    case ReadoutMode::kLast: return "last";
  }
  return "?";
}

std::vector<double> slot_positions(const TokenLayout& layout, const PatchSet& patches, PeInput input) {
  std::vector<double> pos(layout.occupancy.size(), 0.0);
  const WindowedGraph& w = patches.window();
  const double t0 = w.size() > 0 ? w.edge(0).t : 0.0;
  for (std::size_t c = 0; c < layout.cell_node.size(); ++c) {
    const auto slot = static_cast<std::size_t>(layout.cell_slot[c]);
    const int m = layout.cell_patch[c];
    if (input == PeInput::kPatchIndex) {
      pos[slot] = m;
      continue;
    }
    // The node's latest interaction inside the patch.
    const std::int64_t last = patches.incident(layout.cell_node[c], m).back();
    pos[slot] = input == PeInput::kEdgeIndex ? static_cast<double>(last) : w.edge(last).t - t0;
  }
  return pos;
}

template <typename T>
PackedSequences<T> pack(const Tensor<T>& cells, const TokenLayout& layout, const Tensor<T>& mask_embedding,
                        std::vector<double> positions) {
  if (cells.rank() != 2 || cells.dim(0) != layout.num_cells()) {
    throw ShapeError("pack: cell tokens " + shape_str(cells.shape()) + " for " + std::to_string(layout.num_cells()) +
                     " cells");
  }
  const std::int64_t d = cells.dim(1);
  if (mask_embedding.numel() != d) {
    throw ShapeError("pack: mask embedding " + shape_str(mask_embedding.shape()) + " for token width " +
                     std::to_string(d));
  }
  // Row C of the stacked source is the MASK token.
  std::vector<std::int64_t> src(layout.slot_cell.size());
  for (std::size_t s = 0; s < src.size(); ++s) src[s] = layout.slot_cell[s] >= 0 ? layout.slot_cell[s] : layout.num_cells();
  const Tensor<T> stacked = ops::concat_rows<T>({cells, ops::reshape(mask_embedding, {1, d})});
  PackedSequences<T> out;
  out.tokens = ops::reshape(ops::gather_rows(stacked, src), {layout.num_rows(), layout.num_patches, d});
  out.layout = &layout;
  out.positions = positions.empty() ? std::vector<double>(layout.occupancy.size(), 0.0) : std::move(positions);
  return out;
}

template <typename T>
Tensor<T> unpack(const PackedSequences<T>& packed) {
  const TokenLayout& l = *packed.layout;
  if (packed.tokens.rank() != 3 || packed.tokens.dim(0) != l.num_rows() || packed.tokens.dim(1) != l.num_patches) {
    throw ShapeError("unpack: packed tokens " + shape_str(packed.tokens.shape()) + " do not match layout");
  }
  const std::int64_t d = packed.tokens.dim(2);
  return ops::gather_rows(ops::reshape(packed.tokens, {l.num_rows() * l.num_patches, d}), l.cell_slot);
}

template <typename T>
PositionalEncoderParams<T> PositionalEncoderParams<T>::make(ParamSet<T>& ps, const std::string& name, PeKind kind,
                                                            PeInput input, std::int64_t width, Rng& rng) {
  PositionalEncoderParams p;
  p.kind = kind;
  p.input = input;
  p.width = width;
  if (kind == PeKind::kSineCosine && width % 2 != 0) {
    throw ConfigError("sine-cosine positional encoding needs an even width");
  }
  if (kind == PeKind::kLinear || kind == PeKind::kTime2Vec) {
    p.w = ps.add(name + ".w", {1, width}, Init::kFanIn, rng);
    p.b = ps.add(name + ".b", {width}, Init::kZeros, rng);
  }
  return p;
}

template <typename T>
Tensor<T> positional_encoding(std::span<const double> positions, const PositionalEncoderParams<T>& params) {
  const auto s = static_cast<std::int64_t>(positions.size());
  const std::int64_t d = params.width;
  switch (params.kind) {
    case PeKind::kNone:
      return Tensor<T>::zeros({s, d});
    case PeKind::kSineCosine: {
      std::vector<T> v(static_cast<std::size_t>(s * d));
      for (std::int64_t r = 0; r < s; ++r) {
        for (std::int64_t i = 0; i < d / 2; ++i) {
          const double freq = 1.0 / std::pow(10000.0, 2.0 * static_cast<double>(i) / static_cast<double>(d));
          const double a = positions[static_cast<std::size_t>(r)] * freq;
          v[static_cast<std::size_t>(r * d + 2 * i)] = static_cast<T>(std::sin(a));
          v[static_cast<std::size_t>(r * d + 2 * i + 1)] = static_cast<T>(std::cos(a));
        }
      }
      return Tensor<T>::from({s, d}, std::move(v));
    }
    case PeKind::kIdentity: {
      std::vector<T> v(static_cast<std::size_t>(s * d));
      for (std::int64_t r = 0; r < s; ++r) {
        std::fill_n(v.begin() + r * d, d, static_cast<T>(positions[static_cast<std::size_t>(r)]));
      }
      return Tensor<T>::from({s, d}, std::move(v));
    }
    case PeKind::kLinear:
    case PeKind::kTime2Vec: {
      std::vector<T> pv(positions.begin(), positions.end());
      const Tensor<T> z = ops::add(ops::matmul(Tensor<T>::from({s, 1}, std::move(pv)), params.w), params.b);
      if (params.kind == PeKind::kLinear || d == 1) return z;
      // One linear component followed by d-1 periodic components.
      return ops::concat<T>({ops::slice_cols(z, 0, 1), ops::sin(ops::slice_cols(z, 1, d))});
    }
  }
  throw ConfigError("unknown positional encoding kind");
}

template <typename T>
PackedSequences<T> encode_positions(const PackedSequences<T>& packed, const PositionalEncoderParams<T>& params) {
  if (params.kind == PeKind::kNone) return packed;
  const TokenLayout& l = *packed.layout;
  const std::int64_t d = packed.width();
  if (params.width != d) throw ShapeError("positional encoder width does not match token width");
  const std::int64_t slots = l.num_rows() * l.num_patches;
  const Tensor<T> p = positional_encoding(packed.positions, params);
  std::vector<T> occ(l.occupancy.begin(), l.occupancy.end());
  const Tensor<T> masked = ops::mul_rows(p, Tensor<T>::from({slots}, std::move(occ)));
  PackedSequences<T> out = packed;
  out.tokens = ops::add(packed.tokens, ops::reshape(masked, {l.num_rows(), l.num_patches, d}));
  return out;
}

template <typename T>
Tensor<T> readout(const PackedSequences<T>& packed, ReadoutMode mode) {
  const TokenLayout& l = *packed.layout;
  const std::int64_t d = packed.width();
  if (mode == ReadoutMode::kLast) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(l.num_rows()), -1);
    for (std::int64_t r = 0; r < l.num_rows(); ++r) {
      if (l.cell_offsets[static_cast<std::size_t>(r) + 1] > l.cell_offsets[static_cast<std::size_t>(r)]) {
        idx[static_cast<std::size_t>(r)] = l.cell_slot[static_cast<std::size_t>(l.cell_offsets[static_cast<std::size_t>(r) + 1] - 1)];
      }
    }
    return ops::gather_rows(ops::reshape(packed.tokens, {l.num_rows() * l.num_patches, d}), idx);
  }
  const Tensor<T> cells = unpack(packed);
  if (mode == ReadoutMode::kMax) return ops::segment_max(cells, l.cell_offsets);
  std::vector<T> inv(static_cast<std::size_t>(l.num_rows()), T(0));
  for (std::size_t r = 0; r < inv.size(); ++r) {
    const std::int64_t c = l.cell_offsets[r + 1] - l.cell_offsets[r];
    if (c > 0) inv[r] = T(1) / static_cast<T>(c);
  }
  return ops::mul_rows(ops::segment_sum(cells, l.cell_offsets), Tensor<T>::from({l.num_rows()}, std::move(inv)));
}

#define TODY_INSTANTIATE_SEQPACK(T)                                                                               \
  template PackedSequences<T> pack(const Tensor<T>&, const TokenLayout&, const Tensor<T>&, std::vector<double>); \
  template Tensor<T> unpack(const PackedSequences<T>&);                                                          \
  template struct PositionalEncoderParams<T>;                                                                     \
  template Tensor<T> positional_encoding(std::span<const double>, const PositionalEncoderParams<T>&);            \
  template PackedSequences<T> encode_positions(const PackedSequences<T>&, const PositionalEncoderParams<T>&);    \
  template Tensor<T> readout(const PackedSequences<T>&, ReadoutMode);

TODY_INSTANTIATE_SEQPACK(float)
TODY_INSTANTIATE_SEQPACK(double)

}  // namespace tody
