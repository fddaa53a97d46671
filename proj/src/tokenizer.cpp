#include "tody/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <tuple>

#include "tody/errors.hpp"

namespace tody {

std::vector<double> encode_time(double dt, int dim) {
  if (dim < 0 || dim % 2 != 0) throw ConfigError("time encoding dimension must be even, got " + std::to_string(dim));
  std::vector<double> out(static_cast<std::size_t>(dim));
  for (int i = 0; i < dim / 2; ++i) {
    const double w = 1.0 / std::pow(10000.0, 2.0 * i / dim);
    out[static_cast<std::size_t>(2 * i)] = std::sin(w * dt);
    out[static_cast<std::size_t>(2 * i + 1)] = std::cos(w * dt);
  }
  return out;
}

template <typename T>
TokenizerParams<T> TokenizerParams<T>::make(ParamSet<T>& ps, const std::string& name, std::int64_t width,
                                            int edge_dim, int time_dim, int num_layers, Rng& rng) {
  if (time_dim % 2 != 0) throw ConfigError("time encoding dimension must be even");
  TokenizerParams p;
  p.width = width;
  p.edge_dim = edge_dim;
  p.time_dim = time_dim;
  const std::int64_t dm = p.message_width();
  for (int l = 0; l < num_layers; ++l) {
    const std::string pre = name + ".layer" + std::to_string(l);
    MpnnLayerParams<T> lp;
    lp.wq = ps.add(pre + ".wq", {width, width}, Init::kFanIn, rng);
    lp.wk = ps.add(pre + ".wk", {dm, width}, Init::kFanIn, rng);
    lp.bk = ps.add(pre + ".bk", {width}, Init::kZeros, rng);
    lp.wv = ps.add(pre + ".wv", {dm, width}, Init::kFanIn, rng);
    lp.bv = ps.add(pre + ".bv", {width}, Init::kZeros, rng);
    lp.wo = ps.add(pre + ".wo", {width, width}, Init::kFanIn, rng);
    lp.ln_gain = ps.add(pre + ".ln.gain", {width}, Init::kOnes, rng);
    lp.ln_bias = ps.add(pre + ".ln.bias", {width}, Init::kZeros, rng);
    p.layers.push_back(lp);
  }
  return p;
}

template <typename T>
MessageGraph<T> build_message_graph(const PatchSet& patches, const TokenLayout& layout,
                                    std::span<const SampledNeighborhood> neighborhoods, int time_dim) {
  const WindowedGraph& w = patches.window();
  const EventGraph& g = w.parent();
  const int de = g.edge_dim();

  // (dst cell, window edge, direction, src cell)
  std::vector<std::tuple<std::int64_t, std::int64_t, int, std::int64_t>> msgs;
  for (const SampledNeighborhood& nb : neighborhoods) {
    const int m = nb.patch;
    for (std::int64_t e : nb.edge_set()) {
      const Edge& ed = w.edge(e);
      const std::int64_t cs = layout.cell_of(ed.src, m);
      const std::int64_t cd = layout.cell_of(ed.dst, m);
      if (cs < 0 || cd < 0) throw ContractError("sampled edge endpoint has no token cell");
      msgs.emplace_back(cd, e, 1, cs);
      if (cs != cd) msgs.emplace_back(cs, e, 0, cd);
    }
  }
  std::sort(msgs.begin(), msgs.end());

  MessageGraph<T> mg;
  mg.num_cells = layout.num_cells();
  const std::int64_t width = de + time_dim + 1;
  std::vector<T> inputs(msgs.size() * static_cast<std::size_t>(width));
  mg.dst_offsets.assign(static_cast<std::size_t>(mg.num_cells) + 1, 0);
  for (std::size_t i = 0; i < msgs.size(); ++i) {
    const auto& [cd, e, dir, cs] = msgs[i];
    mg.src.push_back(cs);
    mg.dst.push_back(cd);
    ++mg.dst_offsets[static_cast<std::size_t>(cd) + 1];
    const int m = layout.cell_patch[static_cast<std::size_t>(cd)];
    const double t_ref = w.edge(patches.patch_end(m) - 1).t;
    T* row = inputs.data() + i * static_cast<std::size_t>(width);
    const float* f = g.edge_feat(w.lo() + e);
    for (int k = 0; k < de; ++k) row[k] = static_cast<T>(f[k]);
    const std::vector<double> te = encode_time(t_ref - w.edge(e).t, time_dim);
    for (int k = 0; k < time_dim; ++k) row[de + k] = static_cast<T>(te[static_cast<std::size_t>(k)]);
    row[de + time_dim] = static_cast<T>(dir);
  }
  for (std::size_t c = 0; c < static_cast<std::size_t>(mg.num_cells); ++c) mg.dst_offsets[c + 1] += mg.dst_offsets[c];
  mg.edge_inputs = Tensor<T>::from({static_cast<std::int64_t>(msgs.size()), width}, std::move(inputs));
  return mg;
}

namespace {

// Destination cells per slice of one layer; keeps the per-slice temporaries
// cache-sized on large windows. Each cell's arithmetic is the same either way.
constexpr std::int64_t kCellChunk = 1024;

// One layer for destination cells [c0, c1), reading sources from the full `s`.
template <typename T>
Tensor<T> mpnn_layer(const MessageGraph<T>& graph, const Tensor<T>& s, const MpnnLayerParams<T>& lp, T inv_sqrt_d,
                     std::int64_t c0, std::int64_t c1) {
  const bool whole = c0 == 0 && c1 == graph.num_cells;
  std::vector<std::int64_t> rows;
  if (!whole) {
    rows.resize(static_cast<std::size_t>(c1 - c0));
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i] = c0 + static_cast<std::int64_t>(i);
  }
  const Tensor<T> own = whole ? s : ops::gather_rows(s, rows);
  const auto m0 = graph.dst_offsets[static_cast<std::size_t>(c0)];
  const auto m1 = graph.dst_offsets[static_cast<std::size_t>(c1)];
  if (m0 == m1) return ops::layer_norm(own, lp.ln_gain, lp.ln_bias);

  std::span<const std::int64_t> src(graph.src);
  src = src.subspan(static_cast<std::size_t>(m0), static_cast<std::size_t>(m1 - m0));
  std::vector<std::int64_t> dst(static_cast<std::size_t>(m1 - m0));
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = graph.dst[static_cast<std::size_t>(m0) + i] - c0;
  std::vector<std::int64_t> offsets(static_cast<std::size_t>(c1 - c0) + 1);
  for (std::size_t i = 0; i < offsets.size(); ++i) offsets[i] = graph.dst_offsets[static_cast<std::size_t>(c0) + i] - m0;
  Tensor<T> inputs = graph.edge_inputs;
  if (!whole) {
    const std::int64_t w = graph.edge_inputs.dim(1);
    const auto all = graph.edge_inputs.data();
    inputs = Tensor<T>::from({m1 - m0, w}, std::vector<T>(all.begin() + m0 * w, all.begin() + m1 * w));
  }

  const Tensor<T> q = ops::matmul(own, lp.wq);
  const Tensor<T> msg = ops::concat<T>({ops::gather_rows(s, src), inputs});
  const Tensor<T> k = ops::add(ops::matmul(msg, lp.wk), lp.bk);
  const Tensor<T> v = ops::add(ops::matmul(msg, lp.wv), lp.bv);
  const Tensor<T> score = ops::scale(ops::reduce_sum(ops::mul(ops::gather_rows(q, dst), k)), inv_sqrt_d);
  const Tensor<T> alpha = ops::segment_softmax(score, offsets);
  const Tensor<T> agg = ops::segment_sum(ops::mul_rows(v, alpha), offsets);
  const Tensor<T> update = ops::matmul(ops::relu(agg), lp.wo);
  return ops::layer_norm(ops::add(own, update), lp.ln_gain, lp.ln_bias);
}

}  // namespace

template <typename T>
Tensor<T> tokenize(const MessageGraph<T>& graph, const Tensor<T>& states, const TokenizerParams<T>& params) {
  if (states.rank() != 2 || states.dim(0) != graph.num_cells || states.dim(1) != params.width) {
    throw ShapeError("tokenize: states " + shape_str(states.shape()) + " for " + std::to_string(graph.num_cells) +
                     " cells of width " + std::to_string(params.width));
  }
  if (graph.edge_inputs.dim(1) != params.edge_dim + params.time_dim + 1) {
    throw ShapeError("tokenize: message inputs do not match tokenizer edge/time widths");
  }
  const T inv_sqrt_d = T(1) / std::sqrt(static_cast<T>(params.width));
  const std::int64_t c = graph.num_cells;
  Tensor<T> s = states;
  for (const MpnnLayerParams<T>& lp : params.layers) {
    if (c <= kCellChunk) {
      s = mpnn_layer(graph, s, lp, inv_sqrt_d, 0, c);
      continue;
    }
    std::vector<Tensor<T>> parts;
    for (std::int64_t c0 = 0; c0 < c; c0 += kCellChunk) {
      parts.push_back(mpnn_layer(graph, s, lp, inv_sqrt_d, c0, std::min(c, c0 + kCellChunk)));
    }
    s = ops::concat_rows(parts);
  }
  return s;
}

template <typename T>
std::map<NodeId, std::vector<T>> tokenize_patch(const PatchSet& patches, const SampledNeighborhood& neigh,
                                                const std::map<NodeId, std::vector<T>>& states_in,
                                                const TokenizerParams<T>& params) {
  const int m = neigh.patch;
  std::vector<NodeId> nodes;
  for (std::int64_t e = patches.patch_begin(m); e < patches.patch_end(m); ++e) {
    nodes.push_back(patches.window().edge(e).src);
    nodes.push_back(patches.window().edge(e).dst);
  }
  const TokenLayout layout = make_layout(patches, nodes);
  // Cells outside patch m carry zeros; no message reaches or leaves them.
  std::vector<T> st(static_cast<std::size_t>(layout.num_cells() * params.width), T(0));
  for (std::int64_t c = 0; c < layout.num_cells(); ++c) {
    if (layout.cell_patch[static_cast<std::size_t>(c)] != m) continue;
    const NodeId n = layout.cell_node[static_cast<std::size_t>(c)];
    const auto it = states_in.find(n);
    if (it == states_in.end()) throw ContractError("tokenize: no input state for node " + std::to_string(n));
    if (static_cast<std::int64_t>(it->second.size()) != params.width) {
      throw ShapeError("tokenize: state width mismatch for node " + std::to_string(n));
    }
    std::copy(it->second.begin(), it->second.end(), st.begin() + c * params.width);
  }
  const MessageGraph<T> mg = build_message_graph<T>(patches, layout, std::span(&neigh, 1), params.time_dim);
  const Tensor<T> out = tokenize(mg, Tensor<T>::from({layout.num_cells(), params.width}, std::move(st)), params);
  std::map<NodeId, std::vector<T>> result;
  for (std::int64_t c = 0; c < layout.num_cells(); ++c) {
    if (layout.cell_patch[static_cast<std::size_t>(c)] != m) continue;
    const auto row = out.data().subspan(static_cast<std::size_t>(c * params.width), static_cast<std::size_t>(params.width));
    result[layout.cell_node[static_cast<std::size_t>(c)]] = std::vector<T>(row.begin(), row.end());
  }
  return result;
}

#define TODY_INSTANTIATE_TOKENIZER(T)                                                                            \
  template struct TokenizerParams<T>;                                                                            \
  template MessageGraph<T> build_message_graph<T>(const PatchSet&, const TokenLayout&,                           \
                                                  std::span<const SampledNeighborhood>, int);                    \
  template Tensor<T> tokenize(const MessageGraph<T>&, const Tensor<T>&, const TokenizerParams<T>&);              \
  template std::map<NodeId, std::vector<T>> tokenize_patch(const PatchSet&, const SampledNeighborhood&,          \
                                                           const std::map<NodeId, std::vector<T>>&,              \
                                                           const TokenizerParams<T>&);

TODY_INSTANTIATE_TOKENIZER(float)
TODY_INSTANTIATE_TOKENIZER(double)

}  // namespace tody
