#pragma once

// Structure-aware tokenizer: a per-patch attentive message-passing network
// that turns node states into one token per (node, patch) cell.
//
// Each layer, for every cell v with incoming sampled messages e = (u -> v):
//   q_v  = s_v Wq
//   m_e  = [s_u | edge features | time encoding(t_ref - t_e) | sender-is-source]
//   k_e  = m_e Wk + bk,  val_e = m_e Wv + bv
//   a_e  = softmax over v's messages of (q_v . k_e) / sqrt(D)
//   s_v' = LayerNorm(s_v + relu(sum_e a_e val_e) Wo)
// where t_ref is the latest timestamp in the patch. Cells without messages
// only take the residual/normalization path.

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "tody/params.hpp"
#include "tody/seqpack.hpp"
#include "tody/stream.hpp"
#include "tody/tensor.hpp"

namespace tody {

// [sin(w_1 dt), cos(w_1 dt), ..., sin(w_{d/2} dt), cos(w_{d/2} dt)] with
// w_i = 1 / 10000^(2(i-1)/d).
std::vector<double> encode_time(double dt, int dim);

template <typename T>
struct MpnnLayerParams {
  Tensor<T> wq;  // [D, D]
  Tensor<T> wk;  // [Dm, D]
  Tensor<T> bk;
  Tensor<T> wv;  // [Dm, D]
  Tensor<T> bv;
  Tensor<T> wo;  // [D, D]
  Tensor<T> ln_gain;
  Tensor<T> ln_bias;
};

template <typename T>
struct TokenizerParams {
  std::int64_t width = 0;
  int edge_dim = 0;
  int time_dim = 0;
  std::vector<MpnnLayerParams<T>> layers;

  // Message width Dm = width + edge_dim + time_dim + 1.
  std::int64_t message_width() const { return width + edge_dim + time_dim + 1; }

  static TokenizerParams make(ParamSet<T>& ps, const std::string& name, std::int64_t width, int edge_dim,
                              int time_dim, int num_layers, Rng& rng);
};

// Messages between token cells. Every sampled edge yields one message in
// each direction; messages are sorted by (destination cell, edge, direction)
// so aggregation order never depends on sampling order.
template <typename T>
struct MessageGraph {
  std::int64_t num_cells = 0;
  std::vector<std::int64_t> src;          // source cell per message
  std::vector<std::int64_t> dst;          // destination cell per message
  std::vector<std::int64_t> dst_offsets;  // CSR over destination cells
  Tensor<T> edge_inputs;                  // [messages, edge_dim + time_dim + 1], constant

  std::int64_t num_messages() const { return static_cast<std::int64_t>(src.size()); }
};

template <typename T>
MessageGraph<T> build_message_graph(const PatchSet& patches, const TokenLayout& layout,
                                    std::span<const SampledNeighborhood> neighborhoods, int time_dim);

// Runs every tokenizer layer over all cells at once. `states` is [C, D].
template <typename T>
Tensor<T> tokenize(const MessageGraph<T>& graph, const Tensor<T>& states, const TokenizerParams<T>& params);

// Single-patch form: tokens for every node occurring in `neigh.patch`, given
// an input state for each of them.
template <typename T>
std::map<NodeId, std::vector<T>> tokenize_patch(const PatchSet& patches, const SampledNeighborhood& neigh,
                                                const std::map<NodeId, std::vector<T>>& states_in,
                                                const TokenizerParams<T>& params);

}  // namespace tody
