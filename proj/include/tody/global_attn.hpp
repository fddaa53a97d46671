#pragma once

// Global encoder: pre-norm multi-head self-attention over each node's own
// M-slot token sequence, restricted by a temporal causal mask.
//
//   x <- x + MSA(LN1(x)) Wo + bo
//   x <- x + relu(LN2(x) W1 + b1) W2 + b2
// and a final LayerNorm after the last layer.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tody/params.hpp"
#include "tody/seqpack.hpp"
#include "tody/tensor.hpp"

namespace tody {

template <typename T>
struct AttentionLayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> wq, wk, wv;  // [D, Dk], [D, Dk], [D, Dv]
  Tensor<T> wo, bo;      // [Dv, D]
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> w1, b1;  // [D, 2D]
  Tensor<T> w2, b2;  // [2D, D]
};

template <typename T>
struct TransformerParams {
  std::int64_t width = 0;
  std::int64_t key_width = 0;  // Dk, split evenly over heads
  int heads = 2;
  std::vector<AttentionLayerParams<T>> layers;
  Tensor<T> lnf_gain, lnf_bias;  // final normalization of the stack

  static TransformerParams make(ParamSet<T>& ps, const std::string& name, std::int64_t width, int heads,
                                int num_layers, Rng& rng);
};

// mask[i*M + j] = 1 iff j <= i and slot j is occupied.
Mask causal_mask(int num_slots, std::span<const unsigned char> occupancy_row);

// Attention weights of one layer for inspection: [N, heads, M, M] flattened.
template <typename T>
std::vector<T> attention_weights(const PackedSequences<T>& packed, const TransformerParams<T>& params, int layer);

template <typename T>
PackedSequences<T> attend(const PackedSequences<T>& packed, const TransformerParams<T>& params);

}  // namespace tody
