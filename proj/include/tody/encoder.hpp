#pragma once

// The full encoder: L alternating blocks of
//   tokenize (per patch) -> pack -> positional encoding -> attend -> unpack
// where the last block reads out pooled node embeddings instead of unpacking.

#include <cstdint>
#include <span>
#include <vector>

#include "tody/global_attn.hpp"
#include "tody/params.hpp"
#include "tody/seqpack.hpp"
#include "tody/stream.hpp"
#include "tody/tokenizer.hpp"

namespace tody {

struct EncoderConfig {
  std::int64_t width = 64;
  int node_dim = 0;
  int edge_dim = 0;
  int time_dim = 16;
  int blocks = 3;
  int mpnn_layers = 3;
  int attn_layers = 2;
  int heads = 2;
  bool use_global = true;
  PeKind pe_kind = PeKind::kSineCosine;
  PeInput pe_input = PeInput::kPatchIndex;
  ReadoutMode readout = ReadoutMode::kLast;
  Fanouts fanouts{64, 1, 1};
  SamplingMode sampling = SamplingMode::kUniform;
};

template <typename T>
struct EncoderParams {
  EncoderConfig config;
  Linear<T> input_proj;  // node_dim -> width, applied before block 0
  std::vector<TokenizerParams<T>> tokenizers;
  std::vector<TransformerParams<T>> transformers;  // empty when the global encoder is off
  PositionalEncoderParams<T> pe;                   // shared across blocks
  Tensor<T> mask_embedding;

  static EncoderParams make(ParamSet<T>& ps, const EncoderConfig& cfg, Rng& rng);
};

// Intermediate values exposed for inspection and tests.
template <typename T>
struct EncodeTrace {
  TokenLayout layout;
  std::vector<NodeId> active_nodes;
  Tensor<T> block0_tokens;  // [C, D] cell tokens of the first tokenizer
  Tensor<T> pooled;         // [rows, D] readout before scattering to node ids
};

// Node embeddings [num_nodes, D] for the graph owning `patches`. Neighborhoods
// are sampled per patch around `anchors` (every window node when empty); rows
// of nodes outside the sampled neighborhoods are zero.
template <typename T>
Tensor<T> encode(const PatchSet& patches, const EncoderParams<T>& params, std::span<const NodeId> anchors,
                 std::uint64_t seed, EncodeTrace<T>* trace = nullptr);

}  // namespace tody
