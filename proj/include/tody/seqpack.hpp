#pragma once

// Packing of per-patch node tokens into per-node padded sequences, positional
// encodings over those sequences, and the final readout.
//
// Tokens live in two layouts. The cell layout is a [C, D] matrix with one row
// per occupied (node, patch) pair, grouped by node and ascending in patch.
// The packed layout is an [N, M, D] tensor with one M-slot sequence per node
// where unoccupied slots hold the MASK embedding.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tody/params.hpp"
#include "tody/stream.hpp"
#include "tody/tensor.hpp"

namespace tody {

struct TokenLayout {
  int num_patches = 0;
  std::vector<NodeId> nodes;              // packed rows, ascending node id
  std::vector<std::int64_t> cell_offsets;  // row r owns cells [cell_offsets[r], cell_offsets[r+1])
  std::vector<NodeId> cell_node;
  std::vector<int> cell_patch;
  std::vector<std::int64_t> cell_slot;  // flat slot r*M + m of each cell
  std::vector<std::int64_t> slot_cell;  // cell of each flat slot, -1 if unoccupied
  Mask occupancy;                       // N*M

  std::int64_t num_rows() const { return static_cast<std::int64_t>(nodes.size()); }
  std::int64_t num_cells() const { return static_cast<std::int64_t>(cell_node.size()); }
  // Packed row of node n, -1 if n is not packed.
  std::int64_t row_of(NodeId n) const;
  // Cell of (n, m), -1 if absent.
  std::int64_t cell_of(NodeId n, int m) const;
};

// Layout for `nodes` (deduplicated and sorted internally). A slot is occupied
// iff the node has at least one edge in that patch.
TokenLayout make_layout(const PatchSet& patches, std::span<const NodeId> nodes);

enum class PeKind { kNone, kSineCosine, kTime2Vec, kIdentity, kLinear };
enum class PeInput { kPatchIndex, kEdgeIndex, kEdgeTime };

PeKind parse_pe_kind(const std::string& s);
PeInput parse_pe_input(const std::string& s);
std::string to_string(PeKind k);
std::string to_string(PeInput i);

template <typename T>
struct PackedSequences {
  Tensor<T> tokens;  // [N, M, D]
  const TokenLayout* layout = nullptr;
  std::vector<double> positions;  // N*M, 0 at unoccupied slots

  std::int64_t width() const { return tokens.dim(2); }
};

// Per-slot position values for the given input mode.
std::vector<double> slot_positions(const TokenLayout& layout, const PatchSet& patches, PeInput input);

template <typename T>
PackedSequences<T> pack(const Tensor<T>& cells, const TokenLayout& layout, const Tensor<T>& mask_embedding,
                        std::vector<double> positions = {});

template <typename T>
Tensor<T> unpack(const PackedSequences<T>& packed);

template <typename T>
struct PositionalEncoderParams {
  PeKind kind = PeKind::kSineCosine;
  PeInput input = PeInput::kPatchIndex;
  std::int64_t width = 0;
  Tensor<T> w;  // Linear / Time2Vec: [1, D]
  Tensor<T> b;  // Linear / Time2Vec: [D]

  static PositionalEncoderParams make(ParamSet<T>& ps, const std::string& name, PeKind kind, PeInput input,
                                      std::int64_t width, Rng& rng);
};

// Encoding matrix P [S, D] for scalar positions; differentiable for the
// learned kinds.
template <typename T>
Tensor<T> positional_encoding(std::span<const double> positions, const PositionalEncoderParams<T>& params);

// tokens + P on occupied slots; unoccupied slots are left untouched.
template <typename T>
PackedSequences<T> encode_positions(const PackedSequences<T>& packed, const PositionalEncoderParams<T>& params);

enum class ReadoutMode { kMax, kMean, kLast };

ReadoutMode parse_readout(const std::string& s);
std::string to_string(ReadoutMode m);

// Pools each node's occupied slots into one vector; [N, D]. Nodes with no
// occupied slot get zeros.
template <typename T>
Tensor<T> readout(const PackedSequences<T>& packed, ReadoutMode mode);

}  // namespace tody
