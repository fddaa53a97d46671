#pragma once

// Small synthetic edge streams with known temporal structure.

#include <cstdint>
#include <string>

#include "tody/ctdg_store.hpp"

namespace tody {

enum class SynthPattern { kPeriodic, kLongRange };
SynthPattern parse_synth_pattern(const std::string& s);

struct SynthOptions {
  SynthPattern pattern = SynthPattern::kPeriodic;
  int nodes = 20;
  std::int64_t edges = 2000;
  std::uint64_t seed = 0;
  // Periodic: probability that a scheduled interaction is replaced by a
  // random one.
  double noise = 0.005;
  // Long-range: a node receives in one block of every gap_patches + 1
  // blocks of patch_edges edges.
  int gap_patches = 5;
  int patch_edges = 32;
};

// Periodic: nodes split into sources [0, n/2) and destinations [n/2, n);
// every source has one fixed partner and the source/partner pairs fire in a
// fixed random order that repeats, one edge per unit time.
//
// Long-range: nodes get one of gap_patches + 1 phases and time is cut into
// blocks of patch_edges edges. In block b the nodes of phase b mod (gap + 1)
// are the destinations and every other node sends at least one edge, so every
// node is active in every block. Who receives next is given away only by the
// block gap_patches + 1 back.
EventGraph synthesize(const SynthOptions& opts);

}  // namespace tody
