#pragma once

// Forward-pass timing of the encoder on random streams.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

namespace tody {

struct BenchRow {
  std::int64_t edges = 0;
  int patches = 0;
  int blocks = 0;
  double ms = 0;  // fastest timed full-window encode; one warm-up pass, then repeats rounds over all cases
};

struct BenchOptions {
  std::int64_t hidden = 32;
  int blocks = 3;
  int mpnn_layers = 3;
  int repeats = 3;
  std::uint64_t seed = 0;
};

// One row per (E, M) pair. Each stream has E edges over E/8 nodes; every
// node of the window is encoded.
std::vector<BenchRow> bench_encoder(std::span<const std::int64_t> edge_counts, std::span<const int> patch_counts,
                                    const BenchOptions& opts);

// CSV with columns E,M,L,ms.
void write_bench_csv(std::ostream& os, std::span<const BenchRow> rows);

}  // namespace tody
