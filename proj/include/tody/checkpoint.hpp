#pragma once

// Checkpoint layout (all integers little-endian):
//   bytes 0..7   magic "TODYCKPT"
//   bytes 8..15  u64 length H of the JSON header
//   H bytes      JSON header: {"format_version", "tensors": [{"name", "shape",
//                "dtype" ("f32"|"f64"), "offset", "nbytes"}], "meta": {...}}
//   payload      raw tensor data; offsets are relative to the payload start

#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tody/params.hpp"

namespace tody {

inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  Shape shape;
  std::string dtype;
  std::vector<double> values;
};

struct Checkpoint {
  nlohmann::json meta;
  std::vector<CheckpointEntry> tensors;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params, const nlohmann::json& meta);

Checkpoint read_checkpoint(const std::filesystem::path& path);

// Copies checkpoint values into matching parameters. Names, order, and
// shapes must agree exactly.
template <typename T>
void load_into(const Checkpoint& ckpt, ParamSet<T>& params);

// Copies, by name, every parameter whose name starts with `prefix`. Each of
// them must be present in the checkpoint with the same shape.
template <typename T>
void load_prefix(const Checkpoint& ckpt, ParamSet<T>& params, const std::string& prefix);

}  // namespace tody
