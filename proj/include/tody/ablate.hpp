#pragma once

// Sweeps one configuration axis and collects test metrics per setting.

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "tody/trainer.hpp"

namespace tody {

struct AblationSetting {
  std::string label;
  RunConfig config;
};

// Axes: pe_kind, pe_input, num_patches, window, blocks. With no explicit
// values each axis has a default grid; `blocks` values are written "LxK"
// (L blocks of K tokenizer layers each).
std::vector<AblationSetting> ablation_grid(const RunConfig& base, const std::string& axis,
                                           std::span<const std::string> values = {});

struct AblationRow {
  std::string axis;
  std::string setting;
  std::string split;
  std::string metric;
  double value = 0;
  std::uint64_t seed = 0;
};

// Trains every setting with the base seed, each into its own output
// directory, and reports the model-selection metric on the test split.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      std::span<const std::string> values, const std::filesystem::path& workdir,
                                      std::ostream* log = nullptr);

// CSV with columns axis,setting,split,metric,value,seed.
void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows);

}  // namespace tody
