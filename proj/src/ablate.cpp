#include "tody/ablate.hpp"

#include <cstdio>
#include <ostream>

#include "tody/errors.hpp"

namespace tody {

namespace {

std::int64_t parse_int(const std::string& axis, const std::string& s) {
  try {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("ablation axis " + axis + ": '" + s + "' is not an integer");
  }
}

}  // namespace

std::vector<AblationSetting> ablation_grid(const RunConfig& base, const std::string& axis,
                                           std::span<const std::string> values) {
  std::vector<std::string> vals(values.begin(), values.end());
  if (vals.empty()) {
    if (axis == "pe_kind") {
      vals = {"sinecosine", "time2vec", "identity", "linear"};
    } else if (axis == "pe_input") {
      vals = {"patch_index", "edge_index", "edge_time"};
    } else if (axis == "num_patches") {
      vals = {"8", "16", "32"};
    } else if (axis == "window") {
      vals = {std::to_string(std::max<std::int64_t>(1, base.window / 4)),
              std::to_string(std::max<std::int64_t>(1, base.window / 2)), std::to_string(base.window)};
    } else if (axis == "blocks") {
      vals = {"1x9", "3x3"};
    } else {
      throw ConfigError("unknown ablation axis '" + axis +
                        "' (expected pe_kind, pe_input, num_patches, window or blocks)");
    }
  }
  std::vector<AblationSetting> out;
  for (const std::string& v : vals) {
    RunConfig c = base;
    if (axis == "pe_kind") {
      c.pe_kind = parse_pe_kind(v);
    } else if (axis == "pe_input") {
      c.pe_input = parse_pe_input(v);
    } else if (axis == "num_patches") {
      c.num_patches = static_cast<int>(parse_int(axis, v));
    } else if (axis == "window") {
      c.window = parse_int(axis, v);
    } else if (axis == "blocks") {
      const auto x = v.find('x');
      if (x == std::string::npos) throw ConfigError("ablation axis blocks: expected LxK, got '" + v + "'");
      c.blocks = static_cast<int>(parse_int(axis, v.substr(0, x)));
      c.mpnn_layers = static_cast<int>(parse_int(axis, v.substr(x + 1)));
    } else {
      throw ConfigError("unknown ablation axis '" + axis +
                        "' (expected pe_kind, pe_input, num_patches, window or blocks)");
    }
    c.output = base.output + "/ablate_" + axis + "_" + v;
    c.validate();
    out.push_back({v, c});
  }
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::string& axis,
                                      std::span<const std::string> values, const std::filesystem::path& workdir,
                                      std::ostream* log) {
  std::vector<AblationRow> rows;
  const std::string metric = base.task == Task::kFlp ? "ap" : "accuracy";
  for (const AblationSetting& s : ablation_grid(base, axis, values)) {
    if (log) *log << "== " << axis << " = " << s.label << '\n';
    const RunResult r = run_training(s.config, workdir, log);
    for (const MetricRow& m : r.metrics) {
      if (m.split == "test" && m.metric == metric) rows.push_back({axis, s.label, "test", metric, m.value, base.seed});
    }
  }
  return rows;
}

void write_ablation_csv(std::ostream& os, std::span<const AblationRow> rows) {
  os << "axis,setting,split,metric,value,seed\n";
  char buf[64];
  for (const AblationRow& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.axis << ',' << r.setting << ',' << r.split << ',' << r.metric << ',' << buf << ',' << r.seed << '\n';
  }
}

}  // namespace tody
