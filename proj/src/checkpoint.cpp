#include "tody/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <type_traits>

#include "tody/errors.hpp"

namespace tody {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'D', 'Y', 'C', 'K', 'P', 'T'};

template <typename V>
void put_le(std::string& out, V v) {
  char b[sizeof(V)];
  std::memcpy(b, &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(V));
  out.append(b, sizeof(V));
}

template <typename V>
V get_le(const char* p) {
  char b[sizeof(V)];
  std::memcpy(b, p, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(V));
  V v;
  std::memcpy(&v, b, sizeof(V));
  return v;
}

template <typename T>
constexpr const char* dtype_name() {
  return std::is_same_v<T, float> ? "f32" : "f64";
}

}  // namespace

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const ParamSet<T>& params, const nlohmann::json& meta) {
  nlohmann::json header;
  header["format_version"] = kCheckpointVersion;
  header["meta"] = meta;
  header["tensors"] = nlohmann::json::array();
  std::string payload;
  for (const auto& [name, t] : params.entries()) {
    const std::size_t offset = payload.size();
    for (T v : t.data()) put_le(payload, v);
    header["tensors"].push_back({{"name", name},
                                 {"shape", t.shape()},
                                 {"dtype", dtype_name<T>()},
                                 {"offset", offset},
                                 {"nbytes", payload.size() - offset}});
  }
  const std::string h = header.dump();
  std::string out(kMagic, sizeof(kMagic));
  put_le(out, static_cast<std::uint64_t>(h.size()));
  out += h;
  out += payload;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot write checkpoint " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw DataError("short write on checkpoint " + path.string());
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw VersionError(path.string() + " is not a checkpoint file");
  }
  const auto hlen = get_le<std::uint64_t>(buf.data() + 8);
  if (16 + hlen > buf.size()) throw DataError("truncated checkpoint header in " + path.string());
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(buf.substr(16, hlen));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("corrupt checkpoint header: " + std::string(e.what()));
  }
  if (header.value("format_version", -1) != kCheckpointVersion) {
    throw VersionError("checkpoint format version " + header.value("format_version", nlohmann::json(-1)).dump() +
                       " is not supported (expected " + std::to_string(kCheckpointVersion) + ")");
  }
  const char* payload = buf.data() + 16 + hlen;
  const std::size_t payload_size = buf.size() - 16 - hlen;
  Checkpoint ck;
  ck.meta = header.value("meta", nlohmann::json::object());
  for (const auto& t : header.at("tensors")) {
    CheckpointEntry e;
    e.name = t.at("name").get<std::string>();
    e.shape = t.at("shape").get<Shape>();
    e.dtype = t.at("dtype").get<std::string>();
    const auto offset = t.at("offset").get<std::size_t>();
    const auto nbytes = t.at("nbytes").get<std::size_t>();
    const std::size_t width = e.dtype == "f32" ? 4 : e.dtype == "f64" ? 8 : 0;
    if (width == 0) throw VersionError("unknown dtype " + e.dtype + " in checkpoint");
    const auto n = static_cast<std::size_t>(shape_numel(e.shape));
    if (nbytes != n * width || offset + nbytes > payload_size) {
      throw DataError("checkpoint tensor " + e.name + " has inconsistent extent");
    }
    e.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      e.values[i] = width == 4 ? static_cast<double>(get_le<float>(payload + offset + i * 4))
                               : get_le<double>(payload + offset + i * 8);
    }
    ck.tensors.push_back(std::move(e));
  }
  return ck;
}

template <typename T>
void load_into(const Checkpoint& ckpt, ParamSet<T>& params) {
  auto& entries = params.entries();
  if (entries.size() != ckpt.tensors.size()) {
    throw VersionError("checkpoint holds " + std::to_string(ckpt.tensors.size()) + " tensors, model expects " +
                       std::to_string(entries.size()));
  }
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& [name, t] = entries[i];
    const CheckpointEntry& e = ckpt.tensors[i];
    if (e.name != name || e.shape != t.shape()) {
      throw VersionError("checkpoint tensor " + e.name + shape_str(e.shape) + " does not match model parameter " +
                         name + shape_str(t.shape()));
    }
    auto v = t.mutable_data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<T>(e.values[j]);
  }
}

template <typename T>
void load_prefix(const Checkpoint& ckpt, ParamSet<T>& params, const std::string& prefix) {
  for (auto& [name, t] : params.entries()) {
    if (name.rfind(prefix, 0) != 0) continue;
    const auto it = std::find_if(ckpt.tensors.begin(), ckpt.tensors.end(),
                                 [&](const CheckpointEntry& e) { return e.name == name; });
    if (it == ckpt.tensors.end()) throw VersionError("checkpoint has no tensor " + name);
    if (it->shape != t.shape()) {
      throw VersionError("checkpoint tensor " + name + shape_str(it->shape) + " does not match model shape " +
                         shape_str(t.shape()));
    }
    auto v = t.mutable_data();
    for (std::size_t j = 0; j < v.size(); ++j) v[j] = static_cast<T>(it->values[j]);
  }
}

template void save_checkpoint<float>(const std::filesystem::path&, const ParamSet<float>&, const nlohmann::json&);
template void save_checkpoint<double>(const std::filesystem::path&, const ParamSet<double>&, const nlohmann::json&);
template void load_into<float>(const Checkpoint&, ParamSet<float>&);
template void load_into<double>(const Checkpoint&, ParamSet<double>&);
template void load_prefix<float>(const Checkpoint&, ParamSet<float>&, const std::string&);
template void load_prefix<double>(const Checkpoint&, ParamSet<double>&, const std::string&);

}  // namespace tody
