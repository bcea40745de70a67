#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "autopainter/errors.hpp"
#include "autopainter/param_set.hpp"
#include "autopainter/png_io.hpp"

// On-disk format: a JSON manifest (configs, tensor names, shapes, byte offsets, metadata) next
// to one blob of little-endian float32 values. `<name>.json` pairs with `<name>.bin`.
namespace autopainter {

namespace fs = std::filesystem;

inline constexpr const char* kCheckpointFormat = "autopainter-checkpoint";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
  std::map<std::string, ParamSet<float>> groups;
  nlohmann::json metadata;
};

inline fs::path checkpoint_blob_path(const fs::path& manifest) {
  fs::path blob = manifest;
  blob.replace_extension(".bin");
  if (blob == manifest) throw ParameterError("checkpoint manifest must not use the .bin extension");
  return blob;
}

namespace detail {

inline void append_le_floats(std::vector<unsigned char>& out, const Tensor<float>& t) {
  const std::size_t start = out.size();
  out.resize(start + t.size() * 4);
  std::memcpy(out.data() + start, t.data(), t.size() * 4);
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = start; i < out.size(); i += 4) std::swap(out[i], out[i + 3]), std::swap(out[i + 1], out[i + 2]);
}

inline void read_le_floats(const unsigned char* src, Tensor<float>& t) {
  std::memcpy(t.data(), src, t.size() * 4);
  if constexpr (std::endian::native == std::endian::big) {
    auto* bytes = reinterpret_cast<unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * 4; i += 4)
      std::swap(bytes[i], bytes[i + 3]), std::swap(bytes[i + 1], bytes[i + 2]);
  }
}

inline void write_atomically(const fs::path& path, std::span<const unsigned char> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  write_file_bytes(tmp, bytes);
  fs::rename(tmp, path);
}

}  // namespace detail

inline void save_checkpoint(const fs::path& path, const std::map<std::string, const ParamSet<float>*>& groups,
                            const nlohmann::json& metadata = nlohmann::json::object()) {
  const fs::path blob_path = checkpoint_blob_path(path);
  std::vector<unsigned char> blob;
  nlohmann::json tensors = nlohmann::json::array();
  nlohmann::json group_info = nlohmann::json::object();
  for (const auto& [group, params] : groups) {
    group_info[group] = {{"config", params->config()}, {"config_hash", params->config_hash()}};
    for (std::size_t i = 0; i < params->size(); ++i) {
      const Tensor<float>& t = params->at(i);
      tensors.push_back({{"group", group},
                         {"name", params->name(i)},
                         {"shape", t.shape()},
                         {"offset", blob.size()},
                         {"count", t.size()}});
      detail::append_le_floats(blob, t);
    }
  }
  nlohmann::json manifest{{"format", kCheckpointFormat},
                          {"version", kCheckpointVersion},
                          {"blob", blob_path.filename().string()},
                          {"blob_bytes", blob.size()},
                          {"groups", group_info},
                          {"tensors", tensors},
                          {"metadata", metadata}};
  if (!path.parent_path().empty()) fs::create_directories(path.parent_path());
  detail::write_atomically(blob_path, blob);
  const std::string text = manifest.dump(2);
  detail::write_atomically(path, std::span(reinterpret_cast<const unsigned char*>(text.data()), text.size()));
}

/// Loads and fully validates a checkpoint; nothing is returned unless every tensor checks out.
inline CheckpointData load_checkpoint_file(const fs::path& path) {
  nlohmann::json manifest;
  try {
    std::ifstream in(path);
    if (!in) throw LoadError("cannot open checkpoint " + path.string());
    manifest = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": corrupt manifest: " + e.what());
  }
  try {
    if (manifest.at("format") != kCheckpointFormat) throw LoadError("not an autopainter checkpoint");
    if (manifest.at("version") != kCheckpointVersion)
      throw LoadError("unsupported checkpoint version " + manifest.at("version").dump());
    const fs::path blob_path = path.parent_path() / manifest.at("blob").get<std::string>();
    const std::vector<unsigned char> blob = read_file_bytes(blob_path);
    const auto expected = manifest.at("blob_bytes").get<std::uint64_t>();
    if (blob.size() != expected)
      throw LoadError("blob length mismatch: manifest says " + std::to_string(expected) + " bytes, " +
                      blob_path.string() + " has " + std::to_string(blob.size()));

    CheckpointData data;
    for (const auto& [group, info] : manifest.at("groups").items()) {
      const nlohmann::json& cfg = info.at("config");
      if (config_hash(cfg) != info.at("config_hash").get<std::string>())
        throw LoadError("group " + group + ": config hash does not match stored config");
      data.groups.emplace(group, ParamSet<float>(cfg));
    }
    std::uint64_t cursor = 0;
    for (const auto& entry : manifest.at("tensors")) {
      const std::string group = entry.at("group");
      const std::string name = entry.at("name");
      const Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      const auto count = entry.at("count").get<std::uint64_t>();
      if (static_cast<std::uint64_t>(shape_numel(shape)) != count)
        throw LoadError(group + "/" + name + ": count " + std::to_string(count) + " does not match shape " +
                        shape_string(shape));
      if (offset != cursor || offset + count * 4 > blob.size())
        throw LoadError(group + "/" + name + ": bad byte range [" + std::to_string(offset) + ", " +
                        std::to_string(offset + count * 4) + ") in blob of " + std::to_string(blob.size()) +
                        " bytes");
      cursor = offset + count * 4;
      auto it = data.groups.find(group);
      if (it == data.groups.end()) throw LoadError(name + ": unknown group " + group);
      Tensor<float> t(shape);
      detail::read_le_floats(blob.data() + offset, t);
      it->second.add(name, std::move(t));
    }
    if (cursor != blob.size())
      throw LoadError("blob has " + std::to_string(blob.size() - cursor) + " trailing bytes after offset " +
                      std::to_string(cursor));
    data.metadata = manifest.value("metadata", nlohmann::json::object());
    return data;
  } catch (const nlohmann::json::exception& e) {
    throw LoadError("checkpoint " + path.string() + ": corrupt manifest: " + e.what());
  } catch (const ParameterError& e) {
    throw LoadError("checkpoint " + path.string() + ": " + e.what());
  }
}

/// Refuses a loaded group whose architecture differs from the expected config.
inline void require_config(const ParamSet<float>& params, const nlohmann::json& expected, const std::string& what) {
  if (params.config_hash() != config_hash(expected))
    throw LoadError(what + ": architecture config hash mismatch (checkpoint " + params.config_hash() +
                    ", expected " + config_hash(expected) + ")");
}

}  // namespace autopainter
