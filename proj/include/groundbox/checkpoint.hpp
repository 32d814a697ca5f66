#pragma once

// checkpoint.bin holds every parameter as little-endian float64, concatenated
// in manifest order. checkpoint.json names each tensor with its shape and
// offset and records the configuration the model was built from.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "groundbox/config.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/model.hpp"
#include "json.hpp"

namespace groundbox {

inline constexpr const char* kCheckpointFormat = "groundbox-checkpoint-1";

struct CheckpointPaths {
  std::filesystem::path binary, manifest;
};

/// Accepts a directory, checkpoint.bin or checkpoint.json.
inline CheckpointPaths checkpoint_paths(const std::filesystem::path& path) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path) || (!path.has_extension() && !fs::exists(path))) {
    return {path / "checkpoint.bin", path / "checkpoint.json"};
  }
  auto bin = path;
  auto json = path;
  bin.replace_extension(".bin");
  json.replace_extension(".json");
  return {bin, json};
}

namespace detail {

inline std::uint64_t to_little_endian64(std::uint64_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    std::uint64_t r = 0;
    for (int i = 0; i < 8; ++i) r |= ((v >> (8 * i)) & 0xffu) << (8 * (7 - i));
    return r;
  }
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const ModelParams& params, const GroundingConfig& cfg) {
  const auto paths = checkpoint_paths(path);
  if (paths.binary.has_parent_path()) std::filesystem::create_directories(paths.binary.parent_path());
  std::ofstream bin(paths.binary, std::ios::binary);
  if (!bin) throw IntegrityError("cannot write " + paths.binary.string());
  nlohmann::ordered_json manifest;
  manifest["format"] = kCheckpointFormat;
  nlohmann::ordered_json config = nlohmann::ordered_json::object();
  for (const auto& [k, v] : config_entries(cfg)) config[k] = v;
  manifest["config"] = std::move(config);
  auto list = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : params.named()) {
    nlohmann::ordered_json e;
    e["name"] = name;
    e["shape"] = t.shape();
    e["offset"] = offset;
    list.push_back(std::move(e));
    for (double v : t.data()) {
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof bits);
      bits = detail::to_little_endian64(bits);
      bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
    }
    offset += t.size();
  }
  manifest["params"] = std::move(list);
  manifest["total"] = offset;
  std::ofstream(paths.manifest) << manifest.dump(2) << '\n';
}

inline nlohmann::json read_checkpoint_manifest(const std::filesystem::path& path) {
  const auto paths = checkpoint_paths(path);
  std::ifstream in(paths.manifest);
  if (!in) throw IntegrityError("missing checkpoint manifest " + paths.manifest.string());
  nlohmann::json manifest;
  try {
    in >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (!manifest.is_object() || manifest.value("format", "") != kCheckpointFormat || !manifest.contains("params") ||
      !manifest.contains("total")) {
    throw IntegrityError("corrupt checkpoint manifest " + paths.manifest.string());
  }
  return manifest;
}

/// The configuration recorded in a checkpoint's manifest.
inline GroundingConfig load_checkpoint_config(const std::filesystem::path& path) {
  auto manifest = read_checkpoint_manifest(path);
  GroundingConfig cfg;
  try {
    for (const auto& [k, v] : manifest.at("config").items()) set_config_value(cfg, k, v.get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt checkpoint config: " + std::string(e.what()));
  }
  return cfg;
}

/// Loads values into already-shaped `params`. Every parameter must be present
/// with an identical shape.
inline void load_checkpoint(const std::filesystem::path& path, ModelParams& params) {
  const auto paths = checkpoint_paths(path);
  auto manifest = read_checkpoint_manifest(path);
  std::uint64_t total = 0;
  try {
    total = manifest.at("total").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("corrupt checkpoint manifest: " + std::string(e.what()));
  }
  if (!std::filesystem::exists(paths.binary)) throw IntegrityError("missing " + paths.binary.string());
  const auto bytes = std::filesystem::file_size(paths.binary);
  if (bytes != total * sizeof(double)) {
    throw IntegrityError("checkpoint.bin holds " + std::to_string(bytes) + " bytes but the manifest expects " +
                         std::to_string(total * sizeof(double)));
  }
  std::vector<double> flat(total);
  std::ifstream bin(paths.binary, std::ios::binary);
  for (auto& v : flat) {
    std::uint64_t bits;
    bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
    bits = detail::to_little_endian64(bits);
    std::memcpy(&v, &bits, sizeof v);
  }
  for (auto& [name, t] : params.named()) {
    const nlohmann::json* entry = nullptr;
    for (const auto& e : manifest["params"])
      if (e.value("name", "") == name) entry = &e;
    if (!entry) throw ShapeError("checkpoint has no parameter " + name);
    Shape shape;
    std::uint64_t offset = 0;
    try {
      shape = entry->at("shape").get<Shape>();
      offset = entry->at("offset").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
      throw IntegrityError("corrupt manifest entry for " + name + ": " + e.what());
    }
    if (shape != t.shape()) {
      throw ShapeError("parameter " + name + " has shape " + shape_str(shape) + " in the checkpoint but " +
                       shape_str(t.shape()) + " in the model");
    }
    if (offset + t.size() > total) throw IntegrityError("parameter " + name + " runs past the end of checkpoint.bin");
    auto dst = t.mutable_data();
    std::copy(flat.begin() + static_cast<std::ptrdiff_t>(offset),
              flat.begin() + static_cast<std::ptrdiff_t>(offset + t.size()), dst.begin());
  }
}

}  // namespace groundbox
