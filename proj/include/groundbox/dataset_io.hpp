#pragma once

// On-disk dataset layout, one directory per dataset:
//
//   vocabulary.txt   one label per line
//   segments.jsonl   one segment per line; proposals reference feature rows
//   features.bin     little-endian float32, row-major, rows indexed by feat_row
//   features.json    {"rows": int, "dim": int}

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "groundbox/data.hpp"
#include "groundbox/errors.hpp"
#include "json.hpp"

namespace groundbox {

namespace fs = std::filesystem;

namespace detail {

inline std::uint32_t to_little_endian(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

inline nlohmann::ordered_json box_json(const BoundingBox& b) {
  return nlohmann::ordered_json::array({b.x1, b.y1, b.x2, b.y2});
}

inline BoundingBox box_from_json(const nlohmann::json& j) {
  if (!j.is_array() || j.size() != 4) throw DataError("box must be an array of four numbers");
  return BoundingBox::make(j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>());
}

}  // namespace detail

/// Writes segments as JSON lines and appends their features to `features`.
inline void write_segments(std::ostream& jsonl, const std::vector<SegmentSample>& segments,
                           std::vector<float>& features, std::size_t feature_dim) {
  for (const auto& seg : segments) {
    nlohmann::ordered_json j;
    j["segment_id"] = seg.segment_id;
    j["split"] = std::string(split_name(seg.split));
    j["query_labels"] = seg.query_labels;
    auto frames = nlohmann::ordered_json::array();
    for (const auto& frame : seg.frames) {
      auto proposals = nlohmann::ordered_json::array();
      for (const auto& p : frame.proposals) {
        if (p.feature.size() != feature_dim) throw DataError("feature length mismatch in " + seg.segment_id);
        nlohmann::ordered_json pj;
        pj["box"] = detail::box_json(p.box);
        pj["feat_row"] = features.size() / feature_dim;
        for (double v : p.feature) features.push_back(static_cast<float>(v));
        proposals.push_back(std::move(pj));
      }
      nlohmann::ordered_json fj;
      fj["proposals"] = std::move(proposals);
      frames.push_back(std::move(fj));
    }
    j["frames"] = std::move(frames);
    if (seg.split != Split::Train) {
      auto gt = nlohmann::ordered_json::array();
      for (const auto& g : seg.gt) {
        nlohmann::ordered_json gj;
        gj["query"] = g.query;
        gj["frame"] = g.frame;
        gj["box"] = detail::box_json(g.box);
        gj["visible"] = g.visible;
        gt.push_back(std::move(gj));
      }
      j["gt"] = std::move(gt);
    }
    jsonl << j.dump() << '\n';
  }
}

inline void save_features(const fs::path& dir, const std::vector<float>& features, std::size_t dim) {
  std::ofstream bin(dir / "features.bin", std::ios::binary);
  if (!bin) throw IntegrityError("cannot write " + (dir / "features.bin").string());
  for (float f : features) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, sizeof bits);
    bits = detail::to_little_endian(bits);
    bin.write(reinterpret_cast<const char*>(&bits), sizeof bits);
  }
  nlohmann::ordered_json manifest;
  manifest["rows"] = dim == 0 ? 0 : features.size() / dim;
  manifest["dim"] = dim;
  std::ofstream(dir / "features.json") << manifest.dump() << '\n';
}

/// Reads the feature matrix, checking the binary size against the manifest.
inline std::vector<float> load_features(const fs::path& dir, std::size_t& dim) {
  std::ifstream mf(dir / "features.json");
  if (!mf) throw IntegrityError("missing " + (dir / "features.json").string());
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw IntegrityError("features.json: " + std::string(e.what()));
  }
  if (!manifest.contains("rows") || !manifest.contains("dim")) {
    throw IntegrityError("features.json must contain rows and dim");
  }
  const auto rows = manifest["rows"].get<std::uint64_t>();
  dim = manifest["dim"].get<std::size_t>();
  const std::uint64_t expected = rows * dim * sizeof(float);
  const fs::path bin_path = dir / "features.bin";
  if (!fs::exists(bin_path)) throw IntegrityError("missing " + bin_path.string());
  const auto actual = fs::file_size(bin_path);
  if (actual != expected) {
    throw IntegrityError("features.bin holds " + std::to_string(actual) + " bytes but the manifest (" +
                         std::to_string(rows) + " rows x " + std::to_string(dim) + ") expects " +
                         std::to_string(expected));
  }
  std::vector<float> out(rows * dim);
  std::ifstream bin(bin_path, std::ios::binary);
  for (auto& f : out) {
    std::uint32_t bits;
    bin.read(reinterpret_cast<char*>(&bits), sizeof bits);
    bits = detail::to_little_endian(bits);
    std::memcpy(&f, &bits, sizeof f);
  }
  return out;
}

/// Parses segments.jsonl against an already loaded feature matrix.
inline std::vector<SegmentSample> read_segments(std::istream& jsonl, const std::vector<float>& features,
                                                std::size_t dim, std::size_t vocab_size) {
  std::vector<SegmentSample> out;
  std::string line;
  std::size_t lineno = 0;
  const std::size_t rows = dim == 0 ? 0 : features.size() / dim;
  while (std::getline(jsonl, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = "segments.jsonl:" + std::to_string(lineno) + ": ";
    try {
      auto j = nlohmann::json::parse(line);
      SegmentSample seg;
      seg.segment_id = j.at("segment_id").get<std::string>();
      seg.split = parse_split(j.at("split").get<std::string>());
      seg.query_labels = j.at("query_labels").get<std::vector<std::size_t>>();
      for (const auto& fj : j.at("frames")) {
        Frame frame;
        for (const auto& pj : fj.at("proposals")) {
          Proposal p;
          p.box = detail::box_from_json(pj.at("box"));
          const auto row = pj.at("feat_row").get<std::size_t>();
          if (row >= rows) {
            throw IntegrityError(where + "feat_row " + std::to_string(row) + " beyond the " +
                                 std::to_string(rows) + " feature rows");
          }
          p.feature.assign(features.begin() + static_cast<std::ptrdiff_t>(row * dim),
                           features.begin() + static_cast<std::ptrdiff_t>((row + 1) * dim));
          frame.proposals.push_back(std::move(p));
        }
        seg.frames.push_back(std::move(frame));
      }
      if (j.contains("gt")) {
        for (const auto& gj : j.at("gt")) {
          seg.gt.push_back({gj.at("query").get<std::size_t>(), gj.at("frame").get<std::size_t>(),
                            detail::box_from_json(gj.at("box")), gj.value("visible", true)});
        }
      }
      validate_segment(seg, vocab_size, dim);
      out.push_back(std::move(seg));
    } catch (const IntegrityError&) {
      throw;
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(where + e.what());
    } catch (const Error& e) {
      throw ParseError(where + e.what());
    }
  }
  return out;
}

inline void save_vocabulary(const fs::path& path, const Vocabulary& vocab) {
  std::ofstream out(path);
  if (!out) throw IntegrityError("cannot write " + path.string());
  for (const auto& l : vocab.labels) out << l << '\n';
}

inline Vocabulary load_vocabulary(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IntegrityError("missing " + path.string());
  Vocabulary vocab;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    vocab.labels.push_back(line);
  }
  vocab.validate();
  return vocab;
}

/// Writes a full dataset directory. Segments are written train, val, test.
inline void save_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir);
  save_vocabulary(dir / "vocabulary.txt", data.vocab);
  std::vector<float> features;
  std::ofstream jsonl(dir / "segments.jsonl");
  if (!jsonl) throw IntegrityError("cannot write " + (dir / "segments.jsonl").string());
  for (auto s : {Split::Train, Split::Val, Split::Test}) write_segments(jsonl, data.split(s), features, data.feature_dim);
  save_features(dir, features, data.feature_dim);
}

inline Dataset load_dataset(const fs::path& dir) {
  Dataset data;
  data.vocab = load_vocabulary(dir / "vocabulary.txt");
  std::size_t dim = 0;
  const auto features = load_features(dir, dim);
  data.feature_dim = dim;
  std::ifstream jsonl(dir / "segments.jsonl");
  if (!jsonl) throw IntegrityError("missing " + (dir / "segments.jsonl").string());
  for (auto& seg : read_segments(jsonl, features, dim, data.vocab.size())) {
    data.split(seg.split).push_back(std::move(seg));
  }
  return data;
}

/// Segment-list form: writes only the given segments (features and manifest
/// alongside `path`).
inline void save_segments(const fs::path& path, const std::vector<SegmentSample>& segments, std::size_t feature_dim) {
  const auto dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  fs::create_directories(dir);
  std::vector<float> features;
  std::ofstream jsonl(path);
  if (!jsonl) throw IntegrityError("cannot write " + path.string());
  write_segments(jsonl, segments, features, feature_dim);
  save_features(dir, features, feature_dim);
}

inline std::vector<SegmentSample> load_segments(const fs::path& path, std::size_t vocab_size) {
  const auto dir = path.parent_path().empty() ? fs::path(".") : path.parent_path();
  std::size_t dim = 0;
  const auto features = load_features(dir, dim);
  std::ifstream jsonl(path);
  if (!jsonl) throw IntegrityError("missing " + path.string());
  return read_segments(jsonl, features, dim, vocab_size);
}

}  // namespace groundbox
