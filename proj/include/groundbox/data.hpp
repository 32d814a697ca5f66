#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "groundbox/config.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

/// Receives non-fatal diagnostics (padding, missing predictions, skipped
/// examples). Defaults to standard error.
inline std::function<void(std::string_view)>& warning_sink() {
  static std::function<void(std::string_view)> sink = [](std::string_view msg) {
    std::cerr << "warning: " << msg << '\n';
  };
  return sink;
}

inline void warn(std::string_view msg) {
  if (warning_sink()) warning_sink()(msg);
}

struct BoundingBox {
  double x1 = 0, y1 = 0, x2 = 1, y2 = 1;

  static BoundingBox make(double x1, double y1, double x2, double y2) {
    for (double v : {x1, y1, x2, y2}) {
      if (!std::isfinite(v) || v < 0.0) throw DataError("box coordinates must be finite and non-negative");
    }
    if (!(x1 < x2 && y1 < y2)) throw DataError("box must have positive area");
    return {x1, y1, x2, y2};
  }

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool operator==(const BoundingBox&) const = default;
};

/// Intersection over union of two valid boxes.
inline double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

enum class Split { Train, Val, Test };

inline std::string_view split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw DataError("unknown split '" + std::string(text) + "'");
}

struct Proposal {
  BoundingBox box;
  std::vector<double> feature;
  bool operator==(const Proposal&) const = default;
};

struct Frame {
  std::vector<Proposal> proposals;
  bool operator==(const Frame&) const = default;
};

struct GroundTruth {
  std::size_t query = 0;  // position in query_labels
  std::size_t frame = 0;  // index into the segment's frames
  BoundingBox box;
  bool visible = true;
  bool operator==(const GroundTruth&) const = default;
};

struct SegmentSample {
  std::string segment_id;
  Split split = Split::Train;
  std::vector<Frame> frames;
  std::vector<std::size_t> query_labels;
  std::vector<GroundTruth> gt;  // empty for the train split

  std::size_t proposal_count() const {
    return frames.empty() ? 0 : frames.front().proposals.size();
  }
  bool operator==(const SegmentSample&) const = default;
};

struct Vocabulary {
  std::vector<std::string> labels;

  std::size_t size() const { return labels.size(); }
  const std::string& operator[](std::size_t i) const { return labels.at(i); }

  std::size_t index_of(std::string_view label) const {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) return i;
    throw VocabularyError("label '" + std::string(label) + "' not in vocabulary");
  }

  void validate() const {
    if (labels.empty()) throw VocabularyError("empty vocabulary");
    std::vector<std::string> sorted = labels;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw VocabularyError("vocabulary labels must be unique");
    }
  }
  bool operator==(const Vocabulary&) const = default;
};

struct Dataset {
  Vocabulary vocab;
  std::size_t feature_dim = 0;
  std::vector<SegmentSample> train, val, test;

  const std::vector<SegmentSample>& split(Split s) const {
    switch (s) {
      case Split::Train: return train;
      case Split::Val: return val;
      case Split::Test: return test;
    }
    return train;
  }
  std::vector<SegmentSample>& split(Split s) {
    return const_cast<std::vector<SegmentSample>&>(std::as_const(*this).split(s));
  }
  bool operator==(const Dataset&) const = default;
};

/// Structural checks shared by the generator and the loader.
inline void validate_segment(const SegmentSample& seg, std::size_t vocab_size, std::size_t feature_dim) {
  const std::string where = "segment " + seg.segment_id + ": ";
  if (seg.query_labels.empty()) throw DataError(where + "no query labels");
  for (auto l : seg.query_labels) {
    if (l >= vocab_size) throw VocabularyError(where + "label " + std::to_string(l) + " outside vocabulary");
  }
  if (seg.frames.empty()) throw DataError(where + "no frames");
  const std::size_t n = seg.proposal_count();
  if (n == 0) throw DataError(where + "frame without proposals");
  for (const auto& f : seg.frames) {
    if (f.proposals.size() != n) {
      throw DataError(where + "ragged proposal counts (" + std::to_string(n) + " vs " +
                      std::to_string(f.proposals.size()) + ")");
    }
    for (const auto& p : f.proposals) {
      if (p.feature.size() != feature_dim) {
        throw DataError(where + "feature length " + std::to_string(p.feature.size()) + " != " +
                        std::to_string(feature_dim));
      }
    }
  }
  if (seg.split == Split::Train && !seg.gt.empty()) throw DataError(where + "train segments carry no gt");
  for (const auto& g : seg.gt) {
    if (g.query >= seg.query_labels.size() || g.frame >= seg.frames.size()) {
      throw DataError(where + "gt record out of range");
    }
  }
}

// ---------------------------------------------------------------------------
// Synthetic data with planted ground truth

namespace detail {

inline Rng segment_rng(std::uint64_t seed, Split split, std::size_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    0x67b0u};
  return Rng(seq);
}

// Features are stored as 32-bit floats on disk, so generated values are
// rounded to float precision up front to keep save/load lossless.
inline double to_float_precision(double v) { return static_cast<double>(static_cast<float>(v)); }

inline constexpr double kCanvas = 1000.0;

inline BoundingBox random_box(Rng& rng) {
  std::uniform_real_distribution<double> size(60.0, 400.0);
  const double w = std::round(size(rng));
  const double h = std::round(size(rng));
  std::uniform_real_distribution<double> ux(0.0, kCanvas - w);
  std::uniform_real_distribution<double> uy(0.0, kCanvas - h);
  const double x = std::round(ux(rng));
  const double y = std::round(uy(rng));
  return BoundingBox::make(x, y, x + w, y + h);
}

// A box whose IoU with every box in `avoid` stays below 0.5.
inline BoundingBox box_avoiding(const std::vector<BoundingBox>& avoid, Rng& rng) {
  for (int attempt = 0; attempt < 10000; ++attempt) {
    auto b = random_box(rng);
    bool ok = true;
    for (const auto& a : avoid) ok = ok && iou(a, b) < 0.5;
    if (ok) return b;
  }
  throw DataError("could not place a proposal box with IoU < 0.5 against the planted boxes");
}

inline std::vector<double> noisy_copy(const std::vector<double>& base, double sigma, Rng& rng) {
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> out(base.size());
  for (std::size_t i = 0; i < base.size(); ++i) out[i] = to_float_precision(base[i] + sigma * noise(rng));
  return out;
}

// Label-specific span start in [0, slack]: a fixed preferred position per
// label, moved by at most one frame.
inline std::size_t timed_start(std::uint64_t seed, std::size_t label, std::size_t slack, Rng& rng) {
  Rng label_rng(seed ^ 0x2545f4914f6cdd1dULL ^ (0x9e3779b97f4a7c15ULL * (label + 1)));
  const double preferred = std::uniform_real_distribution<double>(0.0, 1.0)(label_rng);
  const auto centre = static_cast<long long>(std::llround(preferred * static_cast<double>(slack)));
  const long long shifted = centre + std::uniform_int_distribution<long long>(-1, 1)(rng);
  return static_cast<std::size_t>(std::clamp<long long>(shifted, 0, static_cast<long long>(slack)));
}

inline std::vector<std::string> synthetic_labels(std::size_t objects, std::size_t referring) {
  static const std::array<const char*, 4> pronouns = {"it", "them", "that", "they"};
  std::vector<std::string> labels;
  for (std::size_t i = 0; i < objects; ++i) {
    std::string name = std::to_string(i);
    if (name.size() < 2) name = "0" + name;
    labels.push_back("obj" + name);
  }
  for (std::size_t i = 0; i < referring; ++i) {
    labels.push_back(i < pronouns.size() ? pronouns[i] : "ref" + std::to_string(i));
  }
  return labels;
}

}  // namespace detail

/// Latent feature prototype per object label; referring labels have none.
inline std::vector<std::vector<double>> synthetic_prototypes(const GroundingConfig& cfg, std::uint64_t seed) {
  Rng rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::normal_distribution<double> unit(0.0, 1.0);
  std::vector<std::vector<double>> protos(cfg.vocab_size - cfg.referring);
  for (auto& p : protos) {
    p.resize(cfg.feature_dim);
    for (auto& v : p) v = detail::to_float_precision(unit(rng));
  }
  return protos;
}

/// Generates one segment. Each distinct query object is planted in one
/// contiguous span of about `presence` of the frames, placed near the label's
/// preferred position when `label_timing` is set (off by default); where planted, one
/// proposal carries prototype + N(0, sigma²) and the object's box. All other
/// proposals are distractors whose boxes overlap every planted box with
/// IoU < 0.5.
inline SegmentSample generate_segment(const GroundingConfig& cfg,
                                      const std::vector<std::vector<double>>& prototypes,
                                      std::uint64_t seed, Split split, std::size_t index) {
  auto rng = detail::segment_rng(seed, split, index);
  const std::size_t object_labels = cfg.vocab_size - cfg.referring;
  const std::size_t frames = cfg.segment_frames;
  const std::size_t n = cfg.proposals;

  SegmentSample seg;
  seg.split = split;
  seg.segment_id = std::string(split_name(split)) + "-" + std::to_string(index);

  std::uniform_int_distribution<std::size_t> count(cfg.min_objects, cfg.max_objects);
  const std::size_t objects = count(rng);
  std::vector<std::size_t> pool(object_labels);
  std::iota(pool.begin(), pool.end(), 0);
  for (std::size_t i = 0; i < objects; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, object_labels - 1);
    std::swap(pool[i], pool[pick(rng)]);
    seg.query_labels.push_back(pool[i]);
  }
  // referent[k]: which distinct object query k denotes.
  std::vector<std::size_t> referent(objects);
  std::iota(referent.begin(), referent.end(), 0);
  if (cfg.referring > 0) {
    std::bernoulli_distribution use_pronoun(0.3);
    if (use_pronoun(rng)) {
      std::uniform_int_distribution<std::size_t> which(0, cfg.referring - 1);
      std::uniform_int_distribution<std::size_t> target(0, objects - 1);
      seg.query_labels.push_back(object_labels + which(rng));
      referent.push_back(target(rng));
    }
  }

  const std::size_t span = std::clamp<std::size_t>(
      static_cast<std::size_t>(std::llround(cfg.presence * static_cast<double>(frames))), 1, frames);
  std::vector<std::size_t> span_start(objects);
  for (std::size_t o = 0; o < objects; ++o) {
    if (cfg.label_timing) {
      span_start[o] = detail::timed_start(seed, seg.query_labels[o], frames - span, rng);
    } else {
      std::uniform_int_distribution<std::size_t> start(0, frames - span);
      span_start[o] = start(rng);
    }
  }

  std::vector<std::size_t> distractor_labels;
  for (std::size_t l = 0; l < object_labels; ++l) {
    if (std::find(seg.query_labels.begin(), seg.query_labels.end(), l) == seg.query_labels.end()) {
      distractor_labels.push_back(l);
    }
  }

  std::bernoulli_distribution pure_noise(cfg.distractor_noise);
  std::normal_distribution<double> unit(0.0, 1.0);
  for (std::size_t f = 0; f < frames; ++f) {
    std::vector<std::size_t> present;
    for (std::size_t o = 0; o < objects; ++o)
      if (f >= span_start[o] && f < span_start[o] + span) present.push_back(o);

    std::vector<std::size_t> slots(n);
    std::iota(slots.begin(), slots.end(), 0);
    std::shuffle(slots.begin(), slots.end(), rng);

    Frame frame;
    frame.proposals.resize(n);
    std::vector<BoundingBox> planted;
    std::vector<std::size_t> planted_slot(objects, n);
    for (std::size_t j = 0; j < present.size(); ++j) {
      const std::size_t o = present[j];
      auto box = detail::box_avoiding(planted, rng);
      planted.push_back(box);
      planted_slot[o] = slots[j];
      frame.proposals[slots[j]] = {box, detail::noisy_copy(prototypes[seg.query_labels[o]], cfg.sigma, rng)};
    }
    for (std::size_t j = present.size(); j < n; ++j) {
      auto box = detail::box_avoiding(planted, rng);
      std::vector<double> feature(cfg.feature_dim);
      if (distractor_labels.empty() || pure_noise(rng)) {
        for (auto& v : feature) v = detail::to_float_precision(unit(rng));
      } else {
        std::uniform_int_distribution<std::size_t> pick(0, distractor_labels.size() - 1);
        feature = detail::noisy_copy(prototypes[distractor_labels[pick(rng)]], cfg.sigma, rng);
      }
      frame.proposals[slots[j]] = {box, std::move(feature)};
    }
    if (split != Split::Train) {
      for (std::size_t k = 0; k < seg.query_labels.size(); ++k) {
        const std::size_t slot = planted_slot[referent[k]];
        if (slot < n) seg.gt.push_back({k, f, frame.proposals[slot].box, true});
      }
    }
    seg.frames.push_back(std::move(frame));
  }
  return seg;
}

/// Deterministic train/val/test splits for the configured sizes.
inline Dataset generate_synthetic(const GroundingConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  if (cfg.proposals < cfg.max_objects) {
    throw ConfigError("proposals per frame (" + std::to_string(cfg.proposals) +
                      ") must be at least max_objects (" + std::to_string(cfg.max_objects) + ")");
  }
  Dataset data;
  data.vocab.labels = detail::synthetic_labels(cfg.vocab_size - cfg.referring, cfg.referring);
  data.feature_dim = cfg.feature_dim;
  const auto prototypes = synthetic_prototypes(cfg, seed);
  const std::pair<Split, std::size_t> plan[] = {
      {Split::Train, cfg.train_segments}, {Split::Val, cfg.val_segments}, {Split::Test, cfg.test_segments}};
  for (auto [split, count] : plan) {
    auto& out = data.split(split);
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(generate_segment(cfg, prototypes, seed, split, i));
  }
  return data;
}

// ---------------------------------------------------------------------------
// Sampling

/// Picks `count` frame indices from a segment of `frame_count` frames. The
/// segment is cut into `count` even clips [floor(j·F/T), floor((j+1)·F/T));
/// training draws a uniform frame per clip, evaluation takes each clip's
/// floor-midpoint. Short segments are padded by repeating the last frame.
inline std::vector<std::size_t> sample_frames(std::size_t frame_count, std::size_t count, bool training,
                                              Rng& rng) {
  if (count < 1) throw ConfigError("sample_frames: T must be at least 1");
  if (frame_count == 0) throw DataError("sample_frames: segment has no frames");
  std::vector<std::size_t> out;
  out.reserve(count);
  if (frame_count < count) {
    warn("segment has " + std::to_string(frame_count) + " frames, fewer than T = " +
         std::to_string(count) + "; padding with the last frame");
    for (std::size_t j = 0; j < count; ++j) out.push_back(std::min(j, frame_count - 1));
    return out;
  }
  for (std::size_t j = 0; j < count; ++j) {
    const std::size_t begin = j * frame_count / count;
    const std::size_t end = (j + 1) * frame_count / count;
    if (training) {
      std::uniform_int_distribution<std::size_t> pick(begin, end - 1);
      out.push_back(pick(rng));
    } else {
      out.push_back((begin + end) / 2);
    }
  }
  return out;
}

inline bool labels_overlap(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
  for (auto x : a)
    if (std::find(b.begin(), b.end(), x) != b.end()) return true;
  return false;
}

/// Uniformly draws a sentence from `pool` that shares no label with
/// `positive`.
inline const std::vector<std::size_t>& sample_negative_sentence(std::span<const SegmentSample> pool,
                                                                const SegmentSample& positive, Rng& rng) {
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (!labels_overlap(pool[i].query_labels, positive.query_labels)) eligible.push_back(i);
  if (eligible.empty()) {
    throw SamplingError("no sentence in the pool is disjoint from segment " + positive.segment_id);
  }
  std::uniform_int_distribution<std::size_t> pick(0, eligible.size() - 1);
  return pool[eligible[pick(rng)]].query_labels;
}

/// Features of the chosen frames packed as [T·N × D_in].
inline Tensor pack_features(const SegmentSample& seg, const std::vector<std::size_t>& frame_indices,
                            std::size_t feature_dim) {
  const std::size_t n = seg.proposal_count();
  std::vector<double> values;
  values.reserve(frame_indices.size() * n * feature_dim);
  for (auto f : frame_indices) {
    for (const auto& p : seg.frames.at(f).proposals) values.insert(values.end(), p.feature.begin(), p.feature.end());
  }
  return Tensor::matrix(frame_indices.size() * n, feature_dim, std::move(values));
}

}  // namespace groundbox
