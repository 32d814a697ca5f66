#pragma once

// Box accuracy: a (query, frame) ground-truth instance is a hit when the
// predicted box has IoU strictly above 0.5 with it. Accuracy is computed per
// object class and macro-averaged over the classes that have at least one
// instance. The upper bound applies the same aggregation but counts an
// instance as a hit when any proposal in its frame clears the threshold.

#include <algorithm>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <thread>
#include <vector>

#include "groundbox/data.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/model.hpp"
#include "json.hpp"

namespace groundbox {

inline constexpr double kIouThreshold = 0.5;

struct Prediction {
  std::size_t query = 0;
  std::size_t frame = 0;
  BoundingBox box;
};

struct ClassTally {
  std::size_t instances = 0;
  std::size_t hits = 0;
  std::size_t upper_hits = 0;
};

/// Per-label tallies, indexed by vocabulary id. Merging is elementwise
/// addition, so partial tallies combine in any order.
struct EvalTally {
  std::vector<ClassTally> classes;

  explicit EvalTally(std::size_t vocab_size = 0) : classes(vocab_size) {}

  void merge(const EvalTally& other) {
    for (std::size_t i = 0; i < classes.size(); ++i) {
      classes[i].instances += other.classes[i].instances;
      classes[i].hits += other.classes[i].hits;
      classes[i].upper_hits += other.classes[i].upper_hits;
    }
  }
};

struct ClassAccuracy {
  std::string label;
  double accuracy = 0.0;
  std::size_t instances = 0;
  bool operator==(const ClassAccuracy&) const = default;
};

struct EvalReport {
  std::string mode;
  std::string split;
  double macro_accuracy = 0.0;
  double upper_bound = 0.0;
  std::vector<ClassAccuracy> per_class;  // vocabulary order, classes with instances only

  bool operator==(const EvalReport&) const = default;
};

inline bool is_hit(const BoundingBox& predicted, const BoundingBox& truth) {
  return iou(predicted, truth) > kIouThreshold;
}

/// Adds one segment's hits to `tally`. Instances without a prediction count
/// as misses (with a warning).
inline void tally_segment(const SegmentSample& seg, const std::vector<Prediction>& predictions, EvalTally& tally) {
  for (const auto& g : seg.gt) {
    auto& cls = tally.classes.at(seg.query_labels.at(g.query));
    ++cls.instances;
    auto it = std::find_if(predictions.begin(), predictions.end(),
                           [&](const Prediction& p) { return p.query == g.query && p.frame == g.frame; });
    if (it == predictions.end()) {
      warn("no prediction for query " + std::to_string(g.query) + " frame " + std::to_string(g.frame) +
           " of segment " + seg.segment_id + "; counted as a miss");
    } else if (is_hit(it->box, g.box)) {
      ++cls.hits;
    }
    const auto& proposals = seg.frames.at(g.frame).proposals;
    if (std::any_of(proposals.begin(), proposals.end(), [&](const Proposal& p) { return is_hit(p.box, g.box); })) {
      ++cls.upper_hits;
    }
  }
}

inline EvalReport make_report(const EvalTally& tally, const Vocabulary& vocab, std::string mode, std::string split) {
  EvalReport report;
  report.mode = std::move(mode);
  report.split = std::move(split);
  double acc_sum = 0.0, upper_sum = 0.0;
  for (std::size_t l = 0; l < tally.classes.size(); ++l) {
    const auto& c = tally.classes[l];
    if (c.instances == 0) continue;
    const double n = static_cast<double>(c.instances);
    report.per_class.push_back({vocab[l], static_cast<double>(c.hits) / n, c.instances});
    acc_sum += static_cast<double>(c.hits) / n;
    upper_sum += static_cast<double>(c.upper_hits) / n;
  }
  if (!report.per_class.empty()) {
    report.macro_accuracy = acc_sum / static_cast<double>(report.per_class.size());
    report.upper_bound = upper_sum / static_cast<double>(report.per_class.size());
  }
  return report;
}

/// Scores explicit predictions; predictions[s] belongs to segments[s].
inline EvalReport box_accuracy(const std::vector<SegmentSample>& segments,
                               const std::vector<std::vector<Prediction>>& predictions, const Vocabulary& vocab) {
  if (predictions.size() != segments.size()) throw ContractError("one prediction list per segment is required");
  EvalTally tally(vocab.size());
  for (std::size_t s = 0; s < segments.size(); ++s) tally_segment(segments[s], predictions[s], tally);
  return make_report(tally, vocab, "", "");
}

/// Proposal-ceiling accuracy over the same instances.
inline double upper_bound(const std::vector<SegmentSample>& segments, const Vocabulary& vocab) {
  return box_accuracy(segments, std::vector<std::vector<Prediction>>(segments.size()), vocab).upper_bound;
}

/// Converts per-frame proposal choices ([k][frame]) into boxes.
inline std::vector<Prediction> to_predictions(const SegmentSample& seg, const std::vector<std::vector<std::size_t>>& chosen) {
  std::vector<Prediction> out;
  for (std::size_t k = 0; k < chosen.size(); ++k)
    for (std::size_t f = 0; f < chosen[k].size(); ++f) out.push_back({k, f, seg.frames[f].proposals[chosen[k][f]].box});
  return out;
}

/// Grounds every segment with `params` and scores the result. Segments are
/// split into contiguous ranges across `workers` threads; the tallies are
/// merged afterwards, so the report does not depend on the worker count.
inline EvalReport evaluate(const ModelParams& params, const std::vector<SegmentSample>& segments, const Vocabulary& vocab,
                           std::size_t feature_dim, std::size_t workers = 1, std::string mode = "",
                           std::string split = "") {
  workers = std::max<std::size_t>(1, std::min(workers, segments.size()));
  std::vector<EvalTally> partial(workers, EvalTally(vocab.size()));
  auto run = [&](std::size_t w) {
    const std::size_t begin = w * segments.size() / workers;
    const std::size_t end = (w + 1) * segments.size() / workers;
    for (std::size_t s = begin; s < end; ++s) {
      tally_segment(segments[s], to_predictions(segments[s], predict(params, segments[s], feature_dim)), partial[w]);
    }
  };
  if (workers == 1) {
    run(0);
  } else {
    std::vector<std::thread> threads;
    for (std::size_t w = 0; w < workers; ++w) threads.emplace_back(run, w);
    for (auto& t : threads) t.join();
  }
  EvalTally total(vocab.size());
  for (const auto& p : partial) total.merge(p);
  return make_report(total, vocab, std::move(mode), std::move(split));
}

/// Accuracy of choosing a uniformly random proposal, averaged over `draws`
/// independent draws.
inline double random_baseline(const std::vector<SegmentSample>& segments, const Vocabulary& vocab, Rng& rng,
                              std::size_t draws = 1) {
  double total = 0.0;
  for (std::size_t d = 0; d < draws; ++d) {
    std::vector<std::vector<Prediction>> preds;
    for (const auto& seg : segments) {
      std::uniform_int_distribution<std::size_t> pick(0, seg.proposal_count() - 1);
      std::vector<std::vector<std::size_t>> chosen(seg.query_labels.size(), std::vector<std::size_t>(seg.frames.size()));
      for (auto& row : chosen)
        for (auto& c : row) c = pick(rng);
      preds.push_back(to_predictions(seg, chosen));
    }
    total += box_accuracy(segments, preds, vocab).macro_accuracy;
  }
  return total / static_cast<double>(draws);
}

/// Classes ranked by acc_a − acc_b, largest first; ties keep the order in
/// which the classes appear in the reports.
inline std::vector<std::pair<std::string, double>> per_class_delta(const EvalReport& a, const EvalReport& b) {
  if (a.per_class.size() != b.per_class.size()) throw ReportError("reports cover different class sets");
  std::vector<std::pair<std::string, double>> out;
  for (std::size_t i = 0; i < a.per_class.size(); ++i) {
    if (a.per_class[i].label != b.per_class[i].label) {
      throw ReportError("vocabulary mismatch: '" + a.per_class[i].label + "' vs '" + b.per_class[i].label + "'");
    }
    out.emplace_back(a.per_class[i].label, a.per_class[i].accuracy - b.per_class[i].accuracy);
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& x, const auto& y) { return x.second > y.second; });
  return out;
}

inline nlohmann::ordered_json report_to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["mode"] = r.mode;
  j["split"] = r.split;
  j["macro_accuracy"] = r.macro_accuracy;
  j["upper_bound"] = r.upper_bound;
  nlohmann::ordered_json per_class = nlohmann::ordered_json::object();
  for (const auto& c : r.per_class) {
    nlohmann::ordered_json e;
    e["acc"] = c.accuracy;
    e["n"] = c.instances;
    per_class[c.label] = std::move(e);
  }
  j["per_class"] = std::move(per_class);
  return j;
}

inline EvalReport report_from_json(const nlohmann::ordered_json& j) {
  try {
    EvalReport r;
    r.mode = j.at("mode").get<std::string>();
    r.split = j.at("split").get<std::string>();
    r.macro_accuracy = j.at("macro_accuracy").get<double>();
    r.upper_bound = j.at("upper_bound").get<double>();
    for (const auto& [label, e] : j.at("per_class").items()) {
      r.per_class.push_back({label, e.at("acc").get<double>(), e.at("n").get<std::size_t>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(std::string("malformed report: ") + e.what());
  }
}

inline void save_report(const std::filesystem::path& path, const EvalReport& r) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw ReportError("cannot write " + path.string());
  out << report_to_json(r).dump(2) << '\n';
}

inline EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ReportError("cannot open report " + path.string());
  nlohmann::ordered_json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ReportError(path.string() + ": " + e.what());
  }
  return report_from_json(j);
}

}  // namespace groundbox
