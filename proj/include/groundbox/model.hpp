#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "groundbox/attention.hpp"
#include "groundbox/config.hpp"
#include "groundbox/data.hpp"
#include "groundbox/encoders.hpp"
#include "groundbox/grounding.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

using NamedTensor = std::pair<std::string, Tensor>;

/// Every learnable weight. Tensors are shared handles, so the lists returned
/// by named() alias the model's own storage.
struct ModelParams {
  QueryEncoder query;
  ProposalEncoder proposal;
  MultiHeadAttentionStack attention;
  LanguageConfidenceHead language;

  static ModelParams create(const GroundingConfig& cfg, Rng& rng) {
    cfg.validate();
    ModelParams p;
    p.query = QueryEncoder::create(cfg.vocab_size, cfg.embed_dim, rng);
    p.proposal = ProposalEncoder::create(cfg.feature_dim, cfg.embed_dim, cfg.dropout, rng);
    p.attention = MultiHeadAttentionStack::create(cfg.embed_dim, cfg.attention(), rng);
    p.language = LanguageConfidenceHead::create(cfg.snippets, cfg.embed_dim, rng);
    return p;
  }

  std::vector<NamedTensor> encoder_params() const {
    return {{"query.weight", query.weight},
            {"proposal.w1", proposal.w1},
            {"proposal.b1", proposal.b1},
            {"proposal.w2", proposal.w2},
            {"proposal.b2", proposal.b2}};
  }

  std::vector<NamedTensor> language_params() const {
    std::vector<NamedTensor> out{{"attention.in_w", attention.in_w}, {"attention.in_b", attention.in_b}};
    for (std::size_t l = 0; l < attention.layers.size(); ++l) {
      const auto& L = attention.layers[l];
      const std::string p = "attention.layer" + std::to_string(l) + ".";
      for (auto& [name, t] : std::vector<NamedTensor>{
               {"wq", L.wq}, {"bq", L.bq}, {"wk", L.wk}, {"bk", L.bk}, {"wv", L.wv},
               {"bv", L.bv}, {"wo", L.wo}, {"bo", L.bo}, {"norm1_gain", L.norm1_gain},
               {"norm1_bias", L.norm1_bias}, {"ff1_w", L.ff1_w}, {"ff1_b", L.ff1_b},
               {"ff2_w", L.ff2_w}, {"ff2_b", L.ff2_b}, {"norm2_gain", L.norm2_gain},
               {"norm2_bias", L.norm2_bias}}) {
        out.emplace_back(p + name, t);
      }
    }
    out.emplace_back("attention.out_w", attention.out_w);
    out.emplace_back("attention.out_b", attention.out_b);
    out.emplace_back("language.weight", language.weight);
    out.emplace_back("language.bias", language.bias);
    return out;
  }

  std::vector<NamedTensor> named() const {
    auto out = encoder_params();
    for (auto& p : language_params()) out.push_back(std::move(p));
    return out;
  }

  /// The parameters a loss mode actually touches.
  std::vector<NamedTensor> trainable(LossMode mode) const {
    return uses_language_branch(mode) ? named() : encoder_params();
  }

  std::vector<std::vector<double>> snapshot() const {
    std::vector<std::vector<double>> out;
    for (const auto& [_, t] : named()) out.emplace_back(t.data().begin(), t.data().end());
    return out;
  }

  void restore(const std::vector<std::vector<double>>& values) {
    auto params = named();
    if (values.size() != params.size()) throw ShapeError("snapshot does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto dst = params[i].second.mutable_data();
      if (dst.size() != values[i].size()) throw ShapeError("snapshot size mismatch for " + params[i].first);
      std::copy(values[i].begin(), values[i].end(), dst.begin());
    }
  }

  void zero_grad() {
    for (auto& [_, t] : named()) t.zero_grad();
  }
};

/// One segment with its frames already sampled.
struct PreparedSegment {
  Tensor features;  // [T·N × D_in], frames stacked in order
  std::vector<std::size_t> labels;
  std::size_t frames = 0;
};

/// A positive segment plus the negatives it is ranked against. Visual
/// negatives index Batch::segments; sentence negatives are label lists.
struct TrainingExample {
  std::size_t positive = 0;
  std::vector<std::size_t> visual_negatives;
  std::vector<std::vector<std::size_t>> sentence_negatives;
};

struct Batch {
  std::vector<PreparedSegment> segments;
  std::vector<TrainingExample> examples;
};

struct ForwardOptions {
  bool training = false;  // enables dropout
  Rng* rng = nullptr;
};

namespace detail {

inline Rng& forward_rng(const ForwardOptions& opts) {
  static thread_local Rng fallback(0);
  return opts.rng ? *opts.rng : fallback;
}

}  // namespace detail

/// Loss of one example under `mode`, given the proposal encodings of every
/// segment in the batch.
namespace detail {

inline std::pair<std::vector<SimilarityCube>, std::vector<SimilarityCube>> negative_cubes(
    const ModelParams& params, const Batch& batch, const std::vector<Tensor>& encoded, const TrainingExample& ex,
    const Tensor& queries) {
  const auto& pos = batch.segments.at(ex.positive);
  std::vector<SimilarityCube> visual, sentence;
  for (auto v : ex.visual_negatives) {
    visual.push_back(similarity_cube_packed(queries, encoded.at(v), batch.segments.at(v).frames));
  }
  for (const auto& labels : ex.sentence_negatives) {
    sentence.push_back(similarity_cube_packed(encode_queries(labels, params.query), encoded[ex.positive], pos.frames));
  }
  return {std::move(visual), std::move(sentence)};
}

}  // namespace detail

/// The weighted modes as separable per-frame terms; DVSA has none.
inline WeightedTerms segment_terms(const ModelParams& params, const GroundingConfig& cfg, const Batch& batch,
                                   const std::vector<Tensor>& encoded, const TrainingExample& ex, LossMode mode,
                                   const ForwardOptions& opts) {
  if (mode == LossMode::DVSA) throw ContractError("DVSA has no per-frame weighted terms");
  const auto& pos = batch.segments.at(ex.positive);
  auto queries = encode_queries(pos.labels, params.query);
  auto cube = similarity_cube_packed(queries, encoded[ex.positive], pos.frames);
  auto [visual, sentence] = detail::negative_cubes(params, batch, encoded, ex, queries);

  std::vector<Tensor> confidences, ranking;
  for (std::size_t t = 0; t < pos.frames; ++t) {
    confidences.push_back(confidence(cube, t));
    ranking.push_back(frame_ranking_loss(cube, t, visual, sentence, cfg.margin));
  }
  if (mode == LossMode::LossWeighting) return weighted_terms(confidences, ranking, cfg.lambda);

  auto attended = self_attend(queries, params.attention, opts.training, detail::forward_rng(opts));
  auto lang = language_confidence(attended, queries, params.language);
  if (mode == LossMode::ObjectInteraction) return language_weighted_terms(ranking, lang, cfg.lambda);
  return combined_terms(confidences, ranking, lang, cfg.lambda, cfg.penalty_halved_sum);
}

inline Tensor segment_loss(const ModelParams& params, const GroundingConfig& cfg, const Batch& batch,
                           const std::vector<Tensor>& encoded, const TrainingExample& ex, LossMode mode,
                           const ForwardOptions& opts) {
  if (mode != LossMode::DVSA) return weighted_objective(segment_terms(params, cfg, batch, encoded, ex, mode, opts));
  const auto& pos = batch.segments.at(ex.positive);
  auto queries = encode_queries(pos.labels, params.query);
  auto cube = similarity_cube_packed(queries, encoded[ex.positive], pos.frames);
  auto [visual, sentence] = detail::negative_cubes(params, batch, encoded, ex, queries);
  return dvsa_segment_loss(cube, visual, sentence, cfg.margin);
}

/// Mean segment loss over the batch's examples.
inline Tensor batch_loss(const ModelParams& params, const GroundingConfig& cfg, const Batch& batch, LossMode mode,
                         const ForwardOptions& opts) {
  if (batch.examples.empty()) throw ContractError("batch has no examples");
  std::vector<Tensor> encoded;
  encoded.reserve(batch.segments.size());
  for (const auto& seg : batch.segments) {
    encoded.push_back(encode_proposals(seg.features, params.proposal, opts.training, detail::forward_rng(opts)));
  }
  if (mode == LossMode::DVSA) {
    std::vector<Tensor> losses;
    for (const auto& ex : batch.examples) losses.push_back(segment_loss(params, cfg, batch, encoded, ex, mode, opts));
    return losses.size() == 1 ? losses.front() : mean(concat(losses, 0));
  }
  // One reduction for the whole batch: mean over examples of frame means.
  std::vector<Tensor> w, r, g;
  std::vector<double> coefs;
  WeightedTerms terms;
  const double per_example = 1.0 / static_cast<double>(batch.examples.size());
  for (const auto& ex : batch.examples) {
    terms = segment_terms(params, cfg, batch, encoded, ex, mode, opts);
    w.push_back(terms.weight);
    r.push_back(terms.ranking);
    g.push_back(terms.log_arg);
    coefs.insert(coefs.end(), terms.weight.size(), per_example / static_cast<double>(terms.weight.size()));
  }
  terms.weight = concat(w, 0);
  terms.ranking = concat(r, 0);
  terms.log_arg = concat(g, 0);
  return weighted_objective(terms, std::move(coefs));
}

/// Assembles a training batch: samples T frames per segment, pairs every
/// positive with frame-aligned visual negatives drawn from the other batch
/// members and with label-disjoint sentence negatives from `pool`. A
/// positive with no eligible sentence negative is dropped with a warning.
inline Batch make_batch(std::span<const SegmentSample> pool, std::span<const std::size_t> members,
                        const GroundingConfig& cfg, std::size_t feature_dim, bool training, Rng& rng) {
  Batch batch;
  auto prepare = [&](const SegmentSample& seg) {
    auto frames = sample_frames(seg.frames.size(), cfg.frames, training, rng);
    batch.segments.push_back({pack_features(seg, frames, feature_dim), seg.query_labels, frames.size()});
  };
  for (auto m : members) prepare(pool[m]);
  const std::size_t count = members.size();
  for (std::size_t b = 0; b < count; ++b) {
    TrainingExample ex;
    ex.positive = b;
    try {
      for (std::size_t j = 0; j < cfg.negatives; ++j) {
        ex.sentence_negatives.push_back(sample_negative_sentence(pool, pool[members[b]], rng));
      }
    } catch (const SamplingError& e) {
      warn(std::string(e.what()) + "; skipping it in this batch");
      continue;
    }
    for (std::size_t j = 0; j < cfg.negatives; ++j) {
      if (count > 1) {
        std::uniform_int_distribution<std::size_t> pick(0, count - 2);
        std::size_t other = pick(rng);
        if (other >= b) ++other;
        ex.visual_negatives.push_back(other);
      } else {
        if (pool.size() < 2) throw SamplingError("need at least two segments for a visual negative");
        std::uniform_int_distribution<std::size_t> pick(0, pool.size() - 2);
        std::size_t other = pick(rng);
        if (other >= members[b]) ++other;
        prepare(pool[other]);
        ex.visual_negatives.push_back(batch.segments.size() - 1);
      }
    }
    batch.examples.push_back(std::move(ex));
  }
  return batch;
}

/// Chosen proposal per (query k, frame) over every frame of the segment,
/// indexed [k][frame]. Runs without recording gradients or dropout.
inline std::vector<std::vector<std::size_t>> predict(const ModelParams& params, const SegmentSample& seg,
                                                     std::size_t feature_dim) {
  NoGradGuard no_grad;
  Rng unused(0);
  std::vector<std::size_t> all(seg.frames.size());
  std::iota(all.begin(), all.end(), 0);
  auto encoded = encode_proposals(pack_features(seg, all, feature_dim), params.proposal, false, unused);
  auto queries = encode_queries(seg.query_labels, params.query);
  return ground_inference(similarity_cube_packed(queries, encoded, all.size()));
}

}  // namespace groundbox
