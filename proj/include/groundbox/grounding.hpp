#pragma once

// Grounding math: query/proposal similarity, frame confidence and penalty,
// the margin ranking losses and the four segment-loss variants.
//
// Layout convention: queries are rows of Q[O × d], the proposals of frame t
// are rows of R_t[N × d]. Scores and losses are scalar tensors of shape [1]
// so they stay on the autodiff tape.

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "groundbox/encoders.hpp"
#include "groundbox/errors.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

inline constexpr double kLogClamp = 1e-8;

enum class LossMode { DVSA, LossWeighting, ObjectInteraction, FullModel };

inline constexpr LossMode kAllModes[] = {LossMode::DVSA, LossMode::LossWeighting,
                                         LossMode::ObjectInteraction, LossMode::FullModel};

inline std::string_view mode_name(LossMode mode) {
  switch (mode) {
    case LossMode::DVSA: return "dvsa";
    case LossMode::LossWeighting: return "loss-weight";
    case LossMode::ObjectInteraction: return "obj-interact";
    case LossMode::FullModel: return "full";
  }
  return "?";
}

/// Row label used in result tables.
inline std::string_view mode_title(LossMode mode) {
  switch (mode) {
    case LossMode::DVSA: return "DVSA";
    case LossMode::LossWeighting: return "Loss Weighting";
    case LossMode::ObjectInteraction: return "Object Interaction";
    case LossMode::FullModel: return "Full Model";
  }
  return "?";
}

inline LossMode parse_mode(std::string_view text) {
  for (auto m : kAllModes)
    if (mode_name(m) == text) return m;
  throw ConfigError("unknown loss mode '" + std::string(text) +
                    "' (expected dvsa, loss-weight, obj-interact or full)");
}

/// Whether the mode needs the self-attention stack and language head.
inline bool uses_language_branch(LossMode mode) {
  return mode == LossMode::ObjectInteraction || mode == LossMode::FullModel;
}

/// a_k^{t,i} for every query k, frame t and proposal i.
struct SimilarityCube {
  std::vector<Tensor> frames;                    // frame t -> [O × N]
  std::vector<std::vector<std::size_t>> argmax;  // frame t -> best proposal per query

  std::size_t frame_count() const { return frames.size(); }
  std::size_t objects() const { return frames.front().rows(); }
  std::size_t proposals() const { return frames.front().cols(); }
  double value(std::size_t k, std::size_t t, std::size_t i) const { return frames[t].at(k, i); }
};

namespace detail {

inline std::vector<std::size_t> argmax_rows(const Tensor& m) {
  std::vector<std::size_t> out(m.rows());
  const std::size_t n = m.cols();
  for (std::size_t k = 0; k < m.rows(); ++k) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
      if (m[k * n + i] > m[k * n + best]) best = i;
    out[k] = best;
  }
  return out;
}

inline void require_unit_interval(double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ParameterError("loss weight lambda must lie in [0, 1], got " + std::to_string(lambda));
  }
}

}  // namespace detail

/// Sigmoid(Q·Rᵀ / sqrt(d)) for one packed block of proposals: [O × M].
inline Tensor similarity_scores(const Tensor& queries, const Tensor& proposals) {
  if (queries.rank() != 2 || proposals.rank() != 2 || queries.cols() != proposals.cols()) {
    throw DimensionError("similarity: queries " + shape_str(queries.shape()) +
                         " and proposals " + shape_str(proposals.shape()) + " differ in width");
  }
  const double inv = 1.0 / std::sqrt(static_cast<double>(queries.cols()));
  return sigmoid(scale(matmul_nt(queries, proposals), inv));
}

/// Builds the cube from T frames packed as consecutive row blocks of
/// `packed` ([T·N × d]).
inline SimilarityCube similarity_cube_packed(const Tensor& queries, const Tensor& packed,
                                             std::size_t frame_count) {
  if (frame_count == 0 || packed.rank() != 2 || packed.rows() % frame_count != 0) {
    throw DataError("similarity_cube: " + shape_str(packed.shape()) + " does not split into " +
                    std::to_string(frame_count) + " equal frames");
  }
  const std::size_t n = packed.rows() / frame_count;
  auto all = similarity_scores(queries, packed);
  SimilarityCube cube;
  for (std::size_t t = 0; t < frame_count; ++t) {
    cube.frames.push_back(frame_count == 1 ? all : slice_cols(all, t * n, n));
    cube.argmax.push_back(detail::argmax_rows(cube.frames.back()));
  }
  return cube;
}

inline SimilarityCube similarity_cube(const Tensor& queries, const std::vector<Tensor>& frames) {
  if (queries.rank() != 2 || queries.rows() == 0) {
    throw ContractError("similarity_cube: need at least one query");
  }
  if (frames.empty()) throw ContractError("similarity_cube: no frames");
  SimilarityCube cube;
  const std::size_t n = frames.front().rows();
  for (const auto& r : frames) {
    if (r.rank() != 2 || r.rows() != n) {
      throw DataError("similarity_cube: ragged proposal counts (" + std::to_string(n) + " vs " +
                      shape_str(r.shape()) + ")");
    }
    cube.frames.push_back(similarity_scores(queries, r));
    cube.argmax.push_back(detail::argmax_rows(cube.frames.back()));
  }
  return cube;
}

/// S(Q, R_t) = (1/O) Σ_k max_i a_k^{t,i}.
inline Tensor frame_matching_score(const SimilarityCube& cube, std::size_t t) {
  if (t >= cube.frame_count()) {
    throw ContractError("frame index " + std::to_string(t) + " out of " +
                        std::to_string(cube.frame_count()) + " frames");
  }
  return mean(row_max(cube.frames[t]).values);
}

/// C_t: the frame-level matching score read as the likelihood that the
/// queried objects are present in frame t.
inline Tensor confidence(const SimilarityCube& cube, std::size_t t) {
  return frame_matching_score(cube, t);
}

/// Segment-level S(Q, R) with the max running over frames and proposals
/// jointly.
inline Tensor segment_matching_score(const SimilarityCube& cube) {
  if (cube.frame_count() == 1) return frame_matching_score(cube, 0);
  return mean(row_max(concat(cube.frames, 1)).values);
}

/// Per-frame pieces of a weighted loss: Σ_t c_t·[a·w_t·r_t − b·log(max(g_t, ε))].
/// Kept separate so a whole batch can be reduced in one step.
struct WeightedTerms {
  Tensor weight, ranking, log_arg;
  double rank_coef = 0.0, penalty_coef = 0.0;
};

/// Evaluates Σ_t c_t·[a·w_t·r_t − b·log(max(g_t, ε))] as a single op. Terms
/// are accumulated in extended precision and rounded once, which keeps the
/// value (and finite differences of it) within an ulp.
inline Tensor weighted_objective(const WeightedTerms& terms, std::vector<double> coefs) {
  const Tensor& w = terms.weight;
  const Tensor& r = terms.ranking;
  const Tensor& g = terms.log_arg;
  const std::size_t n = w.size();
  if (n == 0 || r.size() != n || g.size() != n || coefs.size() != n) {
    throw DimensionError("weighted objective: frame counts differ");
  }
  const double a = terms.rank_coef, b = terms.penalty_coef;
  long double acc = 0.0L;
  for (std::size_t t = 0; t < n; ++t) {
    const long double lg = std::log(static_cast<long double>(std::max(g[t], kLogClamp)));
    acc += coefs[t] * (static_cast<long double>(a) * w[t] * r[t] - b * lg);
  }
  return make_op_result({1}, {static_cast<double>(acc)}, "weighted_objective", {w, r, g},
                        [n, a, b, coefs = std::move(coefs)](detail::Node& self) {
    auto& pw = detail::parent(self, 0);
    auto& pr = detail::parent(self, 1);
    auto& pg = detail::parent(self, 2);
    const double up = self.grad[0];
    if (pw.requires_grad) {
      pw.ensure_grad();
      for (std::size_t t = 0; t < n; ++t) pw.grad[t] += up * coefs[t] * a * pr.data[t];
    }
    if (pr.requires_grad) {
      pr.ensure_grad();
      for (std::size_t t = 0; t < n; ++t) pr.grad[t] += up * coefs[t] * a * pw.data[t];
    }
    if (pg.requires_grad) {
      pg.ensure_grad();
      for (std::size_t t = 0; t < n; ++t) {
        if (pg.data[t] > kLogClamp) pg.grad[t] -= up * coefs[t] * b / pg.data[t];
      }
    }
  });
}

/// Frame mean of the weighted terms.
inline Tensor weighted_objective(const WeightedTerms& terms) {
  const std::size_t n = terms.weight.size();
  return weighted_objective(terms, std::vector<double>(n, 1.0 / static_cast<double>(n)));
}


/// D_t = -log(2·C_t); negative when C_t > 0.5.
inline Tensor penalty(const Tensor& conf) {
  return scale(log(clamp_min(scale(conf, 2.0), kLogClamp)), -1.0);
}

/// Σ_{R'} Σ_{Q'} [max(0, S(Q,R') − S(Q,R) + Δ) + max(0, S(Q',R) − S(Q,R) + Δ)]
/// given the positive score and the scores of each negative pairing.
inline Tensor ranking_loss(const Tensor& positive, std::span<const Tensor> visual_negatives,
                           std::span<const Tensor> sentence_negatives, double margin) {
  if (visual_negatives.empty() || sentence_negatives.empty()) {
    throw ContractError("ranking loss needs at least one visual and one sentence negative");
  }
  if (!(margin > 0.0)) throw ParameterError("ranking margin must be positive");
  auto hinge = [&](const Tensor& negative) {
    return relu(add_scalar(sub(negative, positive), margin));
  };
  std::vector<Tensor> visual, sentence;
  for (const auto& s : visual_negatives) visual.push_back(hinge(s));
  for (const auto& s : sentence_negatives) sentence.push_back(hinge(s));
  // The double sum counts each visual hinge once per sentence negative and
  // vice versa.
  auto v = scale(sum(concat(visual, 0)), static_cast<double>(sentence_negatives.size()));
  auto s = scale(sum(concat(sentence, 0)), static_cast<double>(visual_negatives.size()));
  return add(v, s);
}

/// L_rank^t. `visual_negatives[j]` scores the positive queries against the
/// frame-aligned negative frames; `sentence_negatives[j]` scores a negative
/// sentence against this segment's frames.
inline Tensor frame_ranking_loss(const SimilarityCube& positive, std::size_t t,
                                 const std::vector<SimilarityCube>& visual_negatives,
                                 const std::vector<SimilarityCube>& sentence_negatives,
                                 double margin) {
  std::vector<Tensor> vis, sen;
  for (const auto& c : visual_negatives) vis.push_back(frame_matching_score(c, std::min(t, c.frame_count() - 1)));
  for (const auto& c : sentence_negatives) sen.push_back(frame_matching_score(c, t));
  return ranking_loss(frame_matching_score(positive, t), vis, sen, margin);
}

/// Segment-level margin loss of the DVSA baseline.
inline Tensor dvsa_segment_loss(const SimilarityCube& positive,
                                const std::vector<SimilarityCube>& visual_negatives,
                                const std::vector<SimilarityCube>& sentence_negatives,
                                double margin) {
  std::vector<Tensor> vis, sen;
  for (const auto& c : visual_negatives) vis.push_back(segment_matching_score(c));
  for (const auto& c : sentence_negatives) sen.push_back(segment_matching_score(c));
  return ranking_loss(segment_matching_score(positive), vis, sen, margin);
}

/// (1/T) Σ_t [λ·C_t·L_rank^t + (1−λ)·D_t].
inline WeightedTerms weighted_terms(std::span<const Tensor> confidences,
                                   std::span<const Tensor> ranking_losses, double lambda) {
  detail::require_unit_interval(lambda);
  if (confidences.empty() || confidences.size() != ranking_losses.size()) {
    throw ContractError("weighted loss needs one confidence per frame ranking loss");
  }
  auto c = concat(std::vector<Tensor>(confidences.begin(), confidences.end()), 0);
  auto r = concat(std::vector<Tensor>(ranking_losses.begin(), ranking_losses.end()), 0);
  return {c, r, scale(c, 2.0), lambda, 1.0 - lambda};
}

inline Tensor weighted_segment_loss(std::span<const Tensor> confidences,
                                    std::span<const Tensor> ranking_losses, double lambda) {
  return weighted_objective(weighted_terms(confidences, ranking_losses, lambda));
}

/// Presence head over [J(q_k); q_k]: weight [T' × 2d], bias [T'].
struct LanguageConfidenceHead {
  Tensor weight, bias;

  static LanguageConfidenceHead create(std::size_t snippets, std::size_t embed_dim, Rng& rng) {
    return {init_uniform({snippets, 2 * embed_dim}, 2 * embed_dim, rng),
            init_uniform({snippets}, 2 * embed_dim, rng)};
  }

  std::size_t snippets() const { return weight.rows(); }
};

/// C_lang = (1/O) Σ_k Sigmoid(W_lang [J(q_k); q_k] + b_lang), shape [T'].
inline Tensor language_confidence(const Tensor& attended, const Tensor& queries,
                                  const LanguageConfidenceHead& head) {
  if (attended.shape() != queries.shape() || queries.rank() != 2 ||
      head.weight.cols() != 2 * queries.cols()) {
    throw DimensionError("language_confidence: J " + shape_str(attended.shape()) + ", Q " +
                         shape_str(queries.shape()) + ", head " + shape_str(head.weight.shape()));
  }
  auto joined = concat({attended, queries}, 1);
  return mean_rows(sigmoid(linear(joined, head.weight, head.bias)));
}

/// Snippet covering frame t (both 1-based): min(ceil(t / ceil(T/T')), T').
inline std::size_t snippet_index(std::size_t t, std::size_t frames, std::size_t snippets) {
  if (snippets < 1 || snippets > frames) {
    throw ContractError("snippet count " + std::to_string(snippets) + " must lie in [1, " +
                        std::to_string(frames) + "]");
  }
  if (t < 1 || t > frames) {
    throw ContractError("frame index " + std::to_string(t) + " outside [1, " +
                        std::to_string(frames) + "]");
  }
  const std::size_t span = (frames + snippets - 1) / snippets;
  return std::min((t + span - 1) / span, snippets);
}

/// Full-model loss:
/// (1/T) Σ_t [λ·½(C_t + C_lang^{t_s})·L_rank^t − (1−λ)·log(C_t + C_lang^{t_s})].
/// With `halved_sum` the log takes the mean ½(C_t + C_lang^{t_s}) instead.
inline WeightedTerms combined_terms(std::span<const Tensor> confidences,
                                   std::span<const Tensor> ranking_losses,
                                   const Tensor& language_conf, double lambda,
                                   bool halved_sum = false) {
  detail::require_unit_interval(lambda);
  const std::size_t frames = confidences.size();
  if (frames == 0 || ranking_losses.size() != frames) {
    throw ContractError("combined loss needs one confidence per frame ranking loss");
  }
  std::vector<Tensor> totals;
  for (std::size_t t = 0; t < frames; ++t) {
    const std::size_t ts = snippet_index(t + 1, frames, language_conf.size());
    totals.push_back(add(confidences[t], element(language_conf, ts - 1)));
  }
  auto total = concat(totals, 0);
  auto r = concat(std::vector<Tensor>(ranking_losses.begin(), ranking_losses.end()), 0);
  return {total, r, halved_sum ? scale(total, 0.5) : total, 0.5 * lambda, 1.0 - lambda};
}

inline Tensor combined_segment_loss(std::span<const Tensor> confidences,
                                    std::span<const Tensor> ranking_losses,
                                    const Tensor& language_conf, double lambda,
                                    bool halved_sum = false) {
  return weighted_objective(combined_terms(confidences, ranking_losses, language_conf, lambda, halved_sum));
}

/// Text-only variant: the loss-weighting form with C_lang^{t_s} standing in
/// for C_t, i.e. (1/T) Σ_t [λ·C_lang^{t_s}·L_rank^t − (1−λ)·log(2·C_lang^{t_s})].
inline WeightedTerms language_weighted_terms(std::span<const Tensor> ranking_losses,
                                            const Tensor& language_conf, double lambda) {
  const std::size_t frames = ranking_losses.size();
  if (frames == 0) throw ContractError("language-weighted loss needs at least one frame");
  std::vector<Tensor> confidences;
  for (std::size_t t = 0; t < frames; ++t) {
    confidences.push_back(element(language_conf, snippet_index(t + 1, frames, language_conf.size()) - 1));
  }
  return weighted_terms(confidences, ranking_losses, lambda);
}

inline Tensor language_weighted_segment_loss(std::span<const Tensor> ranking_losses,
                                             const Tensor& language_conf, double lambda) {
  return weighted_objective(language_weighted_terms(ranking_losses, language_conf, lambda));
}

/// Best proposal per (query k, frame t), indexed [k][t]. Lowest index wins
/// ties.
inline std::vector<std::vector<std::size_t>> ground_inference(const SimilarityCube& cube) {
  std::vector<std::vector<std::size_t>> out(cube.objects(),
                                            std::vector<std::size_t>(cube.frame_count()));
  for (std::size_t t = 0; t < cube.frame_count(); ++t)
    for (std::size_t k = 0; k < cube.objects(); ++k) out[k][t] = cube.argmax[t][k];
  return out;
}

}  // namespace groundbox
