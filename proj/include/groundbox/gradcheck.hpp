#pragma once

// Central finite-difference verification of reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "groundbox/config.hpp"
#include "groundbox/data.hpp"
#include "groundbox/model.hpp"
#include "groundbox/tensor.hpp"

namespace groundbox {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  std::size_t checked = 0;
};

/// Compares backward() against (f(θ+h) − f(θ−h)) / 2h for every coordinate
/// of every parameter. `loss_fn` must be deterministic (no dropout).
/// Relative error is |a − n| / max(|a|, |n|, 1e-8).
inline GradCheckResult finite_diff_check(const std::function<Tensor()>& loss_fn, const std::vector<NamedTensor>& params,
                                         double step) {
  for (auto [_, t] : params) t.zero_grad();
  backward(loss_fn());
  std::vector<std::vector<double>> analytic;
  for (const auto& [_, t] : params) {
    analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                       : std::vector<double>(t.size(), 0.0));
  }
  GradCheckResult result;
  NoGradGuard no_grad;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Tensor t = params[p].second;
    auto values = t.mutable_data();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double plus = loss_fn().item();
      values[i] = saved - step;
      const double minus = loss_fn().item();
      values[i] = saved;
      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[p][i];
      const double err = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-8});
      ++result.checked;
      if (err > result.max_relative_error || result.worst_param.empty()) {
        result.max_relative_error = std::max(err, result.max_relative_error);
        result.worst_param = params[p].first;
        result.worst_index = i;
        result.analytic = a;
        result.numeric = numeric;
      }
    }
  }
  for (auto [_, t] : params) t.zero_grad();
  return result;
}

/// Small instance used to check every loss mode: d=8, O=2, T=4, T'=2, N=3
/// unless the caller overrides them.
inline GroundingConfig gradcheck_config() {
  GroundingConfig cfg;
  cfg.embed_dim = 8;
  cfg.frames = 4;
  cfg.snippets = 2;
  cfg.proposals = 3;
  cfg.min_objects = cfg.max_objects = 2;
  cfg.vocab_size = 8;
  cfg.feature_dim = 5;
  cfg.segment_frames = 4;
  cfg.attn_hidden = 12;
  cfg.sigma = 0.3;
  cfg.train_segments = 6;
  cfg.val_segments = 0;
  cfg.test_segments = 0;
  cfg.seed = 7;
  return cfg;
}

struct ModeGradCheck {
  LossMode mode;
  GradCheckResult result;
};

/// Builds a fixed two-example batch from synthetic data and checks the
/// gradient of every loss mode against finite differences.
inline std::vector<ModeGradCheck> gradcheck_all_modes(const GroundingConfig& cfg, double step = 1e-5) {
  auto data = generate_synthetic(cfg, cfg.seed);
  Rng rng(cfg.seed + 1);
  auto params = ModelParams::create(cfg, rng);
  const std::vector<std::size_t> members{0, 1};
  auto batch = make_batch(data.train, members, cfg, cfg.feature_dim, true, rng);
  if (batch.examples.empty()) throw SamplingError("gradcheck instance has no usable examples");
  std::vector<ModeGradCheck> out;
  for (auto mode : kAllModes) {
    auto fn = [&] { return batch_loss(params, cfg, batch, mode, ForwardOptions{false, nullptr}); };
    out.push_back({mode, finite_diff_check(fn, params.trainable(mode), step)});
  }
  return out;
}

}  // namespace groundbox
