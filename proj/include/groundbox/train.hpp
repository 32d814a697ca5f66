#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "groundbox/config.hpp"
#include "groundbox/data.hpp"
#include "groundbox/eval.hpp"
#include "groundbox/model.hpp"
#include "groundbox/optim.hpp"

namespace groundbox {

struct TrainLogEntry {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_accuracy = 0.0;
  bool operator==(const TrainLogEntry&) const = default;
};

/// Everything that evolves during training.
struct TrainerState {
  ModelParams params;
  NesterovSgd optimizer;
  std::size_t epoch = 0;
  Rng rng;
};

struct TrainResult {
  GroundingConfig config;
  ModelParams params;  // best validation epoch
  std::vector<TrainLogEntry> log;
  double best_val_accuracy = 0.0;
  std::size_t best_epoch = 0;
};

/// Copy of `cfg` with the shape fields taken from the data.
inline GroundingConfig config_for_data(GroundingConfig cfg, const Dataset& data) {
  cfg.vocab_size = data.vocab.size();
  cfg.feature_dim = data.feature_dim;
  for (auto s : {Split::Train, Split::Val, Split::Test}) {
    if (!data.split(s).empty()) {
      cfg.proposals = data.split(s).front().proposal_count();
      break;
    }
  }
  // Synthetic-only knobs must not block training on other data.
  cfg.referring = 0;
  cfg.min_objects = cfg.max_objects = 1;
  cfg.validate();
  return cfg;
}

/// Runs one epoch over the train split and returns the mean batch loss.
inline double train_epoch(TrainerState& state, const GroundingConfig& cfg, const Dataset& data) {
  const auto& pool = data.train;
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), state.rng);
  double loss_sum = 0.0;
  std::size_t batches = 0;
  ForwardOptions opts{true, &state.rng};
  for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
    const std::size_t end = std::min(order.size(), start + cfg.batch);
    std::span<const std::size_t> members(order.data() + start, end - start);
    auto batch = make_batch(pool, members, cfg, data.feature_dim, true, state.rng);
    if (batch.examples.empty()) continue;
    auto loss = batch_loss(state.params, cfg, batch, cfg.mode, opts);
    if (!std::isfinite(loss.item())) {
      auto op = first_nonfinite_op(loss);
      throw NumericError("non-finite training loss at epoch " + std::to_string(state.epoch + 1) +
                         "; first offending op: " + (op.empty() ? std::string("unknown") : op));
    }
    backward(loss);
    state.optimizer.step();
    state.optimizer.zero_grad();
    loss_sum += loss.item();
    ++batches;
  }
  ++state.epoch;
  return batches ? loss_sum / static_cast<double>(batches) : 0.0;
}

/// Trains for cfg.epochs, evaluating on the val split after every epoch and
/// keeping the parameters with the highest macro accuracy. Without a val
/// split the final epoch wins.
inline TrainResult train(GroundingConfig cfg, const Dataset& data,
                         const std::function<void(const TrainLogEntry&)>& on_epoch = {}) {
  cfg = config_for_data(cfg, data);
  if (data.train.size() < 2) throw DataError("training needs at least two train segments");
  Rng rng(cfg.seed);
  auto params = ModelParams::create(cfg, rng);
  TrainerState state{params, NesterovSgd(params.trainable(cfg.mode), cfg.lr, cfg.momentum), 0, std::move(rng)};

  TrainResult result{cfg, params, {}, -std::numeric_limits<double>::infinity(), 0};
  std::vector<std::vector<double>> best;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    TrainLogEntry entry;
    entry.train_loss = train_epoch(state, cfg, data);
    entry.epoch = state.epoch;
    entry.val_accuracy = data.val.empty()
                             ? std::numeric_limits<double>::quiet_NaN()
                             : evaluate(state.params, data.val, data.vocab, data.feature_dim, cfg.workers).macro_accuracy;
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
    const bool better = data.val.empty() || entry.val_accuracy > result.best_val_accuracy;
    if (better) {
      result.best_val_accuracy = entry.val_accuracy;
      result.best_epoch = entry.epoch;
      best = state.params.snapshot();
    }
  }
  if (!best.empty()) state.params.restore(best);
  result.params = state.params;
  return result;
}

inline void write_trainlog(const std::filesystem::path& path, const std::vector<TrainLogEntry>& log) {
  std::ofstream out(path);
  if (!out) throw IntegrityError("cannot write " + path.string());
  out << "epoch,train_loss,val_accuracy\n";
  out.precision(17);
  for (const auto& e : log) out << e.epoch << ',' << e.train_loss << ',' << e.val_accuracy << '\n';
}

}  // namespace groundbox
