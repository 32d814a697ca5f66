#include <gtest/gtest.h>

#include <cmath>

#include "groundbox/checkpoint.hpp"
#include "groundbox/optim.hpp"
#include "groundbox/train.hpp"
#include "test_util.hpp"

using namespace groundbox;
using testutil::TempDir;

namespace {

GroundingConfig tiny_train_config() {
  GroundingConfig cfg;
  cfg.vocab_size = 8;
  cfg.feature_dim = 6;
  cfg.proposals = 5;
  cfg.segment_frames = 10;
  cfg.train_segments = 12;
  cfg.val_segments = 4;
  cfg.test_segments = 4;
  cfg.embed_dim = 8;
  cfg.attn_hidden = 12;
  cfg.epochs = 2;
  cfg.batch = 4;
  cfg.seed = 3;
  return cfg;
}

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

// Optimiser

TEST(NesterovOracle, ZeroMomentumIsPlainSgd) {
  auto w = Tensor::vector({1.0, -2.0}, true);
  NesterovSgd opt({{"w", w}}, 0.1, 0.0);
  backward(sum(mul(w, w)));
  opt.step();
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 2.0, 1e-15);
  EXPECT_NEAR(w[1], -2.0 + 0.1 * 4.0, 1e-15);
}

TEST(NesterovOracle, FirstTwoStepsByHand) {
  auto w = Tensor::scalar(1.0, true);
  NesterovSgd opt({{"w", w}}, 0.1, 0.9);
  // f = w², g = 2w.
  backward(mul(w, w));
  opt.step();
  // v = -0.2, w = 1 + 0.9·(-0.2) - 0.2 = 0.62
  EXPECT_NEAR(w.item(), 0.62, 1e-15);
  opt.zero_grad();
  backward(mul(w, w));
  opt.step();
  // g = 1.24, v = -0.18 - 0.124 = -0.304, w = 0.62 - 0.2736 - 0.124
  EXPECT_NEAR(opt.velocity()[0][0], -0.304, 1e-15);
  EXPECT_NEAR(w.item(), 0.2224, 1e-15);
}

TEST(NesterovOracle, ZeroGradientIsFixedPoint) {
  auto w = Tensor::vector({0.5, 3.0}, true);
  NesterovSgd opt({{"w", w}}, 0.1, 0.9);
  for (int i = 0; i < 5; ++i) {
    backward(scale(sum(w), 0.0));
    opt.step();
    opt.zero_grad();
  }
  EXPECT_EQ(values(w), (std::vector<double>{0.5, 3.0}));
}

TEST(NesterovOracle, ZeroLearningRateIsNoOp) {
  auto w = Tensor::vector({0.5, 3.0}, true);
  NesterovSgd opt({{"w", w}}, 0.0, 0.9);
  backward(sum(mul(w, w)));
  opt.step();
  EXPECT_EQ(values(w), (std::vector<double>{0.5, 3.0}));
}

TEST(NesterovErrors, MissingGradient) {
  auto w = Tensor::vector({1.0}, true);
  NesterovSgd opt({{"w", w}}, 0.1, 0.9);
  try {
    opt.step();
    FAIL();
  } catch (const ContractError& e) {
    EXPECT_NE(std::string(e.what()).find("w"), std::string::npos);
  }
}

TEST(NesterovProperty, ConvergesOnQuadratic) {
  auto w = Tensor::vector({3.0, -4.0, 0.5}, true);
  NesterovSgd opt({{"w", w}}, 0.05, 0.9);
  for (int i = 0; i < 200; ++i) {
    backward(sum(mul(w, w)));
    opt.step();
    opt.zero_grad();
  }
  for (double v : w.data()) EXPECT_LT(std::abs(v), 1e-3);
}

// Training loop

TEST(TrainProperty, SameSeedGivesIdenticalLog) {
  auto cfg = tiny_train_config();
  auto data = generate_synthetic(cfg, cfg.seed);
  auto a = train(cfg, data);
  auto b = train(cfg, data);
  ASSERT_EQ(a.log.size(), 2u);
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(a.params.snapshot(), b.params.snapshot());
  for (const auto& e : a.log) EXPECT_TRUE(std::isfinite(e.train_loss));
}

TEST(TrainProperty, EveryModeTrains) {
  auto cfg = tiny_train_config();
  cfg.epochs = 1;
  auto data = generate_synthetic(cfg, cfg.seed);
  for (auto mode : kAllModes) {
    cfg.mode = mode;
    auto r = train(cfg, data);
    EXPECT_TRUE(std::isfinite(r.log[0].train_loss)) << mode_name(mode);
    EXPECT_GE(r.best_val_accuracy, 0.0);
  }
}

TEST(TrainProperty, KeepsBestValidationEpoch) {
  auto cfg = tiny_train_config();
  cfg.epochs = 3;
  auto data = generate_synthetic(cfg, cfg.seed);
  auto r = train(cfg, data);
  double best = -1.0;
  for (const auto& e : r.log) best = std::max(best, e.val_accuracy);
  EXPECT_EQ(r.best_val_accuracy, best);
  EXPECT_EQ(evaluate(r.params, data.val, data.vocab, data.feature_dim).macro_accuracy, best);
}

TEST(TrainErrors, TooFewTrainSegments) {
  auto cfg = tiny_train_config();
  auto data = generate_synthetic(cfg, cfg.seed);
  data.train.resize(1);
  EXPECT_THROW(train(cfg, data), DataError);
}

TEST(TrainLog, CsvHasHeaderAndRows) {
  TempDir dir;
  write_trainlog(dir / "trainlog.csv", {{1, 0.5, 0.25}, {2, 0.125, 0.5}});
  EXPECT_EQ(testutil::read_file(dir / "trainlog.csv"), "epoch,train_loss,val_accuracy\n1,0.5,0.25\n2,0.125,0.5\n");
}

// Checkpoints

TEST(CheckpointOracle, RoundTripIsBitIdentical) {
  TempDir dir;
  auto cfg = tiny_train_config();
  Rng rng(4);
  auto params = ModelParams::create(cfg, rng);
  save_checkpoint(dir.path(), params, cfg);
  Rng other(99);
  auto loaded = ModelParams::create(cfg, other);
  ASSERT_NE(loaded.snapshot(), params.snapshot());
  load_checkpoint(dir.path(), loaded);
  EXPECT_EQ(loaded.snapshot(), params.snapshot());
  EXPECT_EQ(config_entries(load_checkpoint_config(dir.path())), config_entries(cfg));
}

TEST(CheckpointErrors, CorruptManifest) {
  TempDir dir;
  auto cfg = tiny_train_config();
  Rng rng(4);
  auto params = ModelParams::create(cfg, rng);
  save_checkpoint(dir.path(), params, cfg);
  testutil::write_file(dir / "checkpoint.json", "{\"format\": \"groundbox-checkpoint-1\", \"par");
  EXPECT_THROW(load_checkpoint(dir.path(), params), IntegrityError);
  testutil::write_file(dir / "checkpoint.json", "{\"format\": \"something-else\"}");
  EXPECT_THROW(load_checkpoint(dir.path(), params), IntegrityError);
}

TEST(CheckpointErrors, TruncatedBinary) {
  TempDir dir;
  auto cfg = tiny_train_config();
  Rng rng(4);
  auto params = ModelParams::create(cfg, rng);
  save_checkpoint(dir.path(), params, cfg);
  std::filesystem::resize_file(dir / "checkpoint.bin", 64);
  EXPECT_THROW(load_checkpoint(dir.path(), params), IntegrityError);
}

TEST(CheckpointErrors, ShapeMismatchNamesParameter) {
  TempDir dir;
  auto cfg = tiny_train_config();
  Rng rng(4);
  save_checkpoint(dir.path(), ModelParams::create(cfg, rng), cfg);
  cfg.vocab_size = 9;
  auto wider = ModelParams::create(cfg, rng);
  try {
    load_checkpoint(dir.path(), wider);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("query.weight"), std::string::npos) << e.what();
  }
}
