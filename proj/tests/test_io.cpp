#include <gtest/gtest.h>

#include <filesystem>

#include "groundbox/dataset_io.hpp"
#include "test_util.hpp"

using namespace groundbox;
using testutil::TempDir;

namespace {

Dataset tiny_dataset(std::uint64_t seed = 9) {
  GroundingConfig cfg;
  cfg.vocab_size = 6;
  cfg.feature_dim = 4;
  cfg.proposals = 4;
  cfg.segment_frames = 6;
  cfg.train_segments = 5;
  cfg.val_segments = 3;
  cfg.test_segments = 3;
  return generate_synthetic(cfg, seed);
}

}  // namespace

TEST(DatasetIoOracle, RoundTripIsExact) {
  TempDir dir;
  auto data = tiny_dataset();
  save_dataset(dir.path(), data);
  for (const char* f : {"vocabulary.txt", "segments.jsonl", "features.bin", "features.json"})
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  EXPECT_EQ(load_dataset(dir.path()), data);
}

TEST(DatasetIoOracle, FeatureFileSizeMatchesRows) {
  TempDir dir;
  auto data = tiny_dataset();
  save_dataset(dir.path(), data);
  const std::size_t rows = (5 + 3 + 3) * 6 * 4;
  EXPECT_EQ(std::filesystem::file_size(dir / "features.bin"), rows * 4 * sizeof(float));
}

TEST(DatasetIoOracle, EmptySegmentList) {
  TempDir dir;
  save_segments(dir / "segments.jsonl", {}, 4);
  EXPECT_TRUE(load_segments(dir / "segments.jsonl", 6).empty());
}

TEST(DatasetIoOracle, SegmentListRoundTrip) {
  TempDir dir;
  auto data = tiny_dataset();
  save_segments(dir / "val.jsonl", data.val, data.feature_dim);
  EXPECT_EQ(load_segments(dir / "val.jsonl", data.vocab.size()), data.val);
}

TEST(DatasetIoErrors, TruncatedFeaturesNameByteCounts) {
  TempDir dir;
  save_dataset(dir.path(), tiny_dataset());
  const auto size = std::filesystem::file_size(dir / "features.bin");
  std::filesystem::resize_file(dir / "features.bin", size - 4);
  try {
    load_dataset(dir.path());
    FAIL() << "expected IntegrityError";
  } catch (const IntegrityError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(size - 4)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(size)), std::string::npos) << msg;
  }
}

TEST(DatasetIoErrors, MissingFeatureFile) {
  TempDir dir;
  save_dataset(dir.path(), tiny_dataset());
  std::filesystem::remove(dir / "features.bin");
  EXPECT_THROW(load_dataset(dir.path()), IntegrityError);
}

TEST(DatasetIoErrors, MalformedLineReportsLineNumber) {
  TempDir dir;
  save_dataset(dir.path(), tiny_dataset());
  auto text = testutil::read_file(dir / "segments.jsonl");
  const auto second = text.find('\n') + 1;
  text.insert(second, "{\"segment_id\": \"broken\"\n");
  testutil::write_file(dir / "segments.jsonl", text);
  try {
    load_dataset(dir.path());
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("segments.jsonl:2"), std::string::npos) << e.what();
  }
}

TEST(DatasetIoErrors, LabelOutsideVocabulary) {
  TempDir dir;
  auto data = tiny_dataset();
  data.train[0].query_labels = {5};
  save_dataset(dir.path(), data);
  try {
    load_segments(dir / "segments.jsonl", 5);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("segments.jsonl:1"), std::string::npos) << e.what();
  }
}

TEST(DatasetIoErrors, FeatureRowOutOfRange) {
  TempDir dir;
  auto data = tiny_dataset();
  save_segments(dir / "s.jsonl", {data.train[0]}, data.feature_dim);
  testutil::write_file(dir / "features.json", "{\"rows\": 1, \"dim\": 4}\n");
  std::filesystem::resize_file(dir / "features.bin", 16);
  EXPECT_THROW(load_segments(dir / "s.jsonl", data.vocab.size()), IntegrityError);
}

TEST(DatasetIoProperty, SavingTwiceIsByteIdentical) {
  TempDir a, b;
  save_dataset(a.path(), tiny_dataset(4));
  save_dataset(b.path(), tiny_dataset(4));
  for (const char* f : {"vocabulary.txt", "segments.jsonl", "features.bin", "features.json"})
    EXPECT_EQ(testutil::read_file(a / f), testutil::read_file(b / f)) << f;
}
