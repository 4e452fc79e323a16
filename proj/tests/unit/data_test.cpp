#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "lava/data/synthetic.hpp"
#include "support/test_util.hpp"

namespace lava::data {
namespace {

using testing::TempDir;

SyntheticConfig small_config() {
  SyntheticConfig cfg;
  cfg.n_samples = 40;
  cfg.n_classes = 4;
  cfg.video_len = 3;
  cfg.video_dim = 5;
  cfg.audio_len = 2;
  cfg.audio_dim = 4;
  cfg.text_len = 4;
  cfg.vocab = 16;
  cfg.test_clips = 3;
  return cfg;
}

TEST(Synthetic, NoiseFreeClassesAreIdentical) {
  TempDir dir("noisefree");
  auto cfg = small_config();
  cfg.availability = 1.0;
  cfg.video_noise = 0.0;
  cfg.audio_noise = 0.0;
  generate_synthetic(cfg, dir.path());
  Dataset ds = load_dataset(dir / "manifest.jsonl");
  ASSERT_EQ(ds.samples.size(), 40u);
  for (const auto& a : ds.samples) {
    ASSERT_TRUE(a.has_audio());
    ASSERT_TRUE(a.has_text());
    for (const auto& b : ds.samples) {
      if (a.label != b.label) continue;
      EXPECT_TRUE(testing::bitwise_equal(a.video_clips[0].data(), b.video_clips[0].data()));
      EXPECT_TRUE(testing::bitwise_equal(a.audio_clips[0].data(), b.audio_clips[0].data()));
    }
  }
}

TEST(Synthetic, DefaultAvailabilityNearThreeHundredOfFourEighty) {
  TempDir dir("avail");
  SyntheticConfig cfg;
  auto summary = generate_synthetic(cfg, dir.path());
  EXPECT_EQ(summary.samples, 480u);
  const double mean = 480 * 0.625;
  const double sd = std::sqrt(480 * 0.625 * 0.375);
  EXPECT_LE(std::abs(static_cast<double>(summary.with_audio) - mean), 4 * sd);
  EXPECT_EQ(summary.with_audio, summary.with_text);
  EXPECT_EQ(summary.per_split[0], 336u);
  EXPECT_EQ(summary.per_split[1], 48u);
  EXPECT_EQ(summary.per_split[2], 48u);
  EXPECT_EQ(summary.per_split[3], 48u);

  Dataset ds = load_dataset(summary.manifest);
  EXPECT_EQ(ds.n_classes, 8u);
  for (const auto& s : ds.samples) {
    EXPECT_EQ(s.has_audio(), s.has_text());
    EXPECT_EQ(s.clip_count(), s.split == Split::kTrain ? 1u : 4u);
    if (s.has_audio()) {
      EXPECT_EQ(s.audio_clips.size(), s.clip_count());
    }
  }
}

TEST(Synthetic, IndependentAvailabilitySwitch) {
  TempDir dir("indep");
  auto cfg = small_config();
  cfg.n_samples = 200;
  cfg.independent_availability = true;
  generate_synthetic(cfg, dir.path());
  Dataset ds = load_dataset(dir / "manifest.jsonl");
  std::size_t mismatched = 0;
  for (const auto& s : ds.samples) mismatched += s.has_audio() != s.has_text() ? 1 : 0;
  EXPECT_GT(mismatched, 0u);
}

TEST(Synthetic, SameSeedGivesIdenticalFiles) {
  TempDir a("det_a"), b("det_b"), c("det_c");
  auto cfg = small_config();
  generate_synthetic(cfg, a.path());
  generate_synthetic(cfg, b.path());
  cfg.seed = 43;
  generate_synthetic(cfg, c.path());
  std::size_t files = 0;
  for (const auto& entry : std::filesystem::recursive_directory_iterator(a.path())) {
    if (!entry.is_regular_file()) continue;
    const auto rel = std::filesystem::relative(entry.path(), a.path());
    EXPECT_EQ(testing::read_bytes(entry.path()), testing::read_bytes(b.path() / rel)) << rel;
    ++files;
  }
  EXPECT_GT(files, 40u);
  EXPECT_NE(testing::read_bytes(a / "video/s00.ltf"), testing::read_bytes(c / "video/s00.ltf"));
}

TEST(Synthetic, TextUsesClassVocabulary) {
  TempDir dir("text");
  auto cfg = small_config();
  cfg.availability = 1.0;
  cfg.text_informativeness = 1.0;
  generate_synthetic(cfg, dir.path());
  Dataset ds = load_dataset(dir / "manifest.jsonl");
  const std::size_t sub = cfg.class_vocab();
  for (const auto& s : ds.samples) {
    for (std::size_t id : *s.text) {
      EXPECT_GE(id, s.label * sub);
      EXPECT_LT(id, (s.label + 1) * sub);
    }
  }
}

TEST(Synthetic, RejectsBadConfig) {
  TempDir dir("badcfg");
  auto cfg = small_config();
  cfg.availability = 1.5;
  EXPECT_THROW(generate_synthetic(cfg, dir.path()), ConfigError);
  cfg = small_config();
  cfg.vocab = 2;
  EXPECT_THROW(generate_synthetic(cfg, dir.path()), ConfigError);
}

TEST(Manifest, MissingFileFailsAtOpen) {
  TempDir dir("missing");
  generate_synthetic(small_config(), dir.path());
  std::filesystem::remove(dir / "video/s07.ltf");
  try {
    load_manifest(dir / "manifest.jsonl");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("s07"), std::string::npos);
  }
}

TEST(Manifest, SchemaViolations) {
  TempDir dir("schema");
  ltf::save(dir / "v.ltf", Tensor::zeros({2, 3}));
  auto expect_format = [&](const std::string& line) {
    testing::write_text(dir / "m.jsonl", line + "\n");
    EXPECT_THROW(load_manifest(dir / "m.jsonl"), FormatError) << line;
  };
  expect_format(R"({"id":"a","label":0,"split":"train","video_path":"v.ltf","extra":1})");
  expect_format(R"({"id":"a","label":-1,"split":"train","video_path":"v.ltf"})");
  expect_format(R"({"id":"a","label":0,"split":"val","video_path":"v.ltf"})");
  expect_format(R"({"id":"a","label":0,"split":"train","audio_path":"v.ltf"})");
  expect_format(R"({"id":"a","label":0,"split":"train","video_path":"v.ltf")");
  testing::write_text(dir / "m.jsonl", R"({"id":"a","label":0,"split":"train","video_path":"v.ltf","audio_path":null})"
                                       "\n");
  auto m = load_manifest(dir / "m.jsonl");
  ASSERT_EQ(m.records.size(), 1u);
  EXPECT_FALSE(m.records[0].audio_path.has_value());
}

TEST(Manifest, ShapeMismatchesRejected) {
  TempDir dir("shapes");
  ltf::save(dir / "v1.ltf", Tensor::zeros({2, 3}));
  ltf::save(dir / "v2.ltf", Tensor::zeros({2, 4}));
  ltf::save(dir / "flat.ltf", Tensor::zeros({6}));
  ltf::save(dir / "frac.ltf", Tensor::vector({1.0, 2.5}));
  auto load_lines = [&](const std::string& lines) {
    testing::write_text(dir / "m.jsonl", lines);
    return load_dataset(dir / "m.jsonl");
  };
  EXPECT_THROW(load_lines(R"({"id":"a","label":0,"split":"train","video_path":"v1.ltf"}
{"id":"b","label":1,"split":"train","video_path":"v2.ltf"}
)"),
               FormatError);
  EXPECT_THROW(load_lines(R"({"id":"a","label":0,"split":"train","video_path":"flat.ltf"})"), FormatError);
  EXPECT_THROW(load_lines(R"({"id":"a","label":0,"split":"train","video_path":"v1.ltf","text_path":"frac.ltf"})"),
               FormatError);
}

TEST(Manifest, RoundTripsRecords) {
  TempDir dir("roundtrip");
  auto summary = generate_synthetic(small_config(), dir.path());
  auto m = load_manifest(summary.manifest);
  write_manifest(dir / "copy.jsonl", m.records);
  EXPECT_EQ(testing::read_bytes(summary.manifest), testing::read_bytes(dir / "copy.jsonl"));
}

class Batching : public ::testing::Test {
 protected:
  void SetUp() override {
    generate_synthetic(small_config(), dir_.path());
    ds_ = load_dataset(dir_ / "manifest.jsonl");
  }
  static std::vector<std::size_t> order(const std::vector<Batch>& batches) {
    std::vector<std::size_t> out;
    for (const auto& b : batches) out.insert(out.end(), b.indices.begin(), b.indices.end());
    return out;
  }
  TempDir dir_{"batching"};
  Dataset ds_;
};

TEST_F(Batching, DeterministicPerEpoch) {
  const auto a = make_batches(ds_, Split::kTrain, 8, 7, 0);
  const auto b = make_batches(ds_, Split::kTrain, 8, 7, 0);
  const auto c = make_batches(ds_, Split::kTrain, 8, 7, 1);
  EXPECT_EQ(order(a), order(b));
  EXPECT_NE(order(a), order(c));
}

TEST_F(Batching, CoversSplitOnceWithSmallerTail) {
  const auto batches = make_batches(ds_, Split::kTrain, 8, 1, 0);
  const auto train = ds_.split_indices(Split::kTrain);
  ASSERT_EQ(train.size(), 28u);
  ASSERT_EQ(batches.size(), 4u);
  EXPECT_EQ(batches.back().size(), 4u);
  auto seen = order(batches);
  EXPECT_EQ(std::set<std::size_t>(seen.begin(), seen.end()), std::set<std::size_t>(train.begin(), train.end()));
  for (const auto& b : batches) {
    for (std::size_t i = 0; i < b.size(); ++i) {
      EXPECT_EQ(b.labels[i], ds_.samples[b.indices[i]].label);
      EXPECT_EQ(b.features[i].has_audio(), ds_.samples[b.indices[i]].has_audio());
    }
  }
}

TEST_F(Batching, RejectsSingletonTrainingBatches) {
  EXPECT_THROW(make_batches(ds_, Split::kTrain, 1, 0, 0), ConfigError);
  EXPECT_NO_THROW(make_batches(ds_, Split::kTest1, 1, 0, 0, false));
  EXPECT_THROW(make_batches(ds_, Split::kTrain, 0, 0, 0, false), ConfigError);
}

TEST_F(Batching, ClipAccess) {
  const auto test = ds_.split_indices(Split::kTest1);
  const Sample& s = ds_.samples[test.at(0)];
  ASSERT_EQ(s.clip_count(), 3u);
  EXPECT_FALSE(testing::bitwise_equal(s.features(0).video.data(), s.features(2).video.data()));
  EXPECT_THROW(s.features(3), ConfigError);
}

TEST(Augment, ZeroSigmaIsIdentity) {
  Rng rng(1);
  Tensor x = testing::random_tensor({4, 3}, rng, false);
  EXPECT_TRUE(testing::bitwise_equal(augment_audio(x, 0.0, 9).data(), x.data()));
  EXPECT_THROW(augment_audio(x, -0.1, 9), ConfigError);
}

TEST(Augment, NoiseIsSeededAndCentred) {
  const std::size_t n = 100000;
  const double sigma = 0.3;
  Tensor x = Tensor::zeros({n / 100, 100});
  Tensor a = augment_audio(x, sigma, 77);
  Tensor b = augment_audio(x, sigma, 77);
  Tensor c = augment_audio(x, sigma, 78);
  EXPECT_TRUE(testing::bitwise_equal(a.data(), b.data()));
  EXPECT_FALSE(testing::bitwise_equal(a.data(), c.data()));
  double mean = 0.0, sq = 0.0;
  for (double v : a.data()) mean += v, sq += v * v;
  mean /= n;
  EXPECT_LT(std::abs(mean), 4 * sigma / std::sqrt(static_cast<double>(n)));
  EXPECT_NEAR(std::sqrt(sq / n), sigma, 0.01);
}

}  // namespace
}  // namespace lava::data
