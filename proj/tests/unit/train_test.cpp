#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "lava/train/trainer.hpp"
#include "support/test_util.hpp"

namespace lava {
namespace {

using testing::TempDir;

Config tiny_config() {
  Config c;
  c.data.n_samples = 40;
  c.data.n_classes = 4;
  c.data.video_len = 3;
  c.data.video_dim = 6;
  c.data.audio_len = 3;
  c.data.audio_dim = 5;
  c.data.text_len = 4;
  c.data.vocab = 16;
  c.data.test_clips = 2;
  c.model.n_layers = 1;
  c.model.d_model = 8;
  c.model.n_heads = 2;
  c.model.proj_dim = 4;
  c.model.max_text_len = 8;
  c.train.epochs = 2;
  c.train.batch_size = 8;
  c.train.seed = 7;
  c.train.log_wall_time = false;
  return c;
}

struct Fixture {
  TempDir dir;
  Config cfg;
  data::Dataset ds;

  explicit Fixture(const std::string& tag, Config c = tiny_config())
      : dir(tag), cfg(std::move(c)) {
    data::generate_synthetic(cfg.data, dir / "data");
    ds = data::load_dataset(dir / "data" / "manifest.jsonl");
  }
};

TrainOptions until(std::uint64_t step, std::function<void(const StepLog&)> on_step = {}) {
  TrainOptions o;
  o.stop_at_step = step;
  o.on_step = std::move(on_step);
  return o;
}

TrainOptions logging(std::function<void(const StepLog&)> on_step) {
  TrainOptions o;
  o.on_step = std::move(on_step);
  return o;
}

TrainOptions saving(std::filesystem::path ckpt) {
  TrainOptions o;
  o.checkpoint = std::move(ckpt);
  return o;
}

std::vector<double> flat_params(const EncoderStack& m) {
  std::vector<double> out;
  for (const auto& [name, p] : m.parameters()) out.insert(out.end(), p.data().begin(), p.data().end());
  return out;
}

// ---- config ----

TEST(Config, EmptyObjectGivesDefaults) {
  Config c = parse_config("{}");
  EXPECT_EQ(c.model.d_model, 64u);
  EXPECT_EQ(c.train.epochs, 25u);
  EXPECT_EQ(c.train.batch_size, 32u);
  EXPECT_DOUBLE_EQ(c.loss.tau, 0.07);
  EXPECT_DOUBLE_EQ(c.optim.lr_max, 1e-3);
  EXPECT_DOUBLE_EQ(c.eval.probe_lr, 1e-4);
  EXPECT_EQ(c.eval.probe_epochs, 50u);
  EXPECT_FALSE(c.train.seed.has_value());
  EXPECT_THROW(c.seed(), ConfigError);
}

TEST(Config, ParsesEverySection) {
  Config c = parse_config(R"({"data": {"n_samples": 100, "availability": 0.5},
    "model": {"d_model": 16, "n_heads": 2},
    "loss": {"tau": 0.1, "terms": ["av", "avt"], "weights": {"avt": 2.0}},
    "optim": {"lr_max": 0.01, "warmup_steps": 3},
    "train": {"epochs": 3, "seed": 9},
    "eval": {"mode": "audio+video", "splits": "1"}})");
  EXPECT_EQ(c.data.n_samples, 100u);
  EXPECT_DOUBLE_EQ(c.data.availability, 0.5);
  EXPECT_EQ(c.model.d_model, 16u);
  EXPECT_DOUBLE_EQ(c.loss.tau, 0.1);
  EXPECT_TRUE(c.loss.is_enabled(LossTerm::kAV));
  EXPECT_FALSE(c.loss.is_enabled(LossTerm::kVT));
  EXPECT_TRUE(c.loss.is_enabled(LossTerm::kAVT));
  EXPECT_DOUBLE_EQ(c.loss.weight(LossTerm::kAVT), 2.0);
  EXPECT_DOUBLE_EQ(c.loss.weight(LossTerm::kAV), 1.0);
  EXPECT_EQ(c.optim.warmup_steps, 3u);
  EXPECT_EQ(c.seed(), 9u);
  EXPECT_EQ(c.eval.mode, "audio+video");
}

TEST(Config, ResolvedJsonRoundTrips) {
  Config c = tiny_config();
  c.loss.enabled = {true, false, true};
  c.loss.weights = {0.5, 1.0, 3.0};
  const std::string once = to_json(c).dump();
  const std::string twice = to_json(parse_config(once)).dump();
  EXPECT_EQ(once, twice);
}

TEST(Config, UnknownKeysAreRejected) {
  EXPECT_THROW(parse_config(R"({"model": {"d_modle": 8}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"training": {}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"loss": {"weights": {"at": 1}}})"), ConfigError);
  try {
    parse_config(R"({"model": {"d_modle": 8}})");
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("model.d_modle"), std::string::npos);
  }
}

TEST(Config, WrongTypesAndRangesAreRejected) {
  EXPECT_THROW(parse_config(R"({"model": {"d_model": "big"}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"d_model": -4}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"model": {"d_model": 10, "n_heads": 4}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"loss": {"tau": 0}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"loss": {"terms": []}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"loss": {"terms": ["av", "xy"]}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"train": {"batch_size": 1}})"), ConfigError);
  EXPECT_THROW(parse_config(R"({"eval": {"mode": "audio"}})"), ConfigError);
  EXPECT_THROW(parse_config("[1, 2]"), ConfigError);
}

TEST(Config, SyntaxErrorReportsLineAndColumn) {
  try {
    parse_config("{\n  \"model\": {\n    \"d_model\": 8,,\n  }\n}", "run.json");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("run.json:3:"), std::string::npos) << msg;
  }
}

TEST(Config, MissingFileIsIoError) { EXPECT_THROW(load_config("/nonexistent/lava.json"), IoError); }

TEST(Config, LossTermLists) {
  EXPECT_EQ(parse_loss_terms("av,vt,avt"), (std::array<bool, 3>{true, true, true}));
  EXPECT_EQ(parse_loss_terms("vt"), (std::array<bool, 3>{false, true, false}));
  EXPECT_EQ(loss_terms_string({true, false, true}), "av,avt");
  EXPECT_THROW(parse_loss_terms("av,,vt"), ConfigError);
  EXPECT_THROW(parse_loss_terms("AV"), ConfigError);
}

// ---- checkpoint archive ----

TEST(Checkpoint, SaveLoadSaveIsBitwiseIdentical) {
  Fixture f("ckpt_rt");
  Trainer tr(f.cfg, f.ds);
  tr.run(until(2));
  tr.save(f.dir / "a.lavc");
  Checkpoint ck = load_checkpoint(f.dir / "a.lavc");
  EXPECT_EQ(ck.step, 2u);
  EXPECT_EQ(ck.adam_step, 2u);
  save_checkpoint(f.dir / "b.lavc", ck.config, ck.model(), nullptr, ck.epoch, ck.step);
  EncoderStack m = ck.model();
  optim::Adam opt2(m.parameters(), ck.config.adam_config());
  ck.restore_optimizer(opt2);
  save_checkpoint(f.dir / "c.lavc", ck.config, m, &opt2, ck.epoch, ck.step);
  EXPECT_EQ(testing::read_bytes(f.dir / "a.lavc"), testing::read_bytes(f.dir / "c.lavc"));
  EXPECT_TRUE(testing::bitwise_equal(flat_params(m), flat_params(tr.model())));
}

TEST(Checkpoint, WeightsOnlyCheckpointLoads) {
  Fixture f("ckpt_wo");
  EncoderStack m(f.cfg.model_config(), 3);
  save_checkpoint(f.dir / "w.lavc", f.cfg, m, nullptr, 0, 0);
  Checkpoint ck = load_checkpoint(f.dir / "w.lavc");
  EXPECT_TRUE(ck.adam_m.empty());
  EXPECT_TRUE(testing::bitwise_equal(flat_params(ck.model()), flat_params(m)));
  optim::Adam opt(m.parameters());
  EXPECT_THROW(ck.restore_optimizer(opt), FormatError);
}

TEST(Checkpoint, CorruptArchivesAreFormatErrors) {
  Config cfg = tiny_config();
  EncoderStack m(cfg.model_config(), 1);
  const auto good = encode_checkpoint(cfg, m, nullptr, 0, 0);
  EXPECT_NO_THROW(decode_checkpoint(good, "good"));

  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(bad_magic, "magic"), FormatError);

  for (std::size_t cut : {std::size_t{3}, std::size_t{9}, good.size() / 2, good.size() - 1}) {
    std::vector<std::uint8_t> trunc(good.begin(), good.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_THROW(decode_checkpoint(trunc, "trunc"), FormatError) << cut;
  }

  auto trailing = good;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing, "trailing"), FormatError);

  std::vector<ArchiveEntry> dup = decode_archive(good, "good");
  dup.push_back(dup.back());
  EXPECT_THROW(decode_archive(encode_archive(dup), "dup"), FormatError);

  std::vector<ArchiveEntry> missing = decode_archive(good, "good");
  missing.pop_back();
  EXPECT_THROW(decode_checkpoint(encode_archive(missing), "missing"), FormatError);

  std::vector<ArchiveEntry> extra = decode_archive(good, "good");
  extra.push_back({"stray", ltf::Blob{ltf::DType::kF64, Shape{}, {1.0}, {}}});
  EXPECT_THROW(decode_checkpoint(encode_archive(extra), "extra"), FormatError);

  std::vector<ArchiveEntry> reshaped = decode_archive(good, "good");
  reshaped[3].blob.shape = Shape{reshaped[3].blob.f64.size()};
  EXPECT_THROW(decode_checkpoint(encode_archive(reshaped), "reshaped"), FormatError);
}

TEST(Checkpoint, MissingFileIsIoError) { EXPECT_THROW(load_checkpoint("/nonexistent/x.lavc"), IoError); }

TEST(Checkpoint, SnapshotAndLogPaths) {
  EXPECT_EQ(snapshot_path("out/run.lavc", 3), std::filesystem::path("out/run.epoch3.lavc"));
  EXPECT_EQ(log_path("out/run.lavc"), std::filesystem::path("out/run.log.jsonl"));
}

// ---- trainer ----

TEST(Trainer, OneStepTwiceIsBitwiseIdentical) {
  Fixture f("det");
  Trainer a(f.cfg, f.ds), b(f.cfg, f.ds);
  std::vector<StepLog> la, lb;
  a.run(until(1, [&](const StepLog& s) { la.push_back(s); }));
  b.run(until(1, [&](const StepLog& s) { lb.push_back(s); }));
  ASSERT_EQ(la.size(), 1u);
  EXPECT_TRUE(la[0].updated);
  EXPECT_EQ(to_json(la[0]).dump(), to_json(lb[0]).dump());
  EXPECT_TRUE(testing::bitwise_equal(flat_params(a.model()), flat_params(b.model())));
  Trainer fresh(f.cfg, f.ds);
  EXPECT_FALSE(testing::bitwise_equal(flat_params(a.model()), flat_params(fresh.model())));
}

TEST(Trainer, DifferentSeedsDiffer) {
  Fixture f("seeds");
  Config other = f.cfg;
  other.train.seed = 8;
  Trainer a(f.cfg, f.ds), b(other, f.ds);
  EXPECT_FALSE(testing::bitwise_equal(flat_params(a.model()), flat_params(b.model())));
}

TEST(Trainer, StepLogFieldsAndSchedule) {
  Fixture f("log");
  Trainer tr(f.cfg, f.ds);
  std::vector<StepLog> logs;
  tr.run(logging([&](const StepLog& s) { logs.push_back(s); }));
  // 28 training samples, batch 8 -> 4 batches per epoch
  ASSERT_EQ(tr.steps_per_epoch(), 4u);
  ASSERT_EQ(logs.size(), 8u);
  EXPECT_TRUE(tr.finished());
  EXPECT_EQ(tr.epoch(), 2u);
  const optim::CosineSchedule sched{1e-3, 0.0, 8, 0};
  for (std::size_t s = 0; s < logs.size(); ++s) {
    EXPECT_EQ(logs[s].step, s);
    EXPECT_EQ(logs[s].epoch, s / 4);
    EXPECT_DOUBLE_EQ(logs[s].lr, sched.lr_at(s));
    EXPECT_EQ(logs[s].wall_ms, 0.0);
    const auto j = to_json(logs[s]);
    for (const char* key : {"step", "epoch", "lr", "L_AV", "L_VT", "L_AVT", "total", "skipped_terms", "wall_ms"}) {
      EXPECT_TRUE(j.contains(key)) << key;
    }
    EXPECT_TRUE(std::isfinite(logs[s].total));
  }
}

TEST(Trainer, ResumeMatchesContinuousRun) {
  Config c = tiny_config();
  c.train.epochs = 3;
  Fixture f("resume", c);
  Trainer full(f.cfg, f.ds);
  std::vector<StepLog> lf;
  full.run(until(7, [&](const StepLog& s) { lf.push_back(s); }));

  Trainer first(f.cfg, f.ds);
  first.run(until(2));
  first.save(f.dir / "mid.lavc");
  Trainer second(load_checkpoint(f.dir / "mid.lavc"), f.ds);
  EXPECT_EQ(second.step(), 2u);
  std::vector<StepLog> ls;
  second.run(until(7, [&](const StepLog& s) { ls.push_back(s); }));
  ASSERT_EQ(ls.size(), 5u);
  for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(to_json(ls[k]).dump(), to_json(lf[k + 2]).dump());
  EXPECT_TRUE(testing::bitwise_equal(flat_params(full.model()), flat_params(second.model())));
  for (std::size_t k = 0; k < full.optimizer().parameters().size(); ++k) {
    EXPECT_TRUE(testing::bitwise_equal(full.optimizer().first_moment(k), second.optimizer().first_moment(k)));
    EXPECT_TRUE(testing::bitwise_equal(full.optimizer().second_moment(k), second.optimizer().second_moment(k)));
  }
}

TEST(Trainer, FinalCheckpointAndSnapshots) {
  Config c = tiny_config();
  c.train.epochs = 3;
  c.train.checkpoint_every = 1;
  Fixture f("snap", c);
  Trainer tr(f.cfg, f.ds);
  tr.run(saving(f.dir / "run.lavc"));
  EXPECT_TRUE(std::filesystem::exists(f.dir / "run.lavc"));
  EXPECT_TRUE(std::filesystem::exists(f.dir / "run.epoch1.lavc"));
  EXPECT_TRUE(std::filesystem::exists(f.dir / "run.epoch2.lavc"));
  EXPECT_FALSE(std::filesystem::exists(f.dir / "run.epoch3.lavc"));
  Checkpoint snap = load_checkpoint(f.dir / "run.epoch1.lavc");
  EXPECT_EQ(snap.epoch, 1u);
  EXPECT_EQ(snap.step, tr.steps_per_epoch());
  Checkpoint fin = load_checkpoint(f.dir / "run.lavc");
  EXPECT_EQ(fin.step, tr.total_steps());
  EXPECT_TRUE(testing::bitwise_equal(flat_params(fin.model()), flat_params(tr.model())));
}

TEST(Trainer, AudioVisualOnlyRunsWithoutText) {
  Config c = tiny_config();
  c.loss.enabled = {true, false, false};
  c.data.availability = 1.0;
  Fixture f("av_only", c);
  Trainer tr(f.cfg, f.ds);
  std::vector<StepLog> logs;
  tr.run(until(3, [&](const StepLog& s) { logs.push_back(s); }));
  for (const auto& s : logs) {
    EXPECT_TRUE(s.updated);
    EXPECT_GT(s.terms[0], 0.0);
    EXPECT_EQ(s.terms[1], 0.0);
    EXPECT_EQ(s.terms[2], 0.0);
  }
}

TEST(Trainer, AllSkippedBatchesDoNotUpdateAndWarn) {
  Config c = tiny_config();
  c.loss.enabled = {true, false, false};
  c.data.availability = 0.0;
  Fixture f("skipped", c);
  Trainer tr(f.cfg, f.ds);
  const auto before = flat_params(tr.model());
  std::vector<std::uint64_t> warned;
  TrainOptions opts;
  opts.on_warning = [&](std::uint64_t e, const std::string&) { warned.push_back(e); };
  TrainSummary s = tr.run(opts);
  EXPECT_EQ(s.updates, 0u);
  EXPECT_EQ(s.skipped_batches, tr.total_steps());
  EXPECT_EQ(warned, (std::vector<std::uint64_t>{0, 1}));
  EXPECT_TRUE(testing::bitwise_equal(before, flat_params(tr.model())));
}

TEST(Trainer, DatasetWidthMismatchIsConfigError) {
  Fixture f("mismatch");
  Config other = f.cfg;
  other.data.video_dim = 7;
  EXPECT_THROW(Trainer(other, f.ds), ConfigError);
  Config noseed = f.cfg;
  noseed.train.seed.reset();
  EXPECT_THROW(Trainer(noseed, f.ds), ConfigError);
}

TEST(Trainer, NumericFailureAbortsAndSavesLastGoodState) {
  Fixture f("nan");
  Trainer tr(f.cfg, f.ds);
  tr.run(until(1));
  const auto good = flat_params(tr.model());
  data::Dataset poisoned = f.ds;
  for (auto& s : poisoned.samples) {
    auto v = s.video_clips[0].mutable_data();
    v[0] = std::numeric_limits<double>::infinity();
  }
  tr.save(f.dir / "pre.lavc");
  Trainer bad(load_checkpoint(f.dir / "pre.lavc"), poisoned);
  try {
    bad.run(saving(f.dir / "abort.lavc"));
    FAIL() << "expected TrainingAborted";
  } catch (const TrainingAborted& e) {
    EXPECT_EQ(e.step(), 1u);
  }
  EXPECT_TRUE(testing::bitwise_equal(good, flat_params(bad.model())));
  Checkpoint saved = load_checkpoint(f.dir / "abort.lavc");
  EXPECT_EQ(saved.step, 1u);
  EXPECT_TRUE(testing::bitwise_equal(good, flat_params(saved.model())));
}

TEST(Trainer, LossDecreasesOnSyntheticData) {
  Config c = tiny_config();
  c.data.n_samples = 120;
  c.data.class_separation = 1.5;
  c.data.video_noise = 0.3;
  c.data.audio_noise = 0.3;
  c.data.availability = 1.0;
  c.train.epochs = 8;
  c.optim.lr_max = 3e-3;
  Fixture f("decrease", c);
  Trainer tr(f.cfg, f.ds);
  std::vector<double> totals;
  tr.run(logging([&](const StepLog& s) { totals.push_back(s.total); }));
  ASSERT_GE(totals.size(), 20u);
  double first = 0.0, last = 0.0;
  for (std::size_t k = 0; k < 10; ++k) {
    first += totals[k];
    last += totals[totals.size() - 10 + k];
  }
  EXPECT_LT(last, first);
}

}  // namespace
}  // namespace lava
