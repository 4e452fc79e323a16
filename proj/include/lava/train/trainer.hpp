// SPDX-License-Identifier: Apache-2.0
#pragma once

// Pre-training loop: batch -> embed_batch -> loss_total -> backward -> Adam
// with the cosine schedule. Global step s covers epoch s / B, batch s % B,
// where B is the number of training batches per epoch.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/data/dataset.hpp"
#include "lava/loss/losses.hpp"
#include "lava/train/checkpoint.hpp"

namespace lava {

/// A step failed numerically; the model holds the last good state.
class TrainingAborted : public NumericError {
 public:
  TrainingAborted(const std::string& what, std::uint64_t step)
      : NumericError(what), step_(step) {}
  std::uint64_t step() const { return step_; }

 private:
  std::uint64_t step_;
};

struct StepLog {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double lr = 0.0;
  std::array<double, 3> terms = {0.0, 0.0, 0.0};
  double total = 0.0;
  std::vector<LossTerm> skipped;
  double wall_ms = 0.0;
  bool updated = false;
};

inline nlohmann::ordered_json to_json(const StepLog& s) {
  nlohmann::ordered_json skipped = nlohmann::ordered_json::array();
  for (LossTerm t : s.skipped) skipped.push_back(to_string(t));
  return {{"step", s.step},         {"epoch", s.epoch},       {"lr", s.lr},
          {"L_AV", s.terms[0]},     {"L_VT", s.terms[1]},     {"L_AVT", s.terms[2]},
          {"total", s.total},       {"skipped_terms", skipped}, {"wall_ms", s.wall_ms}};
}

/// `<dir>/<stem>.epoch<N><ext>`, the per-epoch snapshot beside a checkpoint path.
inline std::filesystem::path snapshot_path(const std::filesystem::path& ckpt, std::uint64_t epoch) {
  auto out = ckpt;
  out.replace_filename(ckpt.stem().string() + ".epoch" + std::to_string(epoch) + ckpt.extension().string());
  return out;
}

/// `<dir>/<stem>.log.jsonl`.
inline std::filesystem::path log_path(const std::filesystem::path& ckpt) {
  auto out = ckpt;
  out.replace_filename(ckpt.stem().string() + ".log.jsonl");
  return out;
}

struct TrainOptions {
  std::filesystem::path checkpoint;  // final checkpoint; empty writes nothing
  std::function<void(const StepLog&)> on_step;
  std::function<void(std::uint64_t epoch, const std::string&)> on_warning;
  std::optional<std::uint64_t> stop_at_step;  // pause once this many steps are complete
};

struct TrainSummary {
  std::uint64_t steps_run = 0;
  std::uint64_t updates = 0;
  std::uint64_t skipped_batches = 0;
  double last_loss = 0.0;
};

class Trainer {
 public:
  Trainer(Config cfg, const data::Dataset& ds)
      : cfg_(std::move(cfg)), ds_(ds), model_(init_model(cfg_)), opt_(model_.parameters(), cfg_.adam_config()) {
    setup();
  }

  /// Resumes from a checkpoint, restoring parameters, Adam state and counters.
  Trainer(const Checkpoint& ck, const data::Dataset& ds)
      : cfg_(ck.config), ds_(ds), model_(ck.model()), opt_(model_.parameters(), cfg_.adam_config()) {
    ck.restore_optimizer(opt_);
    step_ = ck.step;
    epoch_ = ck.epoch;
    setup();
  }

  const Config& config() const { return cfg_; }
  const EncoderStack& model() const { return model_; }
  const optim::Adam& optimizer() const { return opt_; }
  std::uint64_t step() const { return step_; }
  std::uint64_t epoch() const { return epoch_; }
  std::uint64_t steps_per_epoch() const { return batches_per_epoch_; }
  std::uint64_t total_steps() const { return batches_per_epoch_ * cfg_.train.epochs; }
  bool finished() const { return step_ >= total_steps(); }

  void save(const std::filesystem::path& path) const { save_checkpoint(path, cfg_, model_, &opt_, epoch_, step_); }

  TrainSummary run(const TrainOptions& opts = {}) {
    TrainSummary summary;
    const std::uint64_t total = total_steps();
    const std::uint64_t stop = opts.stop_at_step ? std::min(*opts.stop_at_step, total) : total;
    const std::uint64_t seed = cfg_.seed();
    const optim::CosineSchedule schedule{cfg_.optim.lr_max, cfg_.optim.lr_min, total, cfg_.optim.warmup_steps};
    schedule.validate();

    std::optional<std::uint64_t> loaded_epoch;
    std::vector<data::Batch> batches;
    std::uint64_t skipped_in_epoch = 0;
    while (step_ < stop) {
      const std::uint64_t epoch = step_ / batches_per_epoch_;
      const std::uint64_t b = step_ % batches_per_epoch_;
      if (loaded_epoch != epoch) {
        batches = data::make_batches(ds_, data::Split::kTrain, cfg_.train.batch_size, seed, epoch);
        loaded_epoch = epoch;
        if (b == 0) skipped_in_epoch = 0;
      }
      const auto start = std::chrono::steady_clock::now();
      StepLog log;
      log.step = step_;
      log.epoch = epoch;
      log.lr = schedule.lr_at(step_);
      try {
        auto features = augmented(batches[b], seed, epoch, b);
        EmbeddingSet e = model_.embed_batch(features);
        LossBreakdown loss = loss_total(e, cfg_.loss);
        log.terms = loss.terms;
        log.total = loss.value();
        log.skipped = loss.skipped;
        if (!loss.all_skipped()) {
          loss.total.backward();
          opt_.step(log.lr);
          log.updated = true;
        }
        opt_.zero_grad();
      } catch (const NumericError& err) {
        opt_.zero_grad();
        std::string what = "numeric failure at step " + std::to_string(step_) + ": " + err.what();
        if (!opts.checkpoint.empty()) {
          save(opts.checkpoint);
          what += "; last good state saved to " + opts.checkpoint.string();
        }
        throw TrainingAborted(what, step_);
      }
      if (cfg_.train.log_wall_time) {
        log.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
      }
      ++step_;
      ++summary.steps_run;
      summary.last_loss = log.total;
      if (log.updated) {
        ++summary.updates;
      } else {
        ++summary.skipped_batches;
        ++skipped_in_epoch;
      }
      if (opts.on_step) opts.on_step(log);

      if (b + 1 == batches_per_epoch_) {
        epoch_ = epoch + 1;
        if (2 * skipped_in_epoch > batches_per_epoch_ && opts.on_warning) {
          opts.on_warning(epoch, std::to_string(skipped_in_epoch) + " of " + std::to_string(batches_per_epoch_) +
                                     " batches had no usable loss term; check modality availability");
        }
        const std::size_t every = cfg_.train.checkpoint_every;
        if (!opts.checkpoint.empty() && every != 0 && epoch_ % every == 0 && step_ < total) {
          save(snapshot_path(opts.checkpoint, epoch_));
        }
      }
    }
    if (finished() && !opts.checkpoint.empty()) save(opts.checkpoint);
    return summary;
  }

 private:
  static EncoderStack init_model(const Config& cfg) {
    cfg.validate();
    return EncoderStack(cfg.model_config(), cfg.seed());
  }

  void setup() {
    cfg_.validate();
    if (ds_.video_dim != cfg_.data.video_dim) {
      throw ConfigError("dataset video width " + std::to_string(ds_.video_dim) + " differs from data.video_dim " +
                        std::to_string(cfg_.data.video_dim));
    }
    if (ds_.audio_dim != 0 && ds_.audio_dim != cfg_.data.audio_dim) {
      throw ConfigError("dataset audio width " + std::to_string(ds_.audio_dim) + " differs from data.audio_dim " +
                        std::to_string(cfg_.data.audio_dim));
    }
    if (ds_.max_token >= cfg_.data.vocab) {
      throw ConfigError("dataset token id " + std::to_string(ds_.max_token) + " outside data.vocab " +
                        std::to_string(cfg_.data.vocab));
    }
    const std::size_t n = ds_.split_indices(data::Split::kTrain).size();
    if (n == 0) throw ConfigError("dataset has no training samples");
    batches_per_epoch_ = (n + cfg_.train.batch_size - 1) / cfg_.train.batch_size;
  }

  std::vector<ModalityFeatures> augmented(const data::Batch& batch, std::uint64_t seed, std::uint64_t epoch,
                                          std::uint64_t b) const {
    auto features = batch.features;
    for (std::size_t i = 0; i < features.size(); ++i) {
      if (features[i].audio) {
        features[i].audio = data::augment_audio(*features[i].audio, cfg_.train.augment_sigma,
                                                derive_seed(seed, {0xa0d1, epoch, b, i}));
      }
    }
    return features;
  }

  Config cfg_;
  const data::Dataset& ds_;
  EncoderStack model_;
  optim::Adam opt_;
  std::uint64_t step_ = 0;
  std::uint64_t epoch_ = 0;
  std::uint64_t batches_per_epoch_ = 0;
};

}  // namespace lava
