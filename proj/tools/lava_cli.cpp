// SPDX-License-Identifier: Apache-2.0
// lava: synthetic data generation, pre-training, linear probing and gradient
// checks from the command line.
//
// Exit codes: 0 ok, 1 check failure, 2 config or usage error, 3 I/O or format
// error, 4 numeric abort.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "lava/check/suite.hpp"
#include "lava/eval/probe.hpp"
#include "lava/train/trainer.hpp"

namespace fs = std::filesystem;
using namespace lava;

namespace {

enum Exit { kOk = 0, kCheckFailed = 1, kConfig = 2, kIo = 3, kNumeric = 4 };

Config read_config(const std::string& path) { return path.empty() ? Config{} : load_config(path); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// gen-data ------------------------------------------------------------------

struct GenArgs {
  std::string config, out;
  bool force = false;
};

int gen_data(const GenArgs& a) {
  const Config cfg = read_config(a.config);
  const fs::path out = a.out;
  if (fs::exists(out)) {
    if (!fs::is_directory(out)) throw IoError(out.string() + " exists and is not a directory");
    if (!fs::is_empty(out)) {
      if (!a.force) throw IoError(out.string() + " is not empty; pass --force to overwrite");
      // only what a previous run wrote
      std::error_code ec;
      fs::remove(out / "manifest.jsonl", ec);
      for (const char* sub : {"video", "audio", "text"}) fs::remove_all(out / sub, ec);
    }
  }
  const auto s = data::generate_synthetic(cfg.data, out);
  std::cout << "manifest: " << s.manifest.string() << "\n";
  std::cout << "samples: " << s.samples << " (audio " << s.with_audio << ", text " << s.with_text << ")\n";
  std::cout << "splits:";
  for (std::size_t k = 0; k < 4; ++k) {
    std::cout << " " << data::to_string(static_cast<data::Split>(k)) << "=" << s.per_split[k];
  }
  std::cout << "\nper class:";
  for (std::size_t k = 0; k < s.per_class.size(); ++k) std::cout << " " << k << ":" << s.per_class[k];
  std::cout << "\n";
  return kOk;
}

// pretrain ------------------------------------------------------------------

struct PretrainArgs {
  std::string config, data, out, losses;
  std::optional<std::size_t> epochs;
  std::optional<std::uint64_t> seed;
};

int pretrain(const PretrainArgs& a) {
  Config cfg = read_config(a.config);
  if (!a.losses.empty()) cfg.loss.enabled = parse_loss_terms(a.losses);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.seed) cfg.train.seed = *a.seed;
  cfg.validate();
  cfg.seed();

  const auto ds = data::load_dataset(data::manifest_path(a.data));
  const fs::path ckpt = a.out;
  if (ckpt.has_parent_path()) fs::create_directories(ckpt.parent_path());
  const fs::path log_file = log_path(ckpt);
  std::ofstream log(log_file, std::ios::binary | std::ios::trunc);
  if (!log) throw IoError("cannot write " + log_file.string());
  log << nlohmann::ordered_json{{"config", to_json(cfg)}}.dump() << "\n";

  Trainer trainer(cfg, ds);
  TrainOptions opts;
  opts.checkpoint = ckpt;
  opts.on_step = [&](const StepLog& s) { log << to_json(s).dump() << "\n"; };
  opts.on_warning = [](std::uint64_t epoch, const std::string& msg) {
    std::cerr << "warning: epoch " << epoch << ": " << msg << "\n";
  };
  TrainSummary summary;
  try {
    summary = trainer.run(opts);
  } catch (const TrainingAborted& e) {
    log.flush();
    std::cerr << "error: " << e.what() << "\n";
    return kNumeric;
  }
  log.flush();
  if (!log) throw IoError("write failed for " + log_file.string());
  std::cout << "steps: " << summary.steps_run << " (" << summary.updates << " updates, " << summary.skipped_batches
            << " skipped)\n";
  std::cout << "final loss: " << summary.last_loss << "\n";
  std::cout << "losses: " << loss_terms_string(cfg.loss.enabled) << "\n";
  std::cout << "checkpoint: " << ckpt.string() << "\n";
  std::cout << "log: " << log_file.string() << "\n";
  return kOk;
}

// probe / eval ----------------------------------------------------------------

struct ProbeArgs {
  std::string ckpt, data, mode, splits, head, report;
  std::optional<std::size_t> clips;
  bool random_init = false;
};

struct Resolved {
  Checkpoint ck;
  EncoderStack model;
  data::Dataset ds;
  std::size_t clips;
  bool all_splits;
};

Resolved resolve(const ProbeArgs& a) {
  Checkpoint ck = load_checkpoint(a.ckpt);
  const Config& cfg = ck.config;
  EncoderStack model = a.random_init ? EncoderStack(cfg.model_config(), cfg.seed()) : ck.model();
  auto ds = data::load_dataset(data::manifest_path(a.data));
  const std::size_t clips = a.clips.value_or(cfg.eval.clips);
  const std::string splits = a.splits.empty() ? cfg.eval.splits : a.splits;
  if (splits != "all" && splits != "1") throw ConfigError("--splits must be 1 or all");
  return {std::move(ck), std::move(model), std::move(ds), clips, splits == "all"};
}

void emit(const eval::EvalReport& r, const std::string& report_path) {
  const std::string text = to_json(r).dump(2);
  if (!report_path.empty()) write_text(report_path, text + "\n");
  std::cout << text << "\n";
}

int probe(const ProbeArgs& a) {
  Resolved r = resolve(a);
  const eval::ProbeMode mode = eval::parse_probe_mode(a.mode.empty() ? r.ck.config.eval.mode : a.mode);
  const auto& e = r.ck.config.eval;
  eval::ProbeConfig pc;
  pc.lr = e.probe_lr;
  pc.batch_size = e.probe_batch_size;
  pc.epochs = e.probe_epochs;
  pc.seed = e.probe_seed;
  const auto head = eval::train_probe(r.model, r.ds, mode, pc);
  if (!a.head.empty()) write_text(a.head, eval::head_to_json(head).dump() + "\n");
  emit(eval::evaluate_all_splits(r.model, head, r.ds, r.clips, r.all_splits), a.report);
  return kOk;
}

int evaluate(const ProbeArgs& a) {
  Resolved r = resolve(a);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text(a.head));
  } catch (const nlohmann::json::parse_error& err) {
    throw FormatError(a.head + ": " + err.what());
  }
  const auto head = eval::head_from_json(j);
  if (!a.mode.empty() && eval::parse_probe_mode(a.mode) != head.mode) {
    throw ConfigError("--mode " + a.mode + " does not match the head's mode " + eval::to_string(head.mode));
  }
  emit(eval::evaluate_all_splits(r.model, head, r.ds, r.clips, r.all_splits), a.report);
  return kOk;
}

// gradcheck -----------------------------------------------------------------

struct GradArgs {
  std::uint64_t seed = 0;
  std::size_t instances = 20;
  std::string inject_fault;
};

int gradcheck(const GradArgs& a) {
  check::SuiteOptions opts;
  opts.seed = a.seed;
  opts.instances = a.instances;
  opts.inject_fault = a.inject_fault;
  const auto report = check::run_suite(opts);
  std::cout << to_json(report).dump(2) << "\n";
  if (report.passed) return kOk;
  std::cerr << "gradcheck failed:";
  for (const auto& c : report.cases) {
    if (!c.passed) std::cerr << " " << c.name << " (" << c.worst_error << ")";
  }
  std::cerr << "\n";
  return kCheckFailed;
}

int exit_code(const std::exception& e) {
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const FormatError*>(&e) ||
      dynamic_cast<const fs::filesystem_error*>(&e)) {
    return kIo;
  }
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const AvailabilityError*>(&e) ||
      dynamic_cast<const DimensionError*>(&e)) {
    return kConfig;
  }
  return kCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lava: tri-modal contrastive pre-training on synthetic data"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "lava 0.1.0");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen_cmd->add_option("--config", gen.config, "JSON config file (defaults when omitted)")->check(CLI::ExistingFile);
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_flag("--force", gen.force, "Overwrite a previous dataset in --out");

  PretrainArgs pre;
  auto* pre_cmd = app.add_subcommand("pretrain", "Contrastive pre-training");
  pre_cmd->add_option("--config", pre.config, "JSON config file")->check(CLI::ExistingFile);
  pre_cmd->add_option("--data", pre.data, "Dataset directory or manifest")->required();
  pre_cmd->add_option("--out", pre.out, "Checkpoint path; the log goes to <stem>.log.jsonl beside it")->required();
  pre_cmd->add_option("--losses", pre.losses, "Loss terms, comma separated subset of av,vt,avt");
  pre_cmd->add_option("--epochs", pre.epochs, "Override train.epochs");
  pre_cmd->add_option("--seed", pre.seed, "Override train.seed");

  ProbeArgs pr;
  auto* probe_cmd = app.add_subcommand("probe", "Train a linear probe on frozen features and report accuracy");
  ProbeArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a saved probe head");
  for (auto [cmd, args] : {std::pair{probe_cmd, &pr}, std::pair{eval_cmd, &ev}}) {
    cmd->add_option("--ckpt", args->ckpt, "Checkpoint")->required();
    cmd->add_option("--data", args->data, "Dataset directory or manifest")->required();
    cmd->add_option("--mode", args->mode, "video or audio+video (default eval.mode)");
    cmd->add_option("--clips", args->clips, "Clips averaged per test video (default eval.clips)");
    cmd->add_option("--splits", args->splits, "1 or all (default eval.splits)");
    cmd->add_option("--report", args->report, "Also write the report JSON here");
  }
  probe_cmd->add_option("--head", pr.head, "Write the trained head here");
  probe_cmd->add_flag("--random-init", pr.random_init, "Probe a freshly initialised encoder instead of the weights");
  eval_cmd->add_option("--head", ev.head, "Head written by probe --head")->required();

  GradArgs gc;
  auto* grad_cmd = app.add_subcommand("gradcheck", "Finite-difference check of every gradient rule");
  grad_cmd->add_option("--seed", gc.seed, "Seed for the random instances");
  grad_cmd->add_option("--instances", gc.instances, "Random instances per case");
  grad_cmd->add_option("--inject-fault", gc.inject_fault, "Corrupt this op's backward rule");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*gen_cmd) return gen_data(gen);
    if (*pre_cmd) return pretrain(pre);
    if (*probe_cmd) return probe(pr);
    if (*eval_cmd) return evaluate(ev);
    if (*grad_cmd) return gradcheck(gc);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
  return kOk;
}
