// SPDX-License-Identifier: Apache-2.0
#pragma once

// LAVC archive: "LAVC", u32 LE entry count, then per entry a u16 LE name
// length, the UTF-8 name and one LTF blob.
//
// Entries written by save_checkpoint, in order:
//   config                 u8 bytes of the resolved config JSON
//   state.epoch            completed epochs
//   state.step             completed optimizer steps
//   <parameter name>       every model parameter
//   adam.step              Adam step counter
//   adam.m.<name>          first moments
//   adam.v.<name>          second moments

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "lava/core/ltf.hpp"
#include "lava/model/encoders.hpp"
#include "lava/optim/adam.hpp"
#include "lava/train/config.hpp"

namespace lava {

inline constexpr char kCheckpointMagic[4] = {'L', 'A', 'V', 'C'};

struct ArchiveEntry {
  std::string name;
  ltf::Blob blob;
};

inline std::vector<std::uint8_t> encode_archive(const std::vector<ArchiveEntry>& entries) {
  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  if (entries.size() > 0xffffffffu) throw FormatError("archive has too many entries");
  const auto count = static_cast<std::uint32_t>(entries.size());
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(count >> (8 * i)));
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw FormatError("archive entry name length out of range");
    const auto len = static_cast<std::uint16_t>(e.name.size());
    out.push_back(static_cast<std::uint8_t>(len & 0xff));
    out.push_back(static_cast<std::uint8_t>(len >> 8));
    out.insert(out.end(), e.name.begin(), e.name.end());
    if (e.blob.dtype == ltf::DType::kU8) {
      ltf::append_bytes(out, e.blob.u8);
    } else {
      ltf::append(out, Tensor(e.blob.shape, e.blob.f64));
    }
  }
  return out;
}

inline std::vector<ArchiveEntry> decode_archive(std::span<const std::uint8_t> bytes, const std::string& context) {
  ltf::Reader r(bytes, context);
  const std::uint8_t* magic = r.take(4, "archive magic");
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw FormatError(context + ": bad checkpoint magic");
  const std::uint8_t* c = r.take(4, "entry count");
  const std::uint32_t count = c[0] | (c[1] << 8) | (c[2] << 16) | (static_cast<std::uint32_t>(c[3]) << 24);
  std::vector<ArchiveEntry> out;
  std::set<std::string> names;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint8_t* l = r.take(2, "entry name length");
    const std::size_t len = l[0] | (l[1] << 8);
    const std::uint8_t* name = r.take(len, "entry name");
    ArchiveEntry e{std::string(reinterpret_cast<const char*>(name), len), r.read_blob()};
    if (!names.insert(e.name).second) throw FormatError(context + ": duplicate entry '" + e.name + "'");
    out.push_back(std::move(e));
  }
  if (!r.at_end()) throw FormatError(context + ": trailing bytes after " + std::to_string(count) + " entries");
  return out;
}

/// Everything needed to rebuild a model and resume training exactly.
struct Checkpoint {
  Config config;
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  nn::ParameterList params;
  std::uint64_t adam_step = 0;
  std::vector<std::vector<double>> adam_m, adam_v;  // empty when no optimizer state was stored

  /// Fresh model initialised from the stored parameter values.
  EncoderStack model() const {
    EncoderStack stack(config.model_config(), 0);
    auto target = stack.parameters();
    if (target.size() != params.size()) {
      throw FormatError("checkpoint holds " + std::to_string(params.size()) + " parameters, model expects " +
                        std::to_string(target.size()));
    }
    for (std::size_t k = 0; k < target.size(); ++k) {
      if (target[k].first != params[k].first || target[k].second.shape() != params[k].second.shape()) {
        throw FormatError("checkpoint parameter " + params[k].first + " does not match model layout (" +
                          target[k].first + " " + shape_str(target[k].second.shape()) + ")");
      }
      auto dst = target[k].second.mutable_data();
      std::ranges::copy(params[k].second.data(), dst.begin());
    }
    return stack;
  }

  void restore_optimizer(optim::Adam& opt) const {
    if (adam_m.empty()) throw FormatError("checkpoint carries no optimizer state");
    opt.restore(adam_step, adam_m, adam_v);
  }
};

inline std::vector<std::uint8_t> encode_checkpoint(const Config& cfg, const EncoderStack& model,
                                                   const optim::Adam* opt, std::uint64_t epoch,
                                                   std::uint64_t step) {
  std::vector<ArchiveEntry> entries;
  const std::string text = to_json(cfg).dump();
  entries.push_back({"config", ltf::Blob{ltf::DType::kU8, Shape{text.size()}, {},
                                         std::vector<std::uint8_t>(text.begin(), text.end())}});
  auto scalar = [](double v) { return ltf::Blob{ltf::DType::kF64, Shape{}, {v}, {}}; };
  entries.push_back({"state.epoch", scalar(static_cast<double>(epoch))});
  entries.push_back({"state.step", scalar(static_cast<double>(step))});
  const auto params = model.parameters();
  for (const auto& [name, p] : params) {
    entries.push_back({name, ltf::Blob{ltf::DType::kF64, p.shape(), {p.data().begin(), p.data().end()}, {}}});
  }
  if (opt) {
    entries.push_back({"adam.step", scalar(static_cast<double>(opt->step_count()))});
    for (std::size_t k = 0; k < params.size(); ++k) {
      entries.push_back({"adam.m." + params[k].first,
                         ltf::Blob{ltf::DType::kF64, params[k].second.shape(), opt->first_moment(k), {}}});
    }
    for (std::size_t k = 0; k < params.size(); ++k) {
      entries.push_back({"adam.v." + params[k].first,
                         ltf::Blob{ltf::DType::kF64, params[k].second.shape(), opt->second_moment(k), {}}});
    }
  }
  return encode_archive(entries);
}

inline void save_checkpoint(const std::filesystem::path& path, const Config& cfg, const EncoderStack& model,
                            const optim::Adam* opt, std::uint64_t epoch, std::uint64_t step) {
  ltf::write_file(path, encode_checkpoint(cfg, model, opt, epoch, step));
}

inline Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes, const std::string& context) {
  auto entries = decode_archive(bytes, context);
  std::map<std::string, const ltf::Blob*> by_name;
  for (const auto& e : entries) by_name[e.name] = &e.blob;
  auto need = [&](const std::string& name) -> const ltf::Blob& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw FormatError(context + ": missing entry '" + name + "'");
    return *it->second;
  };
  auto counter = [&](const std::string& name) {
    const auto& b = need(name);
    if (b.dtype != ltf::DType::kF64 || b.f64.size() != 1 || b.f64[0] < 0) {
      throw FormatError(context + ": entry '" + name + "' is not a counter");
    }
    return static_cast<std::uint64_t>(b.f64[0]);
  };

  Checkpoint ck;
  const auto& cfg_blob = need("config");
  if (cfg_blob.dtype != ltf::DType::kU8) throw FormatError(context + ": config entry must be bytes");
  try {
    ck.config = parse_config(std::string(cfg_blob.u8.begin(), cfg_blob.u8.end()), context + " config");
  } catch (const ConfigError& e) {
    throw FormatError(e.what());
  }
  ck.epoch = counter("state.epoch");
  ck.step = counter("state.step");

  EncoderStack layout(ck.config.model_config(), 0);
  const auto expected = layout.parameters();
  for (const auto& [name, p] : expected) {
    const auto& b = need(name);
    if (b.dtype != ltf::DType::kF64 || b.shape != p.shape()) {
      throw FormatError(context + ": parameter " + name + " has shape " + shape_str(b.shape) + ", expected " +
                        shape_str(p.shape()));
    }
    ck.params.emplace_back(name, Tensor(b.shape, b.f64, true));
  }
  if (by_name.count("adam.step")) {
    ck.adam_step = counter("adam.step");
    for (const char* kind : {"adam.m.", "adam.v."}) {
      auto& dst = std::string(kind) == "adam.m." ? ck.adam_m : ck.adam_v;
      for (const auto& [name, p] : expected) {
        const auto& b = need(kind + name);
        if (b.dtype != ltf::DType::kF64 || b.shape != p.shape()) {
          throw FormatError(context + ": optimizer state " + kind + name + " has the wrong shape");
        }
        dst.push_back(b.f64);
      }
    }
  }
  std::size_t known = 3 + expected.size() + (by_name.count("adam.step") ? 1 + 2 * expected.size() : 0);
  if (known != entries.size()) throw FormatError(context + ": unexpected extra entries in checkpoint");
  return ck;
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  const auto bytes = ltf::read_file(path);
  return decode_checkpoint(bytes, path.string());
}

}  // namespace lava
