// SPDX-License-Identifier: Apache-2.0
#pragma once

// LTF binary tensor format.
//
//   offset  size        field
//   0       4           magic "LTF1"
//   4       1           dtype code: 0 = f64, 1 = u8
//   5       1           rank
//   6       2           reserved, must be zero
//   8       8 * rank    dims, u64 little-endian
//   ...                 payload, row-major, little-endian elements
//
// A rank-0 tensor holds exactly one element.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "lava/core/error.hpp"
#include "lava/core/tensor.hpp"

namespace lava::ltf {

enum class DType : std::uint8_t { kF64 = 0, kU8 = 1 };

inline constexpr char kMagic[4] = {'L', 'T', 'F', '1'};

/// A decoded LTF record; exactly one of f64 / u8 is populated.
struct Blob {
  DType dtype = DType::kF64;
  Shape shape;
  std::vector<double> f64;
  std::vector<std::uint8_t> u8;

  Tensor to_tensor(const std::string& context = "ltf") const {
    if (dtype != DType::kF64) throw FormatError(context + ": expected f64 payload");
    return Tensor(shape, f64);
  }
};

namespace detail {

inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

inline void put_header(std::vector<std::uint8_t>& out, DType dtype, const Shape& shape) {
  if (shape.size() > 255) throw FormatError("ltf: rank exceeds 255");
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  out.push_back(static_cast<std::uint8_t>(dtype));
  out.push_back(static_cast<std::uint8_t>(shape.size()));
  out.push_back(0);
  out.push_back(0);
  for (std::size_t d : shape) put_u64(out, d);
}

}  // namespace detail

inline void append(std::vector<std::uint8_t>& out, const Tensor& t) {
  detail::put_header(out, DType::kF64, t.shape());
  out.reserve(out.size() + 8 * t.numel());
  for (double v : t.data()) detail::put_u64(out, std::bit_cast<std::uint64_t>(v));
}

inline void append_bytes(std::vector<std::uint8_t>& out, std::span<const std::uint8_t> bytes) {
  detail::put_header(out, DType::kU8, Shape{bytes.size()});
  out.insert(out.end(), bytes.begin(), bytes.end());
}

inline std::vector<std::uint8_t> encode(const Tensor& t) {
  std::vector<std::uint8_t> out;
  append(out, t);
  return out;
}

/// Sequential decoder over an in-memory buffer. `context` names the source in
/// error messages (usually a path).
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string context)
      : bytes_(bytes), context_(std::move(context)) {}

  std::size_t offset() const { return offset_; }
  bool at_end() const { return offset_ == bytes_.size(); }

  const std::uint8_t* take(std::size_t n, const char* what) {
    if (bytes_.size() - offset_ < n) {
      throw FormatError(context_ + ": truncated " + what + " at byte " + std::to_string(offset_));
    }
    const std::uint8_t* p = bytes_.data() + offset_;
    offset_ += n;
    return p;
  }

  Blob read_blob() {
    const std::uint8_t* head = take(8, "LTF header");
    if (std::memcmp(head, kMagic, 4) != 0) throw FormatError(context_ + ": bad LTF magic");
    const std::uint8_t code = head[4];
    if (code > 1) throw FormatError(context_ + ": unsupported LTF dtype " + std::to_string(code));
    if (head[6] != 0 || head[7] != 0) throw FormatError(context_ + ": nonzero reserved LTF bytes");
    Blob blob;
    blob.dtype = static_cast<DType>(code);
    const std::size_t rank = head[5];
    const std::uint8_t* dims = take(8 * rank, "LTF dims");
    std::uint64_t numel = 1;
    const std::size_t elem = blob.dtype == DType::kF64 ? 8 : 1;
    for (std::size_t i = 0; i < rank; ++i) {
      const std::uint64_t d = detail::get_u64(dims + 8 * i);
      blob.shape.push_back(static_cast<std::size_t>(d));
      if (d != 0 && numel > (bytes_.size() - offset_) / d) {
        throw FormatError(context_ + ": LTF dims exceed remaining payload");
      }
      numel *= d;
    }
    const std::uint8_t* payload = take(numel * elem, "LTF payload");
    if (blob.dtype == DType::kF64) {
      blob.f64.resize(numel);
      for (std::size_t i = 0; i < numel; ++i) {
        blob.f64[i] = std::bit_cast<double>(detail::get_u64(payload + 8 * i));
      }
    } else {
      blob.u8.assign(payload, payload + numel);
    }
    return blob;
  }

  const std::string& context() const { return context_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::string context_;
  std::size_t offset_ = 0;
};

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return bytes;
}

/// Writes via a sibling temp file and rename, so readers never see a partial file.
inline void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

inline void save(const std::filesystem::path& path, const Tensor& t) { write_file(path, encode(t)); }

inline Blob decode(std::span<const std::uint8_t> bytes, const std::string& context) {
  Reader reader(bytes, context);
  Blob blob = reader.read_blob();
  if (!reader.at_end()) throw FormatError(context + ": trailing bytes after LTF payload");
  return blob;
}

/// Loads an f64 LTF file; every error message names the path.
inline Tensor load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode(bytes, path.string()).to_tensor(path.string());
}

}  // namespace lava::ltf
