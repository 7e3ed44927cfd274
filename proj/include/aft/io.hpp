#pragma once

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <variant>
#include <vector>

#include "aft/tensor.hpp"

namespace aft {

// Tensor file ("AFT1"): magic, u8 scalar kind (0 = f32, 1 = f64), u8 rank
// (always 4), rank u64 little-endian dims, then row-major scalars, also
// little endian. Checkpoint file ("AFCK"): magic, u32 entry count, then per
// entry a u16 name length, the UTF-8 dotted parameter name, and an embedded
// tensor record.

using AnyTensor = std::variant<Tensor<float>, Tensor<double>>;

[[noreturn]] inline void io_fail(const std::string& path,
                                 const std::string& what) {
  throw std::runtime_error("io error: " + path + ": " + what);
}

namespace detail {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) &
                                    0xFF));
}

class Reader {
 public:
  Reader(std::string path, std::string bytes)
      : path_(std::move(path)), bytes_(std::move(bytes)) {}

  template <typename T>
  T get_le() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<std::uint64_t>(
               static_cast<unsigned char>(bytes_[pos_ + i]))
           << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char* magic) {
    if (get_bytes(4) != magic)
      io_fail(path_, std::string("bad magic, expected '") + magic + "'");
  }

  bool done() const { return pos_ == bytes_.size(); }
  const std::string& path() const { return path_; }

  void expect_done() {
    if (!done()) io_fail(path_, "trailing bytes after payload");
  }

 private:
  void need(std::size_t n) {
    if (pos_ + n > bytes_.size()) io_fail(path_, "file truncated");
  }

  std::string path_;
  std::string bytes_;
  std::size_t pos_ = 0;
};

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) io_fail(path, "cannot open for reading");
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

/// Writes via a temp file in the same directory, then renames into place, so
/// a crash never leaves a half-written artifact under the final name.
inline void write_file_atomic(const std::string& path,
                              const std::string& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) io_fail(tmp, "cannot open for writing");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) io_fail(tmp, "write failed");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) io_fail(path, "rename failed: " + ec.message());
}

template <typename S>
constexpr std::uint8_t scalar_kind() {
  return std::is_same_v<S, float> ? 0 : 1;
}

template <typename S>
void append_tensor(std::string& out, const Tensor<S>& t) {
  out += "AFT1";
  out.push_back(static_cast<char>(scalar_kind<S>()));
  out.push_back(static_cast<char>(4));
  const Dims d = t.dims();
  for (std::int64_t v : {d.n, d.c, d.h, d.w})
    put_le(out, static_cast<std::uint64_t>(v));
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const S v = t[i];
    if constexpr (std::is_same_v<S, float>) {
      std::uint32_t bits;
      std::memcpy(&bits, &v, 4);
      put_le(out, bits);
    } else {
      std::uint64_t bits;
      std::memcpy(&bits, &v, 8);
      put_le(out, bits);
    }
  }
}

template <typename S>
Tensor<S> parse_payload(Reader& r, Dims d) {
  Tensor<S> t(d);
  for (std::int64_t i = 0; i < t.size(); ++i) {
    if constexpr (std::is_same_v<S, float>) {
      const std::uint32_t bits = r.get_le<std::uint32_t>();
      std::memcpy(&t[i], &bits, 4);
    } else {
      const std::uint64_t bits = r.get_le<std::uint64_t>();
      std::memcpy(&t[i], &bits, 8);
    }
  }
  return t;
}

inline AnyTensor parse_tensor(Reader& r) {
  r.expect_magic("AFT1");
  const auto kind = r.get_le<std::uint8_t>();
  if (kind > 1)
    io_fail(r.path(), "unknown scalar kind " + std::to_string(kind));
  const auto rank = r.get_le<std::uint8_t>();
  if (rank != 4)
    io_fail(r.path(), "unsupported rank " + std::to_string(rank) +
                          " (only rank 4 tensors exist here)");
  Dims d;
  d.n = static_cast<std::int64_t>(r.get_le<std::uint64_t>());
  d.c = static_cast<std::int64_t>(r.get_le<std::uint64_t>());
  d.h = static_cast<std::int64_t>(r.get_le<std::uint64_t>());
  d.w = static_cast<std::int64_t>(r.get_le<std::uint64_t>());
  if (d.n < 1 || d.c < 1 || d.h < 1 || d.w < 1)
    io_fail(r.path(), "non-positive dimension in header");
  if (kind == 0) return parse_payload<float>(r, d);
  return parse_payload<double>(r, d);
}

}  // namespace detail

template <typename S>
void write_tensor(const std::string& path, const Tensor<S>& t) {
  std::string bytes;
  detail::append_tensor(bytes, t);
  detail::write_file_atomic(path, bytes);
}

inline AnyTensor read_tensor(const std::string& path) {
  detail::Reader r(path, detail::read_file(path));
  AnyTensor t = detail::parse_tensor(r);
  r.expect_done();
  return t;
}

/// Converts a loaded tensor to the requested scalar type.
template <typename S>
Tensor<S> tensor_as(const AnyTensor& t) {
  if (std::holds_alternative<Tensor<S>>(t)) return std::get<Tensor<S>>(t);
  return std::visit(
      [](const auto& src) {
        Tensor<S> out(src.dims());
        for (std::int64_t i = 0; i < src.size(); ++i)
          out[i] = static_cast<S>(src[i]);
        return out;
      },
      t);
}

/// Ordered name -> tensor pairs, as stored in a checkpoint file.
using CheckpointData = std::vector<std::pair<std::string, AnyTensor>>;

template <typename S>
void write_checkpoint(
    const std::string& path,
    const std::vector<std::pair<std::string, const Tensor<S>*>>& entries) {
  std::string bytes = "AFCK";
  detail::put_le(bytes, static_cast<std::uint32_t>(entries.size()));
  for (const auto& [name, tensor] : entries) {
    require(name.size() <= 0xFFFF, "checkpoint: parameter name too long");
    detail::put_le(bytes, static_cast<std::uint16_t>(name.size()));
    bytes += name;
    detail::append_tensor(bytes, *tensor);
  }
  detail::write_file_atomic(path, bytes);
}

/// Serializes everything a model's visit() exposes, in visit order.
template <typename Model>
void save_checkpoint(const std::string& path, const Model& model) {
  using S = typename Model::Scalar;
  std::vector<std::pair<std::string, const Tensor<S>*>> entries;
  model.visit([&](const std::string& name, const Tensor<S>& t) {
    entries.emplace_back(name, &t);
  });
  write_checkpoint(path, entries);
}

inline CheckpointData read_checkpoint(const std::string& path) {
  detail::Reader r(path, detail::read_file(path));
  r.expect_magic("AFCK");
  const auto count = r.get_le<std::uint32_t>();
  CheckpointData data;
  data.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get_le<std::uint16_t>();
    std::string name = r.get_bytes(name_len);
    data.emplace_back(std::move(name), detail::parse_tensor(r));
  }
  r.expect_done();
  return data;
}

/// Copies checkpoint values into a model. Every parameter must be present
/// with matching dims and scalar type; extra or missing names are errors.
template <typename Model>
void load_checkpoint_into(const std::string& path, Model& model) {
  using S = typename Model::Scalar;
  CheckpointData data = read_checkpoint(path);
  std::size_t cursor = 0;
  std::string missing;
  model.visit([&](const std::string& name, Tensor<S>& t) {
    if (cursor >= data.size()) {
      if (missing.empty()) missing = name;
      return;
    }
    auto& [fname, ft] = data[cursor];
    if (fname != name)
      io_fail(path, "parameter order mismatch: file has '" + fname +
                        "', model expects '" + name + "'");
    if (!std::holds_alternative<Tensor<S>>(ft))
      io_fail(path, "parameter '" + name + "' has the wrong scalar type");
    const Tensor<S>& src = std::get<Tensor<S>>(ft);
    if (!(src.dims() == t.dims()))
      io_fail(path, "parameter '" + name + "' has dims " + src.dims().str() +
                        ", model expects " + t.dims().str());
    t = src;
    ++cursor;
  });
  if (!missing.empty())
    io_fail(path, "checkpoint ends before parameter '" + missing + "'");
  if (cursor != data.size())
    io_fail(path, "checkpoint has " + std::to_string(data.size() - cursor) +
                      " extra entries starting at '" + data[cursor].first +
                      "'");
}

/// Loads a binary PGM (P5) or PPM (P6) image with maxval 255 into a
/// (1, 3, H, W) tensor scaled to [0, 1]. Grayscale is replicated across the
/// three channels.
template <typename S>
Tensor<S> load_image_pnm(const std::string& path) {
  const std::string bytes = detail::read_file(path);
  std::size_t pos = 0;

  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  };
  auto next_int = [&]() -> std::int64_t {
    skip_space();
    std::size_t start = pos;
    while (pos < bytes.size() &&
           std::isdigit(static_cast<unsigned char>(bytes[pos])))
      ++pos;
    if (pos == start) io_fail(path, "malformed header");
    return std::stoll(bytes.substr(start, pos - start));
  };

  if (bytes.size() < 2) io_fail(path, "file truncated");
  const std::string magic = bytes.substr(0, 2);
  pos = 2;
  if (magic != "P5" && magic != "P6")
    io_fail(path, "unsupported format '" + magic +
                      "' (only binary P5/P6 with maxval 255)");
  const std::int64_t w = next_int();
  const std::int64_t h = next_int();
  const std::int64_t maxval = next_int();
  if (w < 1 || h < 1) io_fail(path, "non-positive image size");
  if (maxval != 255)
    io_fail(path, "unsupported maxval " + std::to_string(maxval) +
                      " (only 255)");
  ++pos;  // single whitespace after maxval

  const std::int64_t channels = magic == "P6" ? 3 : 1;
  const std::size_t need = static_cast<std::size_t>(w * h * channels);
  if (bytes.size() - pos < need) io_fail(path, "pixel data truncated");

  Tensor<S> img(Dims{1, 3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      for (std::int64_t c = 0; c < 3; ++c) {
        const std::size_t src =
            pos + static_cast<std::size_t>((y * w + x) * channels +
                                           (channels == 3 ? c : 0));
        img.at(0, c, y, x) =
            static_cast<S>(static_cast<unsigned char>(bytes[src])) / S(255);
      }
    }
  return img;
}

}  // namespace aft
