#pragma once

// Binary parameter checkpoints.
//
// Layout (all integers little-endian):
//   magic    4 bytes  "PVFC"
//   version  u8       kCheckpointVersion
//   meta     u32 length + UTF-8 bytes (JSON model description)
//   count    u32      number of records
//   record   u32 name length, name bytes, u32 rank, u64 extent * rank,
//            f64 * prod(extents) as raw IEEE-754 bits
//
// Values round-trip bit-exactly.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "pvf/error.hpp"
#include "pvf/tensor.hpp"

namespace pvf {

inline constexpr std::array<char, 4> kCheckpointMagic = {'P', 'V', 'F', 'C'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string meta;
  ParamSet params;

  const Tensor& at(const std::string& name) const {
    for (const auto& p : params) {
      if (p.name == name) return p.value;
    }
    throw StructuralError("checkpoint: missing record '" + name + "'");
  }
};

namespace detail {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const char* c = static_cast<const char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<char>& buffer() const { return buf_; }

  void save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(buf_.data(), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("write failed for '" + path + "'");
  }

 private:
  std::vector<char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<char> buf) : buf_(std::move(buf)) {}

  static ByteReader load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());
    return ByteReader(std::move(buf));
  }

  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(buf_[pos_++]);
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void bytes(void* p, std::size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
  }
  std::string str() {
    const std::uint32_t n = u32();
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  bool at_end() const { return pos_ == buf_.size(); }
  std::size_t remaining() const { return buf_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw StructuralError("binary file truncated");
  }
  std::vector<char> buf_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<char> encode_checkpoint(const Checkpoint& ckpt) {
  detail::ByteWriter w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u8(kCheckpointVersion);
  w.str(ckpt.meta);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (const auto& p : ckpt.params) {
    w.str(p.name);
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (std::size_t e : p.value.shape()) w.u64(e);
    for (double v : p.value.data()) w.f64(v);
  }
  return w.buffer();
}

inline Checkpoint decode_checkpoint(std::vector<char> bytes) {
  detail::ByteReader r(std::move(bytes));
  std::array<char, 4> magic{};
  r.bytes(magic.data(), magic.size());
  if (magic != kCheckpointMagic) throw StructuralError("checkpoint: bad magic");
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion) {
    throw StructuralError("checkpoint: unsupported version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.meta = r.str();
  const std::uint32_t count = r.u32();
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank > r.remaining() / 8) {
      throw StructuralError("checkpoint: record '" + name + "' truncated");
    }
    Shape shape(rank);
    for (auto& e : shape) e = r.u64();
    // Extents are untrusted; size them against the bytes actually present.
    std::size_t count_values = 1;
    for (auto e : shape) {
      if (e != 0 && count_values > r.remaining() / 8 / e) {
        throw StructuralError("checkpoint: record '" + name + "' truncated");
      }
      count_values *= e;
    }
    if (count_values > r.remaining() / 8) {
      throw StructuralError("checkpoint: record '" + name + "' truncated");
    }
    std::vector<double> values(count_values);
    for (auto& v : values) v = r.f64();
    ckpt.params.push_back({std::move(name), Tensor(std::move(shape), std::move(values))});
  }
  if (!r.at_end()) throw StructuralError("checkpoint: trailing bytes");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  detail::ByteWriter w;
  const auto bytes = encode_checkpoint(ckpt);
  w.bytes(bytes.data(), bytes.size());
  w.save(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)),
                        std::istreambuf_iterator<char>());
  return decode_checkpoint(std::move(buf));
}

}  // namespace pvf
