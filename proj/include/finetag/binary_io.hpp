#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include <zlib.h>

#include "finetag/errors.hpp"

// Little-endian primitives shared by the FTLM/FTNS/FTPJ/FTMD formats.
// Serialization goes through explicit byte composition so files are
// bit-exact regardless of host endianness.

namespace finetag::io {

inline std::uint32_t crc32_of(std::span<const std::uint8_t> bytes) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(bytes.data()),
              static_cast<uInt>(bytes.size())));
}

inline std::uint32_t crc32_of(const std::string& bytes) {
  return crc32_of(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

// Accumulates a byte buffer; used to build CRC-covered payloads before they
// hit the stream.
class ByteWriter {
 public:
  void put_u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }

  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }

  void put_f32(float v) { put_u32(std::bit_cast<std::uint32_t>(v)); }

  void put_bytes(std::span<const std::uint8_t> bytes) {
    buf_.append(reinterpret_cast<const char*>(bytes.data()), bytes.size());
  }

  void put_magic(const char magic[4]) { buf_.append(magic, 4); }

  const std::string& bytes() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

  std::uint32_t crc32() const { return crc32_of(buf_); }

 private:
  std::string buf_;
};

// Cursor over an in-memory buffer; throws BadFormat on overrun so truncated
// files never read garbage.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::uint8_t get_u8() {
    need(1);
    return bytes_[pos_++];
  }

  std::uint32_t get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }

  std::uint64_t get_u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
  }

  float get_f32() { return std::bit_cast<float>(get_u32()); }

  std::span<const std::uint8_t> get_bytes(std::size_t n) {
    need(n);
    auto out = bytes_.subspan(pos_, n);
    pos_ += n;
    return out;
  }

  void expect_magic(const char magic[4], std::string_view format_name) {
    need(4);
    if (std::memcmp(bytes_.data() + pos_, magic, 4) != 0)
      throw Error(ErrorCode::BadFormat,
                  "bad magic for " + std::string(format_name) + " file");
    pos_ += 4;
  }

  std::size_t pos() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }
  std::span<const std::uint8_t> all() const { return bytes_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size())
      throw Error(ErrorCode::BadFormat, "unexpected end of data");
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

inline void write_stream(std::ostream& out, const std::string& bytes) {
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::IoFailure, "write failed");
}

inline std::vector<std::uint8_t> read_all(std::istream& in) {
  std::vector<std::uint8_t> bytes;
  char chunk[65536];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    bytes.insert(bytes.end(), chunk, chunk + in.gcount());
    if (in.eof()) break;
  }
  if (in.bad()) throw Error(ErrorCode::IoFailure, "read failed");
  return bytes;
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw Error(ErrorCode::MissingFile, "cannot open " + path.string());
  return read_all(in);
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw Error(ErrorCode::IoFailure, "cannot create " + path.string());
  write_stream(out, bytes);
}

}  // namespace finetag::io
