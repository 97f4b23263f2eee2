#pragma once

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "aode/errors.hpp"

namespace aode::io {

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = ::crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  while (n > 0) {
    const auto piece = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = ::crc32(crc, data, piece);
    data += piece;
    n -= piece;
  }
  return static_cast<std::uint32_t>(crc);
}

// Little-endian serialisation into a byte buffer.
class ByteWriter {
 public:
  template <typename T>
    requires std::is_arithmetic_v<T>
  void put(T v) {
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, &v, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    buf_.insert(buf_.end(), raw, raw + sizeof(T));
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s.data(), s.size());
  }
  void put_crc() { put<std::uint32_t>(crc32_of(buf_.data(), buf_.size())); }

  const std::vector<std::uint8_t>& bytes() const noexcept { return buf_; }

  void write_file(const std::string& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw Error("failed writing '" + path + "'");
  }

 private:
  std::vector<std::uint8_t> buf_;
};

inline std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Little-endian deserialisation; running past the end is TruncatedFile.
class ByteReader {
 public:
  ByteReader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  template <typename T>
    requires std::is_arithmetic_v<T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    std::memcpy(raw, data_ + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(T));
    pos_ += sizeof(T);
    T v;
    std::memcpy(&v, raw, sizeof(T));
    return v;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(data_ + pos_), n);
    pos_ += n;
    return s;
  }
  std::size_t remaining() const noexcept { return size_ - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > size_ - pos_) throw TruncatedFile("unexpected end of data");
  }
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

// Verifies "MAGIC" + u32 version + ... + u32 CRC framing; returns a reader
// positioned after the version and limited to the payload before the CRC.
inline ByteReader open_container(const std::vector<std::uint8_t>& bytes, const char (&magic)[5],
                                 std::uint32_t supported_version) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), magic, 4) != 0)
    throw BadMagic(std::string("expected magic '") + magic + "'");
  if (bytes.size() < 8) throw TruncatedFile("container header is truncated");
  ByteReader header(bytes.data() + 4, 4);
  const auto version = header.get<std::uint32_t>();
  if (version != supported_version)
    throw VersionUnsupported("container version " + std::to_string(version) + " is not supported (expected " +
                             std::to_string(supported_version) + ")");
  if (bytes.size() < 12) throw TruncatedFile("container has no checksum");
  ByteReader trailer(bytes.data() + bytes.size() - 4, 4);
  const auto stored = trailer.get<std::uint32_t>();
  if (crc32_of(bytes.data(), bytes.size() - 4) != stored) throw ChecksumMismatch("CRC32 mismatch");
  return ByteReader(bytes.data() + 8, bytes.size() - 12);
}

}  // namespace aode::io
