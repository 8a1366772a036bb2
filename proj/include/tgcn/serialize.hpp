#pragma once

#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <vector>

#include "tgcn/errors.hpp"

namespace tgcn {

// FNV-1a, used as the trailing checksum of the binary container formats.
class Fnv1a {
 public:
  void update(const void* bytes, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(bytes);
    for (std::size_t i = 0; i < n; ++i) {
      hash_ ^= b[i];
      hash_ *= 0x100000001b3ULL;
    }
  }
  std::uint64_t digest() const { return hash_; }

 private:
  std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

// Little-endian writer that keeps a running checksum of everything written.
class ChecksumWriter {
 public:
  explicit ChecksumWriter(std::ostream& out) : out_(out) {}

  void bytes(const void* data, std::size_t n) {
    out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
    sum_.update(data, n);
  }
  void u8(std::uint8_t v) { bytes(&v, 1); }
  void u32(std::uint32_t v) { put_le(v); }
  void u64(std::uint64_t v) { put_le(v); }
  void f32(float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_le(bits);
  }
  void f64(double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    put_le(bits);
  }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  // Appends the checksum of everything written so far; call last.
  void finish() {
    std::uint64_t d = digest();
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>(d >> (8 * i));
    out_.write(reinterpret_cast<const char*>(buf), 8);
  }
  std::uint64_t digest() const { return sum_.digest(); }
  bool good() const { return out_.good(); }

 private:
  template <typename T>
  void put_le(T v) {
    unsigned char buf[sizeof(T)];
    for (std::size_t i = 0; i < sizeof(T); ++i)
      buf[i] = static_cast<unsigned char>(v >> (8 * i));
    bytes(buf, sizeof(T));
  }
  std::ostream& out_;
  Fnv1a sum_;
};

// Matching reader. Throws DataError on truncation; verify() checks the
// trailing checksum against the running digest.
class ChecksumReader {
 public:
  explicit ChecksumReader(std::istream& in) : in_(in) {}

  void bytes(void* data, std::size_t n) {
    in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n)
      throw DataError("unexpected end of file");
    sum_.update(data, n);
  }
  std::uint8_t u8() {
    std::uint8_t v;
    bytes(&v, 1);
    return v;
  }
  std::uint32_t u32() { return get_le<std::uint32_t>(); }
  std::uint64_t u64() { return get_le<std::uint64_t>(); }
  float f32() {
    std::uint32_t bits = get_le<std::uint32_t>();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  double f64() {
    std::uint64_t bits = get_le<std::uint64_t>();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
  }
  std::string str(std::size_t max_len = 1 << 24) {
    std::uint64_t n = u64();
    if (n > max_len) throw DataError("string field too long");
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  void verify() {
    const std::uint64_t expected = sum_.digest();
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), 8);
    if (in_.gcount() != 8) throw DataError("missing checksum");
    std::uint64_t stored = 0;
    for (int i = 0; i < 8; ++i)
      stored |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    if (stored != expected) throw DataError("checksum mismatch");
  }

 private:
  template <typename T>
  T get_le() {
    unsigned char buf[sizeof(T)];
    bytes(buf, sizeof(T));
    T v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i)
      v |= static_cast<T>(buf[i]) << (8 * i);
    return v;
  }
  std::istream& in_;
  Fnv1a sum_;
};

}  // namespace tgcn
