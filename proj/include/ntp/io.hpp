#pragma once

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace ntp::io {

/// Little-endian binary writer over an in-memory buffer.
struct ByteWriter {
  std::vector<unsigned char> bytes;

  void put_u16(std::uint16_t v) {
    bytes.push_back(static_cast<unsigned char>(v & 0xFF));
    bytes.push_back(static_cast<unsigned char>(v >> 8));
  }
  void put_u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
  void put_u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) bytes.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  }
  void put_f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    put_u32(u);
  }
  void put_bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    bytes.insert(bytes.end(), c, c + n);
  }
  void put_string(const std::string& s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_bytes(s.data(), s.size());
  }
};

struct ByteReader {
  const unsigned char* p;
  std::size_t n;
  std::size_t pos = 0;

  explicit ByteReader(const std::vector<unsigned char>& b) : p(b.data()), n(b.size()) {}

  void need(std::size_t k) const {
    if (pos + k > n) throw std::runtime_error("binary blob truncated");
  }
  std::uint16_t get_u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t get_u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::uint64_t get_u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[pos + i]) << (8 * i);
    pos += 8;
    return v;
  }
  float get_f32() {
    const std::uint32_t u = get_u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string get_string() {
    const std::uint32_t len = get_u32();
    need(len);
    std::string s(reinterpret_cast<const char*>(p + pos), len);
    pos += len;
    return s;
  }
  bool at_end() const { return pos == n; }
};

void write_file(const std::filesystem::path& path, const std::vector<unsigned char>& bytes);
void write_file(const std::filesystem::path& path, const std::string& text);
std::vector<unsigned char> read_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Shortest round-trip decimal for a double; locale-independent.
inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  // trim to the shortest representation that round-trips
  for (int prec = 1; prec <= 16; ++prec) {
    char cand[40];
    std::snprintf(cand, sizeof cand, "%.*g", prec, v);
    double back = 0.0;
    std::sscanf(cand, "%lf", &back);
    if (back == v) return cand;
  }
  return buf;
}

/// FNV-1a64 over a byte string, hex-encoded; used for config hashes.
std::string content_hash_hex(const std::string& bytes);

}  // namespace ntp::io
