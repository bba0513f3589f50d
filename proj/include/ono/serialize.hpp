#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace ono::io {

std::uint32_t crc32(const std::uint8_t* data, std::size_t len, std::uint32_t seed = 0);

/// Little-endian byte buffer writer. Explicit packing keeps the on-disk
/// formats identical across hosts.
class Writer {
public:
  void u8(std::uint8_t v) { buf_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f64(double v);
  void bytes(const void* p, std::size_t n);
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }

  const std::vector<std::uint8_t>& buffer() const { return buf_; }
  std::size_t size() const { return buf_.size(); }

private:
  std::vector<std::uint8_t> buf_;
};

/// Bounds-checked little-endian reader; throws TruncatedFile past the end.
class Reader {
public:
  explicit Reader(std::vector<std::uint8_t> data) : buf_(std::move(data)) {}

  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  void bytes(void* p, std::size_t n);

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  const std::vector<std::uint8_t>& buffer() const { return buf_; }

private:
  void need(std::size_t n);
  std::vector<std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes);
std::vector<std::uint8_t> read_file(const std::string& path);

}  // namespace ono::io
