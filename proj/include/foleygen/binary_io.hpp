#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace foleygen {

// Little-endian encoder into an in-memory buffer.
class ByteWriter {
 public:
  void magic(std::string_view tag);
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void f32(float v);
  void bytes(std::span<const uint8_t> data);
  void str(std::string_view s);  // u32 length + bytes

  const std::vector<uint8_t>& buffer() const { return buf_; }
  void save(const std::filesystem::path& path) const;

 private:
  std::vector<uint8_t> buf_;
};

// Little-endian decoder over a byte buffer. Every read is bounds-checked and
// reports expected vs actual sizes through FormatError.
class ByteReader {
 public:
  ByteReader(std::vector<uint8_t> data, std::string source);
  static ByteReader open(const std::filesystem::path& path);

  void expect_magic(std::string_view tag);
  uint16_t u16();
  uint32_t u32();
  uint64_t u64();
  float f32();
  std::string str();
  std::string fixed(size_t n);  // raw n-byte tag
  void skip(size_t n);

  // Throws unless at least `n` more bytes are present.
  void require(size_t n) const;
  size_t remaining() const { return data_.size() - pos_; }
  size_t size() const { return data_.size(); }
  size_t position() const { return pos_; }
  const std::string& source() const { return source_; }

 private:
  std::vector<uint8_t> data_;
  size_t pos_ = 0;
  std::string source_;
};

std::vector<uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const uint8_t> data);

}  // namespace foleygen
