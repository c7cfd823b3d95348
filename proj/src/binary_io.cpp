#include "foleygen/binary_io.hpp"

#include "foleygen/common.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace foleygen {

void ByteWriter::magic(std::string_view tag) {
  buf_.insert(buf_.end(), tag.begin(), tag.end());
}

void ByteWriter::u16(uint16_t v) {
  buf_.push_back(static_cast<uint8_t>(v & 0xFF));
  buf_.push_back(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) {
    buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
  }
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) {
    buf_.push_back(static_cast<uint8_t>((v >> (8 * i)) & 0xFF));
  }
}

void ByteWriter::f32(float v) { u32(std::bit_cast<uint32_t>(v)); }

void ByteWriter::bytes(std::span<const uint8_t> data) {
  buf_.insert(buf_.end(), data.begin(), data.end());
}

void ByteWriter::str(std::string_view s) {
  u32(static_cast<uint32_t>(s.size()));
  buf_.insert(buf_.end(), s.begin(), s.end());
}

void ByteWriter::save(const std::filesystem::path& path) const { write_file(path, buf_); }

ByteReader::ByteReader(std::vector<uint8_t> data, std::string source)
    : data_(std::move(data)), source_(std::move(source)) {}

ByteReader ByteReader::open(const std::filesystem::path& path) {
  return ByteReader(read_file(path), path.string());
}

void ByteReader::require(size_t n) const {
  if (remaining() < n) {
    throw FormatError(source_ + ": truncated, expected " + std::to_string(pos_ + n) +
                      " bytes but file has " + std::to_string(data_.size()));
  }
}

void ByteReader::expect_magic(std::string_view tag) {
  require(tag.size());
  if (std::memcmp(data_.data() + pos_, tag.data(), tag.size()) != 0) {
    throw FormatError(source_ + ": bad magic, expected \"" + std::string(tag) + "\"");
  }
  pos_ += tag.size();
}

uint16_t ByteReader::u16() {
  require(2);
  const uint16_t v = static_cast<uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
  pos_ += 2;
  return v;
}

uint32_t ByteReader::u32() {
  require(4);
  uint32_t v = 0;
  for (int i = 0; i < 4; ++i) {
    v |= static_cast<uint32_t>(data_[pos_ + i]) << (8 * i);
  }
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64() {
  require(8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) {
    v |= static_cast<uint64_t>(data_[pos_ + i]) << (8 * i);
  }
  pos_ += 8;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::string ByteReader::str() {
  const uint32_t n = u32();
  require(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

std::string ByteReader::fixed(size_t n) {
  require(n);
  std::string s(reinterpret_cast<const char*>(data_.data() + pos_), n);
  pos_ += n;
  return s;
}

void ByteReader::skip(size_t n) {
  require(n);
  pos_ += n;
}

std::vector<uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw std::runtime_error("cannot open " + path.string());
  }
  return std::vector<uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::filesystem::path& path, std::span<const uint8_t> data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
  if (!out) {
    throw std::runtime_error("write failed: " + path.string());
  }
}

}  // namespace foleygen
