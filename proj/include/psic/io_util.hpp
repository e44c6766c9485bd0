#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace psic {

// Little-endian byte assembly for the binary file formats.
class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f32(float v);
  void f64(double v);
  // u32 length prefix followed by the raw bytes.
  void str(const std::string& s);

  std::size_t size() const { return buf_.size(); }
  std::span<const std::uint8_t> view() const { return buf_; }

 private:
  std::vector<std::uint8_t> buf_;
};

// Bounds-checked reader; running past the end throws a truncation LoadError.
class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> buf) : buf_(buf) {}

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return buf_.size() - pos_; }
  void skip(std::size_t n);
  std::span<const std::uint8_t> take(std::size_t n);
  std::uint32_t u32();
  std::uint64_t u64();
  float f32();
  double f64();
  std::string str();

 private:
  std::span<const std::uint8_t> buf_;
  std::size_t pos_ = 0;
};

float load_f32(const std::uint8_t* p);
std::uint32_t crc32_of(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace psic
