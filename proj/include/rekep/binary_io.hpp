// Little-endian reader/writer used by the RKVG/RKFM/RKMS/RKFC formats.
#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rekep {

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);

class ByteReader {
 public:
  ByteReader(std::vector<std::uint8_t> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  void expect_magic(std::string_view magic);
  std::uint32_t u32();
  float f32();
  std::uint8_t u8();
  /// Reads `count` bytes, failing cleanly when the file is short.
  std::vector<std::uint8_t> take(size_t count);
  void expect_end() const;
  size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(size_t n, const char* what) const;

  std::vector<std::uint8_t> bytes_;
  std::string source_;
  size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(std::string_view m) { bytes_.insert(bytes_.end(), m.begin(), m.end()); }
  void u32(std::uint32_t v);
  void f32(float v);
  void u8(std::uint8_t v) { bytes_.push_back(v); }
  const std::vector<std::uint8_t>& bytes() const { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

}  // namespace rekep
