#include "rekep/binary_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace rekep {

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

void ByteReader::need(size_t n, const char* what) const {
  if (bytes_.size() - pos_ < n) {
    throw FormatError(source_ + ": truncated while reading " + what + " at byte " + std::to_string(pos_));
  }
}

void ByteReader::expect_magic(std::string_view magic) {
  need(magic.size(), "magic");
  if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
    throw FormatError(source_ + ": bad magic, expected \"" + std::string(magic) + "\"");
  }
  pos_ += magic.size();
}

std::uint32_t ByteReader::u32() {
  need(4, "u32");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + static_cast<size_t>(i)];
  pos_ += 4;
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

std::uint8_t ByteReader::u8() {
  need(1, "u8");
  return bytes_[pos_++];
}

std::vector<std::uint8_t> ByteReader::take(size_t count) {
  need(count, "payload");
  std::vector<std::uint8_t> out(bytes_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                bytes_.begin() + static_cast<std::ptrdiff_t>(pos_ + count));
  pos_ += count;
  return out;
}

void ByteReader::expect_end() const {
  if (pos_ != bytes_.size()) {
    throw FormatError(source_ + ": " + std::to_string(bytes_.size() - pos_) + " trailing bytes after payload");
  }
}

void ByteWriter::u32(std::uint32_t v) {
  for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xffu));
}

void ByteWriter::f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

}  // namespace rekep
