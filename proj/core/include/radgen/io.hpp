#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace radgen {

std::string read_file(const std::filesystem::path& path);

// Writes to a sibling temporary file, then renames over `path`, so readers
// never observe a partially written file.
void atomic_write(const std::filesystem::path& path, std::string_view bytes);

void put_u16(std::string& out, std::uint16_t v);
void put_u32(std::string& out, std::uint32_t v);
void put_f32(std::string& out, float v);

// Little-endian cursor over a byte buffer; throws FormatError on overrun.
class ByteReader {
 public:
  explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}
  std::uint8_t u8();
  std::uint16_t u16();
  std::uint32_t u32();
  float f32();
  std::string_view take(std::size_t n);
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace radgen
