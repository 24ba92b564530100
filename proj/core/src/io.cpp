#include "radgen/io.hpp"

#include <bit>
#include <fstream>
#include <sstream>
#include <system_error>

#include "radgen/error.hpp"

namespace radgen {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void atomic_write(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
      std::error_code ec;
      std::filesystem::remove(tmp, ec);
      throw std::runtime_error("write failed for '" + path.string() + "'");
    }
  }
  std::filesystem::rename(tmp, path);
}

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>(v >> 8));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

std::string_view ByteReader::take(std::size_t n) {
  if (remaining() < n) {
    throw FormatError("unexpected end of data at byte " + std::to_string(pos_) + " (need " +
                      std::to_string(n) + " more)");
  }
  auto s = bytes_.substr(pos_, n);
  pos_ += n;
  return s;
}

std::uint8_t ByteReader::u8() { return static_cast<std::uint8_t>(take(1)[0]); }

std::uint16_t ByteReader::u16() {
  auto s = take(2);
  return static_cast<std::uint16_t>(static_cast<std::uint8_t>(s[0]) |
                                    (static_cast<std::uint8_t>(s[1]) << 8));
}

std::uint32_t ByteReader::u32() {
  auto s = take(4);
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<std::uint8_t>(s[static_cast<std::size_t>(i)]);
  return v;
}

float ByteReader::f32() { return std::bit_cast<float>(u32()); }

}  // namespace radgen
