#include "milkit/io_util.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace milkit::io {

namespace {

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t pos) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[pos + i])) << (8 * i);
  return v;
}

}  // namespace

void write_f32_blob(const std::filesystem::path& path, const Tensor& matrix) {
  if (matrix.rank() != 2) throw IoError("f32 blob: expected a rank-2 tensor");
  std::string out;
  out.append(kBlobMagic, sizeof(kBlobMagic));
  put_u32(out, static_cast<std::uint32_t>(matrix.shape()[0]));
  put_u32(out, static_cast<std::uint32_t>(matrix.shape()[1]));
  for (double d : matrix.data()) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
  }
  write_file(path, out);
}

Tensor read_f32_blob(const std::filesystem::path& path) {
  const std::string s = read_file(path);
  if (s.size() < 16) throw IoError(path.string() + ": truncated blob header (byte 0-15)");
  if (std::memcmp(s.data(), kBlobMagic, sizeof(kBlobMagic)) != 0)
    throw IoError(path.string() + ": bad blob magic at byte 0");
  const std::uint32_t rows = get_u32(s, 8);
  const std::uint32_t cols = get_u32(s, 12);
  const std::size_t expected = 16 + std::size_t{4} * rows * cols;
  if (s.size() != expected)
    throw IoError(path.string() + ": blob payload has " + std::to_string(s.size() - 16) +
                  " bytes at byte 16, expected " + std::to_string(expected - 16));
  Tensor t({static_cast<int>(rows), static_cast<int>(cols)});
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::uint32_t bits = get_u32(s, 16 + 4 * i);
    float f;
    std::memcpy(&f, &bits, 4);
    t.at(i) = static_cast<double>(f);
  }
  return t;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

}  // namespace milkit::io
