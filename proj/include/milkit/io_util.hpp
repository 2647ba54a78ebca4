#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "milkit/tensor.hpp"

namespace milkit::io {

// Little-endian float32 matrix blob: 8-byte magic "MILF32\0\0", uint32 rows,
// uint32 cols, then rows*cols floats.
inline constexpr char kBlobMagic[8] = {'M', 'I', 'L', 'F', '3', '2', '\0', '\0'};

void write_f32_blob(const std::filesystem::path& path, const Tensor& matrix);
Tensor read_f32_blob(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);

// FNV-1a 64-bit over raw bytes, lowercase hex.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace milkit::io
