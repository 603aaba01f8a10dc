#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>

#include "protoadapt/tensor.hpp"

namespace protoadapt::io {

// TNS1 framing: "TNS1", u32 rank, rank x u32 dims, then float32 payload,
// all little-endian.
inline constexpr std::array<char, 4> kTensorMagic{'T', 'N', 'S', '1'};

void write_u32(std::ostream& os, std::uint32_t v);
void write_f32(std::ostream& os, float v);
std::uint32_t read_u32(std::istream& is);
float read_f32(std::istream& is);

void write_magic(std::ostream& os, const std::array<char, 4>& magic);
/// Throws FormatError naming `what` when the next four bytes differ.
void expect_magic(std::istream& is, const std::array<char, 4>& magic, const std::string& what);

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// 64-bit FNV-1a of a file's bytes.
std::uint64_t file_fingerprint(const std::filesystem::path& path);

}  // namespace protoadapt::io
