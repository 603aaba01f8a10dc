#include "protoadapt/tensor_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <vector>

namespace protoadapt::io {

namespace {

void put_le(std::ostream& os, std::uint32_t v) {
  const char bytes[4] = {static_cast<char>(v & 0xffu), static_cast<char>((v >> 8) & 0xffu),
                         static_cast<char>((v >> 16) & 0xffu),
                         static_cast<char>((v >> 24) & 0xffu)};
  os.write(bytes, 4);
}

std::uint32_t get_le(std::istream& is) {
  unsigned char bytes[4];
  if (!is.read(reinterpret_cast<char*>(bytes), 4)) throw FormatError("unexpected end of file");
  return static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
         (static_cast<std::uint32_t>(bytes[2]) << 16) | (static_cast<std::uint32_t>(bytes[3]) << 24);
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) { put_le(os, v); }
void write_f32(std::ostream& os, float v) { put_le(os, std::bit_cast<std::uint32_t>(v)); }
std::uint32_t read_u32(std::istream& is) { return get_le(is); }
float read_f32(std::istream& is) { return std::bit_cast<float>(get_le(is)); }

void write_magic(std::ostream& os, const std::array<char, 4>& magic) { os.write(magic.data(), 4); }

void expect_magic(std::istream& is, const std::array<char, 4>& magic, const std::string& what) {
  std::array<char, 4> got{};
  if (!is.read(got.data(), 4)) throw FormatError(what + ": file too short for magic");
  if (got != magic) throw FormatError(what + ": bad magic bytes");
}

void write_tensor(std::ostream& os, const Tensor& t) {
  write_magic(os, kTensorMagic);
  write_u32(os, static_cast<std::uint32_t>(t.rank()));
  for (auto d : t.shape()) write_u32(os, static_cast<std::uint32_t>(d));
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(float)));
  } else {
    for (float v : t.data()) write_f32(os, v);
  }
}

Tensor read_tensor(std::istream& is) {
  expect_magic(is, kTensorMagic, "TNS1");
  const std::uint32_t rank = read_u32(is);
  if (rank > 16) throw FormatError("TNS1: implausible rank " + std::to_string(rank));
  Shape shape(rank);
  std::uint64_t count = 1;
  for (auto& d : shape) {
    d = read_u32(is);
    count *= d;
    if (count > (std::uint64_t{1} << 34)) throw FormatError("TNS1: tensor too large");
  }
  std::vector<float> data(static_cast<std::size_t>(count));
  const auto bytes = static_cast<std::streamsize>(count * sizeof(float));
  if constexpr (std::endian::native == std::endian::little) {
    if (!is.read(reinterpret_cast<char*>(data.data()), bytes)) {
      throw FormatError("TNS1: truncated payload");
    }
  } else {
    for (auto& v : data) v = read_f32(is);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw Error("write failed: " + path.string());
}

Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return read_tensor(is);
}

std::uint64_t file_fingerprint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  std::vector<char> buf(1 << 16);
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    const auto got = is.gcount();
    for (std::streamsize i = 0; i < got; ++i) {
      h ^= static_cast<unsigned char>(buf[static_cast<std::size_t>(i)]);
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace protoadapt::io
