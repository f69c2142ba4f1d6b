// SPDX-License-Identifier: Apache-2.0
#include "xmlc/binary_io.hpp"

#include <bit>
#include <cstring>
#include <istream>
#include <ostream>

#include "xmlc/error.hpp"

namespace xmlc {

namespace {

template <typename T>
void put_le(std::ostream &out, T v) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

}  // namespace

void BinaryWriter::header(std::string_view magic, std::uint32_t version) {
  out_.write(magic.data(), static_cast<std::streamsize>(magic.size()));
  u32(version);
}

void BinaryWriter::u8(std::uint8_t v) { put_le(out_, v); }
void BinaryWriter::u32(std::uint32_t v) { put_le(out_, v); }
void BinaryWriter::u64(std::uint64_t v) { put_le(out_, v); }
void BinaryWriter::f64(double v) { put_le(out_, std::bit_cast<std::uint64_t>(v)); }

void BinaryWriter::str(std::string_view s) {
  u32(static_cast<std::uint32_t>(s.size()));
  out_.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void BinaryWriter::f64s(std::span<const double> values) {
  u64(values.size());
  for (double v : values) f64(v);
}

void BinaryReader::read(void *dst, std::size_t n) {
  in_.read(static_cast<char *>(dst), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in_.gcount()) != n) {
    throw Error(source_ + ": truncated file");
  }
}

std::uint32_t BinaryReader::header(std::string_view magic, std::uint32_t max_version) {
  std::string tag(magic.size(), '\0');
  read(tag.data(), tag.size());
  if (tag != magic) {
    throw Error(source_ + ": bad magic tag, expected '" + std::string(magic) + "'");
  }
  const std::uint32_t version = u32();
  if (version == 0 || version > max_version) {
    throw Error(source_ + ": unsupported format version " + std::to_string(version));
  }
  return version;
}

std::uint8_t BinaryReader::u8() {
  unsigned char b;
  read(&b, 1);
  return b;
}

std::uint32_t BinaryReader::u32() {
  std::array<unsigned char, 4> b{};
  read(b.data(), b.size());
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

std::uint64_t BinaryReader::u64() {
  std::array<unsigned char, 8> b{};
  read(b.data(), b.size());
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
  return v;
}

double BinaryReader::f64() { return std::bit_cast<double>(u64()); }

std::string BinaryReader::str() {
  const std::uint32_t n = u32();
  if (n > (1U << 28)) throw Error(source_ + ": corrupt string length");
  std::string s(n, '\0');
  read(s.data(), n);
  return s;
}

std::vector<double> BinaryReader::f64s() {
  const std::uint64_t n = count();
  std::vector<double> values(n);
  for (auto &v : values) v = f64();
  return values;
}

std::uint64_t BinaryReader::count(std::uint64_t limit) {
  const std::uint64_t n = u64();
  if (n > limit) throw Error(source_ + ": corrupt element count");
  return n;
}

void BinaryReader::expect_end() {
  if (in_.peek() != std::char_traits<char>::eof()) {
    throw Error(source_ + ": trailing bytes after payload");
  }
}

std::uint64_t fnv1a(std::string_view data, std::uint64_t h) {
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace xmlc
