// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmlc {

/// Little-endian writer used by every model artifact. Each artifact starts
/// with a 4-byte magic tag followed by a u32 format version.
class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream &out) : out_(out) {}

  void header(std::string_view magic, std::uint32_t version);
  void u8(std::uint8_t v);
  void u32(std::uint32_t v);
  void u64(std::uint64_t v);
  void f64(double v);
  void str(std::string_view s);
  void f64s(std::span<const double> values);

 private:
  std::ostream &out_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream &in, std::string source) : in_(in), source_(std::move(source)) {}

  /// Throws unless the stream starts with `magic` and a version in [1, max_version].
  std::uint32_t header(std::string_view magic, std::uint32_t max_version);
  std::uint8_t u8();
  std::uint32_t u32();
  std::uint64_t u64();
  double f64();
  std::string str();
  std::vector<double> f64s();
  /// Count prefix guarded against absurd values from corrupt files.
  std::uint64_t count(std::uint64_t limit = (1ULL << 34));
  void expect_end();

 private:
  void read(void *dst, std::size_t n);

  std::istream &in_;
  std::string source_;
};

/// FNV-1a, used for config hashes and vocabulary fingerprints.
std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL);

}  // namespace xmlc
