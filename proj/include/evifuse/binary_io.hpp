#pragma once

// Little-endian primitive encoding shared by the dataset and checkpoint
// formats.

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "evifuse/error.hpp"

namespace evifuse::binary {

template <typename T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::big) {
    auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
    std::reverse(bytes.begin(), bytes.end());
    return std::bit_cast<T>(bytes);
  } else {
    return v;
  }
}

class Writer {
 public:
  explicit Writer(std::ostream& out) : out_(out) {}

  template <typename T>
  void put(T v) {
    v = to_little(v);
    out_.write(reinterpret_cast<const char*>(&v), sizeof v);
  }
  void u16(std::uint16_t v) { put(v); }
  void u32(std::uint32_t v) { put(v); }
  void u64(std::uint64_t v) { put(v); }
  void f64(double v) { put(v); }
  void f64s(std::span<const double> values) {
    for (double v : values) f64(v);
  }
  void string(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    out_.write(s.data(), static_cast<std::streamsize>(s.size()));
  }
  void raw(const char* data, std::size_t size) { out_.write(data, static_cast<std::streamsize>(size)); }

 private:
  std::ostream& out_;
};

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  template <typename T>
  T get() {
    T v{};
    in_.read(reinterpret_cast<char*>(&v), sizeof v);
    if (in_.gcount() != static_cast<std::streamsize>(sizeof v)) {
      fail(ErrorCode::Truncated, "unexpected end of payload");
    }
    return to_little(v);
  }
  std::uint16_t u16() { return get<std::uint16_t>(); }
  std::uint32_t u32() { return get<std::uint32_t>(); }
  std::uint64_t u64() { return get<std::uint64_t>(); }
  double f64() { return get<double>(); }
  std::vector<double> f64s(std::size_t count) {
    guard(count, sizeof(double));
    std::vector<double> out(count);
    for (double& v : out) v = f64();
    return out;
  }
  std::string string() {
    const std::uint32_t size = u32();
    guard(size, 1);
    std::string s(size, '\0');
    in_.read(s.data(), size);
    if (in_.gcount() != static_cast<std::streamsize>(size)) {
      fail(ErrorCode::Truncated, "unexpected end of payload");
    }
    return s;
  }
  void raw(char* data, std::size_t size) {
    in_.read(data, static_cast<std::streamsize>(size));
    if (in_.gcount() != static_cast<std::streamsize>(size)) {
      fail(ErrorCode::Truncated, "unexpected end of payload");
    }
  }

 private:
  // Rejects absurd counts before allocating for them.
  static void guard(std::uint64_t count, std::size_t unit) {
    if (count > (std::uint64_t{1} << 34) / unit) {
      fail(ErrorCode::Format, "declared element count is implausibly large");
    }
  }

  std::istream& in_;
};

}  // namespace evifuse::binary
