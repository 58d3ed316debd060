#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "reliab/errors.hpp"

// Little-endian scalar I/O for the checkpoint and feature-file layouts.
namespace reliab::binary {

template <class T>
void write_le(std::ostream& os, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  os.write(reinterpret_cast<const char*>(bytes.data()), sizeof(T));
}

template <class T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> bytes;
  if (!is.read(reinterpret_cast<char*>(bytes.data()), sizeof(T))) {
    throw InvalidData("unexpected end of binary stream");
  }
  if constexpr (std::endian::native == std::endian::big) {
    std::reverse(bytes.begin(), bytes.end());
  }
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

inline void write_magic(std::ostream& os, std::string_view magic) {
  os.write(magic.data(), static_cast<std::streamsize>(magic.size()));
}

inline void expect_magic(std::istream& is, std::string_view magic) {
  char buf[8] = {};
  if (magic.size() > sizeof(buf) || !is.read(buf, static_cast<std::streamsize>(magic.size())) ||
      std::string_view(buf, magic.size()) != magic) {
    throw InvalidData("bad magic bytes, expected \"" + std::string(magic) + "\"");
  }
}

}  // namespace reliab::binary
