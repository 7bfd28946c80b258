#pragma once

// Little-endian primitives for the on-disk containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <type_traits>

#include "guing/core.hpp"

namespace guing::bin {

template <typename T>
T byteswap_if_big(T v) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
  }
  return v;
}

template <typename T>
void put(std::ostream& out, T v) {
  v = byteswap_if_big(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

inline void put_bytes(std::ostream& out, std::string_view s) { out.write(s.data(), static_cast<std::streamsize>(s.size())); }

inline void put_floats(std::ostream& out, const float* v, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(v), static_cast<std::streamsize>(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) put(out, v[i]);
  }
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v;
  if (!in.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw Error(Errc::Truncated, std::string("unexpected end of file reading ") + what);
  return byteswap_if_big(v);
}

inline std::string get_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n && !in.read(s.data(), static_cast<std::streamsize>(n)))
    throw Error(Errc::Truncated, std::string("unexpected end of file reading ") + what);
  return s;
}

inline void get_floats(std::istream& in, float* v, std::size_t n, const char* what) {
  if (n && !in.read(reinterpret_cast<char*>(v), static_cast<std::streamsize>(n * sizeof(float))))
    throw Error(Errc::Truncated, std::string("unexpected end of file reading ") + what);
  if constexpr (std::endian::native == std::endian::big)
    for (std::size_t i = 0; i < n; ++i) v[i] = byteswap_if_big(v[i]);
}

inline void expect_tag(std::istream& in, std::string_view tag) {
  char buf[16] = {};
  if (!in.read(buf, static_cast<std::streamsize>(tag.size())))
    throw Error(Errc::Truncated, "missing section tag " + std::string(tag));
  if (std::string_view(buf, tag.size()) != tag)
    throw Error(Errc::BadMagic, "expected section tag " + std::string(tag));
}

}  // namespace guing::bin
