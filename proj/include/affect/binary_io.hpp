#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "affect/errors.hpp"

// Little-endian primitives shared by the feature, checkpoint and raw
// prediction containers.
namespace affect::binary {

template <typename U>
U to_little(U v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    U out = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      out = static_cast<U>((out << 8) | ((v >> (8 * i)) & 0xFF));
    }
    return out;
  }
}

inline void write_u16(std::ostream& out, std::uint16_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void write_u32(std::ostream& out, std::uint32_t v) {
  v = to_little(v);
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

inline void write_floats(std::ostream& out, std::span<const float> values) {
  if constexpr (std::endian::native == std::endian::little) {
    out.write(reinterpret_cast<const char*>(values.data()),
              static_cast<std::streamsize>(values.size_bytes()));
  } else {
    for (float f : values) write_u32(out, std::bit_cast<std::uint32_t>(f));
  }
}

inline void write_string16(std::ostream& out, const std::string& s) {
  if (s.size() > 0xFFFF) throw FormatError("string longer than 65535 bytes: '" + s.substr(0, 32) + "...'");
  write_u16(out, static_cast<std::uint16_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Reader that reports truncation with a caller-supplied context string.
class Reader {
 public:
  Reader(std::istream& in, std::string origin) : in_(in), origin_(std::move(origin)) {}

  void bytes(void* dst, std::size_t n, const std::string& what) {
    in_.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw FormatError(origin_ + ": truncated payload while reading " + what);
    }
  }
  std::uint16_t u16(const std::string& what) {
    std::uint16_t v = 0;
    bytes(&v, sizeof v, what);
    return to_little(v);
  }
  std::uint32_t u32(const std::string& what) {
    std::uint32_t v = 0;
    bytes(&v, sizeof v, what);
    return to_little(v);
  }
  std::string string16(const std::string& what) {
    const auto n = u16(what + " length");
    std::string s(n, '\0');
    if (n > 0) bytes(s.data(), n, what);
    return s;
  }
  void floats(std::span<float> dst, const std::string& what) {
    bytes(dst.data(), dst.size_bytes(), what);
    if constexpr (std::endian::native != std::endian::little) {
      for (auto& f : dst) f = std::bit_cast<float>(to_little(std::bit_cast<std::uint32_t>(f)));
    }
  }
  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }
  const std::string& origin() const { return origin_; }

 private:
  std::istream& in_;
  std::string origin_;
};

/// FNV-1a, 64-bit.
inline std::uint64_t fnv1a64(std::span<const std::byte> data,
                             std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (std::byte b : data) {
    h ^= static_cast<std::uint64_t>(b);
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t fnv1a64(std::string_view s) {
  return fnv1a64(std::as_bytes(std::span(s.data(), s.size())));
}

std::string hex64(std::uint64_t v);

/// Checksum of a file's full contents; throws DataError if unreadable.
std::uint64_t file_checksum(const std::string& path);

}  // namespace affect::binary
