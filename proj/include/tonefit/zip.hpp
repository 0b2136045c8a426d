#pragma once

// Minimal writer for uncompressed ("stored") zip archives.

#include <zlib.h>

#include <algorithm>
#include <cstdint>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace tonefit {

struct ZipEntry {
  std::string name;
  std::vector<std::uint8_t> data;
};

namespace detail {

inline void put16(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
}

inline void put32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put16(out, v & 0xffff);
  put16(out, v >> 16);
}

inline std::uint32_t crc32_of(std::span<const std::uint8_t> data) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in pieces.
  std::size_t offset = 0;
  while (offset < data.size()) {
    const std::size_t chunk = std::min<std::size_t>(data.size() - offset, 1u << 30);
    crc = crc32(crc, data.data() + offset, static_cast<uInt>(chunk));
    offset += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace detail

// Entries are written in order with a fixed timestamp (1980-01-01 00:00) so
// identical inputs give identical archives.
inline std::vector<std::uint8_t> make_zip(const std::vector<ZipEntry>& entries) {
  constexpr std::uint32_t kDosDate = (0 << 9) | (1 << 5) | 1;
  constexpr std::uint32_t kDosTime = 0;
  constexpr auto kMax32 = std::numeric_limits<std::uint32_t>::max();
  if (entries.size() > 0xffff) throw std::length_error("zip: too many entries");

  std::vector<std::uint8_t> out;
  std::vector<std::uint8_t> central;
  for (const auto& e : entries) {
    if (e.name.empty() || e.name.size() > 0xffff) throw std::invalid_argument("zip: bad entry name");
    if (e.data.size() >= kMax32 || out.size() >= kMax32) throw std::length_error("zip: archive too large");
    const std::uint32_t crc = detail::crc32_of(e.data);
    const auto size = static_cast<std::uint32_t>(e.data.size());
    const auto offset = static_cast<std::uint32_t>(out.size());

    detail::put32(out, 0x04034b50);
    detail::put16(out, 10);  // version needed
    detail::put16(out, 0);   // flags
    detail::put16(out, 0);   // stored
    detail::put16(out, kDosTime);
    detail::put16(out, kDosDate);
    detail::put32(out, crc);
    detail::put32(out, size);
    detail::put32(out, size);
    detail::put16(out, static_cast<std::uint32_t>(e.name.size()));
    detail::put16(out, 0);
    out.insert(out.end(), e.name.begin(), e.name.end());
    out.insert(out.end(), e.data.begin(), e.data.end());

    detail::put32(central, 0x02014b50);
    detail::put16(central, 20);  // version made by
    detail::put16(central, 10);
    detail::put16(central, 0);
    detail::put16(central, 0);
    detail::put16(central, kDosTime);
    detail::put16(central, kDosDate);
    detail::put32(central, crc);
    detail::put32(central, size);
    detail::put32(central, size);
    detail::put16(central, static_cast<std::uint32_t>(e.name.size()));
    detail::put16(central, 0);  // extra
    detail::put16(central, 0);  // comment
    detail::put16(central, 0);  // disk
    detail::put16(central, 0);  // internal attributes
    detail::put32(central, 0);  // external attributes
    detail::put32(central, offset);
    central.insert(central.end(), e.name.begin(), e.name.end());
  }
  if (out.size() + central.size() >= kMax32) throw std::length_error("zip: archive too large");

  const auto central_offset = static_cast<std::uint32_t>(out.size());
  out.insert(out.end(), central.begin(), central.end());
  detail::put32(out, 0x06054b50);
  detail::put16(out, 0);
  detail::put16(out, 0);
  detail::put16(out, static_cast<std::uint32_t>(entries.size()));
  detail::put16(out, static_cast<std::uint32_t>(entries.size()));
  detail::put32(out, static_cast<std::uint32_t>(central.size()));
  detail::put32(out, central_offset);
  detail::put16(out, 0);
  return out;
}

}  // namespace tonefit
