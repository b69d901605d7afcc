#pragma once

// Little helpers for the versioned binary formats (dataset blobs and
// checkpoints). Values are stored in host byte order; every supported target
// is little-endian.

#include <cstdint>
#include <algorithm>
#include <cstring>
#include <string>
#include <type_traits>
#include <vector>

#include <zlib.h>

#include "hperl/types.hpp"

namespace hperl::binio {

class Writer {
 public:
  template <typename T>
  void put(const T& v) {
    static_assert(std::is_trivially_copyable_v<T>);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    bytes.insert(bytes.end(), p, p + sizeof(T));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes.insert(bytes.end(), p, p + n);
  }
  void put_string(const std::string& s) {
    put<std::uint64_t>(s.size());
    put_bytes(s.data(), s.size());
  }
  std::vector<std::uint8_t> bytes;
};

// Reads from a span; `fail` is called (and must throw) on overrun.
template <typename Fail>
class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size, Fail fail) : p_(data), end_(data + size), fail_(fail) {}
  template <typename T>
  T get() {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    get_bytes(&v, sizeof(T));
    return v;
  }
  void get_bytes(void* out, std::size_t n) {
    if (static_cast<std::size_t>(end_ - p_) < n) fail_();
    std::memcpy(out, p_, n);
    p_ += n;
  }
  std::string get_string() {
    const auto n = get<std::uint64_t>();
    if (static_cast<std::uint64_t>(end_ - p_) < n) fail_();
    std::string s(reinterpret_cast<const char*>(p_), n);
    p_ += n;
    return s;
  }
  std::size_t remaining() const { return static_cast<std::size_t>(end_ - p_); }

 private:
  const std::uint8_t* p_;
  const std::uint8_t* end_;
  Fail fail_;
};

inline std::uint32_t crc32_of(const std::uint8_t* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed large buffers in chunks.
  while (n > 0) {
    const uInt chunk = static_cast<uInt>(std::min<std::size_t>(n, 1u << 30));
    crc = crc32(crc, data, chunk);
    data += chunk;
    n -= chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

}  // namespace hperl::binio
