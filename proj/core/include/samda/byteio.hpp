#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "samda/errors.hpp"

namespace samda::byteio {

static_assert(std::endian::native == std::endian::little || std::endian::native == std::endian::big);

template <typename T>
void put(std::vector<std::uint8_t>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::uint8_t raw[sizeof(T)];
  std::memcpy(raw, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) {
    for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(raw[sizeof(T) - 1 - i]);
  } else {
    out.insert(out.end(), raw, raw + sizeof(T));
  }
}

inline void put_bytes(std::vector<std::uint8_t>& out, const void* data, std::size_t n) {
  const auto* p = static_cast<const std::uint8_t*>(data);
  out.insert(out.end(), p, p + n);
}

// Bounds-checked little-endian cursor over a byte span.
class Reader {
 public:
  Reader(std::span<const std::uint8_t> bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint8_t raw[sizeof(T)];
    if constexpr (std::endian::native == std::endian::big) {
      for (std::size_t i = 0; i < sizeof(T); ++i) raw[i] = bytes_[pos_ + sizeof(T) - 1 - i];
    } else {
      std::memcpy(raw, bytes_.data() + pos_, sizeof(T));
    }
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, raw, sizeof(T));
    return value;
  }

  std::span<const std::uint8_t> take(std::size_t n) {
    need(n);
    auto s = bytes_.subspan(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(const char (&magic)[5]) {
    auto m = take(4);
    if (std::memcmp(m.data(), magic, 4) != 0) fail("bad magic, expected \"" + std::string(magic) + "\"", 0);
  }

  [[noreturn]] void fail(const std::string& msg, std::size_t at) const {
    throw FormatError(what_ + ": " + msg, at);
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) {
      fail("truncated, needed " + std::to_string(n) + " more bytes but " + std::to_string(bytes_.size() - pos_) +
               " remain",
           pos_);
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string what_;
  std::size_t pos_ = 0;
};

}  // namespace samda::byteio
