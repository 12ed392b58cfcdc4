#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <type_traits>

#include "atlas/error.hpp"

namespace atlas::io {

template <typename T>
T to_little_endian(T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  if constexpr (std::endian::native == std::endian::big && sizeof(T) > 1) {
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &value, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(bytes[i], bytes[sizeof(T) - 1 - i]);
    std::memcpy(&value, bytes, sizeof(T));
  }
  return value;
}

// Append-only little-endian encoder into an in-memory buffer.
class Writer {
 public:
  template <typename T>
  void put(T value) {
    value = to_little_endian(value);
    const auto* p = reinterpret_cast<const char*>(&value);
    buffer_.append(p, sizeof(T));
  }

  template <typename T>
  void put_array(std::span<const T> values) {
    if constexpr (std::endian::native == std::endian::little) {
      buffer_.append(reinterpret_cast<const char*>(values.data()), values.size_bytes());
    } else {
      for (const T& v : values) put(v);
    }
  }

  void put_bytes(std::string_view bytes) { buffer_.append(bytes); }

  const std::string& bytes() const& { return buffer_; }
  std::string bytes() && { return std::move(buffer_); }

 private:
  std::string buffer_;
};

// Bounds-checked little-endian decoder. Every read past the end throws
// kCorruptData with "truncated payload".
class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename T>
  T get() {
    ensure(sizeof(T));
    T value;
    std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return to_little_endian(value);
  }

  template <typename T>
  void get_array(std::span<T> out) {
    ensure(out.size_bytes());
    std::memcpy(out.data(), bytes_.data() + pos_, out.size_bytes());
    pos_ += out.size_bytes();
    if constexpr (std::endian::native == std::endian::big) {
      for (T& v : out) v = to_little_endian(v);
    }
  }

  std::string_view get_bytes(std::size_t n) {
    ensure(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  void expect_magic(std::string_view magic) {
    if (remaining() < magic.size() || bytes_.substr(pos_, magic.size()) != magic) {
      fail(ErrorCode::kCorruptData, "bad magic: expected '" + std::string(magic) + "'");
    }
    pos_ += magic.size();
  }

  std::size_t remaining() const noexcept { return bytes_.size() - pos_; }
  std::size_t position() const noexcept { return pos_; }

 private:
  void ensure(std::size_t n) const {
    if (remaining() < n) fail(ErrorCode::kCorruptData, "truncated payload");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

std::string read_file(const std::filesystem::path& path);
// Writes through a temporary sibling and renames, so readers never see a
// partially written artifact.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace atlas::io
