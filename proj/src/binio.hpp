#pragma once

// Little-endian fixed-width helpers shared by the binary formats.

#include "deepwas/common.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <type_traits>
#include <vector>

namespace deepwas::binio {

template <class T>
void put(std::vector<char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

inline void put_magic(std::vector<char>& out, const char (&magic)[5]) {
  out.insert(out.end(), magic, magic + 4);
}

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string what) : buf_(std::move(bytes)), what_(std::move(what)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    std::array<char, sizeof(T)> bytes;
    std::memcpy(bytes.data(), buf_.data() + pos_, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
    pos_ += sizeof(T);
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
  }

  void expect_magic(const char (&magic)[5]) {
    need(4);
    if (std::memcmp(buf_.data() + pos_, magic, 4) != 0)
      throw FormatError(what_ + ": bad magic, expected " + std::string(magic, 4));
    pos_ += 4;
  }

  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return buf_.size() - pos_; }

  void expect_end() const {
    if (pos_ != buf_.size())
      throw FormatError(what_ + ": " + std::to_string(buf_.size() - pos_) + " trailing bytes");
  }

 private:
  void need(std::size_t n) const {
    if (buf_.size() - pos_ < n) throw FormatError(what_ + ": truncated file");
  }

  std::vector<char> buf_;
  std::size_t pos_ = 0;
  std::string what_;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed: " + path.string());
  return bytes;
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open for writing: " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

}  // namespace deepwas::binio
