#pragma once

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>
#include <vector>

#include "errors.hpp"

namespace gcpx::io {

// Little-endian byte buffer writer.
class ByteWriter {
 public:
  void magic(std::string_view tag) { bytes_.insert(bytes_.end(), tag.begin(), tag.end()); }

  void u32(std::uint32_t v) { put(v); }

  void f64(double v) { put(std::bit_cast<std::uint64_t>(v)); }

  const std::vector<char>& bytes() const { return bytes_; }

 private:
  template <typename U>
  void put(U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      bytes_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
  }

  std::vector<char> bytes_;
};

// Little-endian reader over an in-memory buffer. Every failure reports the
// byte offset at which it was detected.
class ByteReader {
 public:
  ByteReader(std::vector<char> bytes, std::string source)
      : bytes_(std::move(bytes)), source_(std::move(source)) {}

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, tag.data(), tag.size()) != 0) {
      fail("bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  std::uint32_t u32(const char* field) { return get<std::uint32_t>(field); }

  double f64(const char* field) {
    const std::size_t at = pos_;
    const double v = std::bit_cast<double>(get<std::uint64_t>(field));
    if (!std::isfinite(v)) {
      throw FormatError(source_ + ": non-finite value in " + field, at);
    }
    return v;
  }

  void expect_end() {
    if (pos_ != bytes_.size()) fail("trailing bytes after payload");
  }

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  [[noreturn]] void fail(const std::string& what) const {
    throw FormatError(source_ + ": " + what, pos_);
  }

 private:
  void need(std::size_t n, const char* field) const {
    if (bytes_.size() - pos_ < n) {
      fail(std::string("truncated while reading ") + field);
    }
  }

  template <typename U>
  U get(const char* field) {
    need(sizeof(U), field);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) {
      v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += sizeof(U);
    return v;
  }

  std::vector<char> bytes_;
  std::string source_;
  std::size_t pos_ = 0;
};

inline std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string() + " for reading", 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Writes to a sibling temporary file and renames it over the target, so a
// reader never sees a partially written file.
inline void write_file(const std::filesystem::path& path, const char* data, std::size_t size) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + tmp.string() + " for writing");
    out.write(data, static_cast<std::streamsize>(size));
    if (!out) throw DataError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_file(const std::filesystem::path& path, const std::vector<char>& bytes) {
  write_file(path, bytes.data(), bytes.size());
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  write_file(path, text.data(), text.size());
}

}  // namespace gcpx::io
