#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "nern/error.hpp"
#include "nern/tensor.hpp"

namespace nern {

// Tensor dump: "NRT1", u8 dtype (0=f32, 1=f64), u8 rank, rank x u64 LE extents,
// then raw LE scalars.
namespace detail {

inline void put_u64le(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = (v >> (8 * i)) & 0xff;
  os.write(reinterpret_cast<const char*>(b), 8);
}

inline uint64_t get_u64le(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  if (!is) fail(ErrorCode::IoError, "truncated stream reading u64");
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= uint64_t(b[i]) << (8 * i);
  return v;
}

inline bool host_is_little_endian() {
  const uint16_t x = 1;
  return *reinterpret_cast<const unsigned char*>(&x) == 1;
}

}  // namespace detail

template <typename T>
void write_tensor(std::ostream& os, const Tensor<T>& t) {
  os.write("NRT1", 4);
  const uint8_t dt = dtype_code<T>::value;
  os.put(char(dt));
  os.put(char(t.rank()));
  for (size_t e : t.shape) detail::put_u64le(os, e);
  if (detail::host_is_little_endian()) {
    os.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.numel() * sizeof(T)));
  } else {
    for (T v : t.data) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      os.write(reinterpret_cast<const char*>(b), sizeof(T));
    }
  }
  if (!os) fail(ErrorCode::IoError, "tensor write failed");
}

template <typename T>
Tensor<T> read_tensor(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, "NRT1", 4) != 0) fail(ErrorCode::IoError, "bad tensor magic");
  const int dt = is.get();
  if (dt != dtype_code<T>::value) fail(ErrorCode::IoError, "tensor dtype mismatch");
  const int rank = is.get();
  if (rank < 1 || rank > 8) fail(ErrorCode::IoError, "bad tensor rank");
  std::vector<size_t> shape(static_cast<size_t>(rank), size_t{0});
  for (auto& e : shape) e = size_t(detail::get_u64le(is));
  Tensor<T> t(shape);
  is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.numel() * sizeof(T)));
  if (!is) fail(ErrorCode::IoError, "truncated tensor payload");
  if (!detail::host_is_little_endian()) {
    for (T& v : t.data) {
      unsigned char b[sizeof(T)];
      std::memcpy(b, &v, sizeof(T));
      for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
      std::memcpy(&v, b, sizeof(T));
    }
  }
  return t;
}

template <typename T>
void save_tensor(const std::string& path, const Tensor<T>& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for write: " + path);
  write_tensor(f, t);
}

template <typename T>
Tensor<T> load_tensor(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for read: " + path);
  return read_tensor<T>(f);
}

// Binary PGM (P5), 8-bit.
inline void write_pgm(const std::string& path, const std::vector<uint8_t>& pix, size_t w,
                      size_t h) {
  if (pix.size() != w * h) fail(ErrorCode::ShapeMismatch, "pgm pixel count mismatch");
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for write: " + path);
  f << "P5\n" << w << " " << h << "\n255\n";
  f.write(reinterpret_cast<const char*>(pix.data()), std::streamsize(pix.size()));
  if (!f) fail(ErrorCode::IoError, "pgm write failed");
}

// FNV-1a over a string; used as the config hash embedded in artifacts.
inline uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i) {
    s[size_t(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return s;
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for read: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

inline void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) fail(ErrorCode::IoError, "cannot open for write: " + path);
  f.write(content.data(), std::streamsize(content.size()));
  if (!f) fail(ErrorCode::IoError, "write failed: " + path);
}

}  // namespace nern
