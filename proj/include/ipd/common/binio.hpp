#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace ipd::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

struct TruncatedRead : std::runtime_error {
  using std::runtime_error::runtime_error;
};

template <typename T>
inline void write_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
inline T read_raw(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw TruncatedRead("unexpected end of file");
  return v;
}

inline void write_u32(std::ostream& os, uint32_t v) { write_raw(os, v); }
inline void write_u64(std::ostream& os, uint64_t v) { write_raw(os, v); }
inline void write_i64(std::ostream& os, int64_t v) { write_raw(os, v); }
inline void write_u8(std::ostream& os, uint8_t v) { write_raw(os, v); }
inline void write_f32(std::ostream& os, float v) { write_raw(os, v); }
inline void write_f64(std::ostream& os, double v) { write_raw(os, v); }

inline uint32_t read_u32(std::istream& is) { return read_raw<uint32_t>(is); }
inline uint64_t read_u64(std::istream& is) { return read_raw<uint64_t>(is); }
inline int64_t read_i64(std::istream& is) { return read_raw<int64_t>(is); }
inline uint8_t read_u8(std::istream& is) { return read_raw<uint8_t>(is); }
inline float read_f32(std::istream& is) { return read_raw<float>(is); }
inline double read_f64(std::istream& is) { return read_raw<double>(is); }

inline void write_string(std::ostream& os, const std::string& s) {
  write_u32(os, static_cast<uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
  const uint32_t n = read_u32(is);
  std::string s(n, '\0');
  is.read(s.data(), n);
  if (!is) throw TruncatedRead("unexpected end of file in string");
  return s;
}

}  // namespace ipd::binio
