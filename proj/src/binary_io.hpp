#pragma once

// Little-endian primitives for the CPCF and CPCM file formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>

#include "cpc/errors.hpp"

namespace cpc::binio {

inline void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

inline void put_f64(std::ostream& out, double v) { put_u64(out, std::bit_cast<std::uint64_t>(v)); }
inline void put_f32(std::ostream& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

inline void read_exact(std::istream& in, void* dst, std::size_t n, const std::string& what) {
    in.read(static_cast<char*>(dst), static_cast<std::streamsize>(n));
    if (in.gcount() != static_cast<std::streamsize>(n)) throw IoError("truncated " + what);
}

inline std::uint32_t get_u32(std::istream& in, const std::string& what) {
    unsigned char b[4];
    read_exact(in, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

inline std::uint64_t get_u64(std::istream& in, const std::string& what) {
    unsigned char b[8];
    read_exact(in, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

inline double get_f64(std::istream& in, const std::string& what) { return std::bit_cast<double>(get_u64(in, what)); }
inline float get_f32(std::istream& in, const std::string& what) { return std::bit_cast<float>(get_u32(in, what)); }

inline void expect_magic(std::istream& in, const char (&magic)[5], const std::string& what) {
    char buf[4];
    read_exact(in, buf, 4, what);
    if (std::memcmp(buf, magic, 4) != 0) throw IoError(what + ": bad magic, expected " + magic);
}

}  // namespace cpc::binio
