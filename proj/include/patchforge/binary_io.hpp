#pragma once

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

namespace patchforge {

// Little-endian primitives for the binary snapshot formats. Values are
// assembled byte by byte so the files mean the same thing on any host.

inline void write_u32(std::ostream& os, std::uint32_t x) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 4);
}

inline void write_u64(std::ostream& os, std::uint64_t x) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((x >> (8 * i)) & 0xff);
    os.write(reinterpret_cast<const char*>(b), 8);
}

inline void write_u8(std::ostream& os, std::uint8_t x) {
    os.write(reinterpret_cast<const char*>(&x), 1);
}

inline void write_f32(std::ostream& os, float x) {
    write_u32(os, std::bit_cast<std::uint32_t>(x));
}

inline void write_f64(std::ostream& os, double x) {
    write_u64(os, std::bit_cast<std::uint64_t>(x));
}

inline std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    if (!is.read(reinterpret_cast<char*>(b), 4))
        throw std::runtime_error("truncated read: " + what);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return x;
}

inline std::uint64_t read_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    if (!is.read(reinterpret_cast<char*>(b), 8))
        throw std::runtime_error("truncated read: " + what);
    std::uint64_t x = 0;
    for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return x;
}

inline std::uint8_t read_u8(std::istream& is, const std::string& what) {
    std::uint8_t x;
    if (!is.read(reinterpret_cast<char*>(&x), 1))
        throw std::runtime_error("truncated read: " + what);
    return x;
}

inline float read_f32(std::istream& is, const std::string& what) {
    return std::bit_cast<float>(read_u32(is, what));
}

inline double read_f64(std::istream& is, const std::string& what) {
    return std::bit_cast<double>(read_u64(is, what));
}

inline void write_magic(std::ostream& os, const char magic[4]) {
    os.write(magic, 4);
}

inline void expect_magic(std::istream& is, const char magic[4], const std::string& what) {
    char got[4];
    if (!is.read(got, 4) || got[0] != magic[0] || got[1] != magic[1] || got[2] != magic[2] ||
        got[3] != magic[3])
        throw std::runtime_error("bad magic, not a " + what + " file");
}

} // namespace patchforge
