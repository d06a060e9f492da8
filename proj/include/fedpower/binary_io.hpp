#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>

#include "fedpower/error.hpp"

namespace fedpower::binary {

inline void put_u32_le(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                                static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
    os.write(b.data(), 4);
}

inline void put_u32_be(std::ostream& os, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>((v >> 24) & 0xFF), static_cast<char>((v >> 16) & 0xFF),
                                static_cast<char>((v >> 8) & 0xFF), static_cast<char>(v & 0xFF)};
    os.write(b.data(), 4);
}

inline void put_f64_le(std::ostream& os, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    std::array<char, 8> b{};
    for (auto& c : b) {
        c = static_cast<char>(bits & 0xFF);
        bits >>= 8;
    }
    os.write(b.data(), 8);
}

inline void put_u8(std::ostream& os, std::uint8_t v) { os.put(static_cast<char>(v)); }

inline void read_exact(std::istream& is, char* dst, std::size_t n, std::string_view what) {
    is.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n) {
        throw LengthError("truncated " + std::string(what) + ": expected " + std::to_string(n) +
                          " bytes, got " + std::to_string(is.gcount()));
    }
}

inline std::uint32_t get_u32_le(std::istream& is, std::string_view what) {
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 4, what);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint32_t get_u32_be(std::istream& is, std::string_view what) {
    std::array<unsigned char, 4> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 4, what);
    return (static_cast<std::uint32_t>(b[0]) << 24) | (static_cast<std::uint32_t>(b[1]) << 16) |
           (static_cast<std::uint32_t>(b[2]) << 8) | static_cast<std::uint32_t>(b[3]);
}

inline double get_f64_le(std::istream& is, std::string_view what) {
    std::array<unsigned char, 8> b{};
    read_exact(is, reinterpret_cast<char*>(b.data()), 8, what);
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | b[static_cast<std::size_t>(i)];
    return std::bit_cast<double>(bits);
}

inline std::uint8_t get_u8(std::istream& is, std::string_view what) {
    char c = 0;
    read_exact(is, &c, 1, what);
    return static_cast<std::uint8_t>(c);
}

inline void expect_magic(std::istream& is, std::string_view magic, std::string_view what) {
    std::string got(magic.size(), '\0');
    read_exact(is, got.data(), got.size(), what);
    if (got != magic) {
        throw FormatError("bad magic in " + std::string(what) + ": expected \"" + std::string(magic) + "\"");
    }
}

} // namespace fedpower::binary
