#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <stdexcept>
#include <string>

// Little-endian primitives for the binary containers.

namespace msr::binio {

template <typename U>
void put(std::ostream& out, U v) {
    unsigned char b[sizeof(U)];
    for (std::size_t i = 0; i < sizeof(U); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), sizeof(U));
}

inline void put_f32(std::ostream& out, float f) { put(out, std::bit_cast<std::uint32_t>(f)); }

template <typename U>
U get(std::istream& in, const std::string& what) {
    unsigned char b[sizeof(U)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(U))) throw std::runtime_error("truncated " + what);
    U v = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) v |= static_cast<U>(static_cast<U>(b[i]) << (8 * i));
    return v;
}

inline float get_f32(std::istream& in, const std::string& what) {
    return std::bit_cast<float>(get<std::uint32_t>(in, what));
}

inline void put_f32_array(std::ostream& out, const float* v, std::size_t n) {
    std::string buf(4 * n, '\0');
    for (std::size_t i = 0; i < n; ++i) {
        const auto u = std::bit_cast<std::uint32_t>(v[i]);
        for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<char>(u >> (8 * k));
    }
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline void get_f32_array(std::istream& in, float* v, std::size_t n, const std::string& what) {
    std::string buf(4 * n, '\0');
    if (!in.read(buf.data(), static_cast<std::streamsize>(buf.size()))) throw std::runtime_error("truncated " + what);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint32_t u = 0;
        for (int k = 0; k < 4; ++k) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[4 * i + k])) << (8 * k);
        v[i] = std::bit_cast<float>(u);
    }
}

}  // namespace msr::binio
