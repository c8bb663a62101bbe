#pragma once

#include <bit>
#include <cmath>
#include <cstdint>

namespace fusedce {

// Emulated bfloat16: values live in ordinary 32-bit floats but are rounded
// so that only the top 16 bits of the IEEE-754 encoding carry information
// (1 sign, 8 exponent, 7 mantissa bits). Rounding is to nearest, ties to
// even, on the truncated 16-bit pattern. The function is idempotent: a
// value already on the bf16 grid maps to itself.
inline float round_bf16(float x) noexcept {
    if (std::isnan(x)) {
        return x;
    }
    std::uint32_t bits = std::bit_cast<std::uint32_t>(x);
    const std::uint32_t lsb = (bits >> 16) & 1u;
    bits += 0x7FFFu + lsb;  // round half to even
    bits &= 0xFFFF0000u;
    return std::bit_cast<float>(bits);
}

// bf16 values are exactly representable in double, so the grid is defined
// by the 32-bit encoding regardless of the compute type.
inline double round_bf16(double x) noexcept {
    return static_cast<double>(round_bf16(static_cast<float>(x)));
}

inline bool is_bf16_value(float x) noexcept {
    if (std::isnan(x)) {
        return true;
    }
    return round_bf16(x) == x;
}

}  // namespace fusedce
