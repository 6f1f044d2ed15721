// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Micro-scaling element codecs.
//
// FP4 E2M1: 1 sign + 2 exponent + 1 mantissa, bias 1.
//   magnitudes {0, 0.5, 1, 1.5, 2, 3, 4, 6}, code = sign<<3 | lattice index.
// FP8 E4M3: 1 sign + 4 exponent + 3 mantissa, bias 7, subnormals included,
//   no infinities, max normal 448; S.1111.111 (NaN) is not a valid code.
// Group scale: one power of two per group, stored as a signed exponent in
//   [-127, 127]; kZeroGroupScale marks an all-zero group (scale 1 on dequant).
//
// Rounding is round-to-nearest-even on the code lattice with a saturating
// clamp at +-max_normal.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "osc/errors.hpp"

namespace osc {

enum class ElementFormat : uint8_t {
    fp4_e2m1 = 0,
    fp8_e4m3 = 1,
};

constexpr int8_t kZeroGroupScale = -128;

inline const char* to_string(ElementFormat f) {
    return f == ElementFormat::fp4_e2m1 ? "fp4_e2m1" : "fp8_e4m3";
}

inline ElementFormat element_format_from_string(std::string_view s) {
    if (s == "fp4" || s == "fp4_e2m1") return ElementFormat::fp4_e2m1;
    if (s == "fp8" || s == "fp8_e4m3") return ElementFormat::fp8_e4m3;
    throw validation_error("unknown element format: '" + std::string(s) + "'");
}

namespace detail {

inline const std::array<float, 8>& fp4_magnitudes() {
    static const std::array<float, 8> k = {0.0f, 0.5f, 1.0f, 1.5f,
                                           2.0f, 3.0f, 4.0f, 6.0f};
    return k;
}

// Magnitudes for raw exponent/mantissa bits 0..126 (0x7F is NaN, excluded).
inline const std::array<float, 127>& fp8_magnitudes() {
    static const std::array<float, 127> k = [] {
        std::array<float, 127> m{};
        for (int bits = 0; bits < 127; ++bits) {
            int e = bits >> 3;
            int frac = bits & 7;
            m[bits] = (e == 0)
                          ? std::ldexp(static_cast<float>(frac), -9)
                          : std::ldexp(1.0f + static_cast<float>(frac) / 8.0f,
                                       e - 7);
        }
        return m;
    }();
    return k;
}

// Nearest lattice index for a nonnegative magnitude; exact midpoints go to
// the even index, values beyond the last entry saturate. All arithmetic in
// double: differences of adjacent fp32 lattice values are exact there, so
// ties are detected exactly.
inline int encode_magnitude(double mag, std::span<const float> book) {
    const int last = static_cast<int>(book.size()) - 1;
    if (mag >= static_cast<double>(book[last])) return last;
    auto it = std::lower_bound(book.begin(), book.end(), mag,
                               [](float b, double v) {
                                   return static_cast<double>(b) < v;
                               });
    int idx = static_cast<int>(it - book.begin());
    if (static_cast<double>(book[idx]) == mag) return idx;
    double d_lo = mag - static_cast<double>(book[idx - 1]);
    double d_hi = static_cast<double>(book[idx]) - mag;
    if (d_lo < d_hi) return idx - 1;
    if (d_hi < d_lo) return idx;
    return ((idx - 1) % 2 == 0) ? idx - 1 : idx;
}

} // namespace detail

inline std::span<const float> magnitude_codebook(ElementFormat f) {
    if (f == ElementFormat::fp4_e2m1) return detail::fp4_magnitudes();
    return detail::fp8_magnitudes();
}

inline double max_normal(ElementFormat f) {
    return f == ElementFormat::fp4_e2m1 ? 6.0 : 448.0;
}

// Exponent of the largest normal value: floor(log2(max_normal)).
inline int element_emax(ElementFormat f) {
    return f == ElementFormat::fp4_e2m1 ? 2 : 8;
}

inline int code_bits(ElementFormat f) {
    return f == ElementFormat::fp4_e2m1 ? 4 : 8;
}

// Half of the widest spacing between adjacent magnitudes; the worst-case
// rounding error for non-saturating values is scale * this.
inline double half_max_codebook_gap(ElementFormat f) {
    auto book = magnitude_codebook(f);
    double g = 0.0;
    for (size_t i = 1; i < book.size(); ++i)
        g = std::max(g, static_cast<double>(book[i]) -
                            static_cast<double>(book[i - 1]));
    return g / 2.0;
}

// Encodes a scaled value (value / 2^scale_exp). Zero magnitudes canonicalize
// to the +0 code so quantized streams never carry a negative zero.
inline uint8_t encode_element(ElementFormat f, double scaled) {
    bool neg = std::signbit(scaled);
    double mag = std::fabs(scaled);
    if (f == ElementFormat::fp4_e2m1) {
        int idx = detail::encode_magnitude(mag, detail::fp4_magnitudes());
        if (idx == 0) return 0;
        return static_cast<uint8_t>((neg ? 0x8 : 0x0) | idx);
    }
    int idx = detail::encode_magnitude(mag, detail::fp8_magnitudes());
    if (idx == 0) return 0;
    return static_cast<uint8_t>((neg ? 0x80 : 0x00) | idx);
}

inline float decode_element(ElementFormat f, uint8_t code) {
    if (f == ElementFormat::fp4_e2m1) {
        if (code > 0xF)
            throw validation_error("fp4 code out of range: " +
                                   std::to_string(code));
        float v = detail::fp4_magnitudes()[code & 0x7];
        return (code & 0x8) ? -v : v;
    }
    uint8_t bits = code & 0x7F;
    if (bits == 0x7F)
        throw validation_error("fp8 e4m3 NaN bit pattern is not a valid code");
    float v = detail::fp8_magnitudes()[bits];
    return (code & 0x80) ? -v : v;
}

// Shared-scale rule: exponent = floor(log2(max|v|)) - element_emax, clamped
// to the representable [-127, 127]; all-zero groups get the reserved marker.
inline int8_t compute_group_scale(std::span<const float> values,
                                  ElementFormat f) {
    double amax = 0.0;
    for (float v : values) {
        if (!std::isfinite(v))
            throw validation_error("group contains a non-finite value");
        amax = std::max(amax, std::fabs(static_cast<double>(v)));
    }
    if (amax == 0.0) return kZeroGroupScale;
    int e = std::ilogb(amax) - element_emax(f);
    e = std::clamp(e, -127, 127);
    return static_cast<int8_t>(e);
}

inline int effective_scale_exp(int8_t scale) {
    return scale == kZeroGroupScale ? 0 : scale;
}

inline float scale_value(int8_t scale) {
    return std::ldexp(1.0f, effective_scale_exp(scale));
}

struct GroupCodes {
    std::vector<uint8_t> codes;
    int8_t scale = kZeroGroupScale;
};

inline GroupCodes quantize_group(std::span<const float> values,
                                 ElementFormat f) {
    GroupCodes out;
    out.scale = compute_group_scale(values, f);
    int e = effective_scale_exp(out.scale);
    out.codes.reserve(values.size());
    for (float v : values) {
        // v / 2^e is exact in double across the whole fp32 range
        double scaled = std::ldexp(static_cast<double>(v), -e);
        out.codes.push_back(encode_element(f, scaled));
    }
    return out;
}

inline std::vector<float> dequantize_group(std::span<const uint8_t> codes,
                                           int8_t scale, ElementFormat f) {
    int e = effective_scale_exp(scale);
    std::vector<float> out;
    out.reserve(codes.size());
    for (uint8_t c : codes) out.push_back(std::ldexp(decode_element(f, c), e));
    return out;
}

} // namespace osc
