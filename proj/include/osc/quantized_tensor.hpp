// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Group-quantized tensor storage plus the "OQT1" container:
//
//   bytes 0..3   magic "OQT1"
//   byte  4      u8 version (1)
//   byte  5      u8 element format code (ElementFormat)
//   byte  6      u8 rank (2)
//   byte  7      padding (0)
//   ...          2 x u64 little-endian dims (rows, cols)
//   ...          u32 group size
//   ...          codes section   (fp4: two codes per byte, low nibble =
//                                 even flat element index; fp8: one byte each)
//   ...          scales section  (rows * cols/G signed exponents, int8;
//                                 -128 marks an all-zero group)
//   [optional]   u32 length + UTF-8 JSON metadata block
#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "osc/mx_format.hpp"
#include "osc/tensor.hpp"
#include "osc/tensor_io.hpp"
#include "osc/version.hpp"

namespace osc {

// Row-major rows x cols code matrix; each row is split into cols/G groups of
// G consecutive elements sharing one scale exponent. Weights are stored
// output-major (rows = out channels, cols = in channels) so that grouping
// always runs along the contiguous axis.
struct QuantizedBlockTensor {
    int64_t rows = 0;
    int64_t cols = 0;
    ElementFormat format = ElementFormat::fp4_e2m1;
    int32_t group_size = 0;
    std::vector<uint8_t> codes;
    std::vector<int8_t> scales;
    std::string meta;

    int64_t groups_per_row() const { return cols / group_size; }
    int64_t element_count() const { return rows * cols; }
    int64_t code_bytes() const {
        return format == ElementFormat::fp4_e2m1 ? (element_count() + 1) / 2
                                                 : element_count();
    }

    uint8_t code_at(int64_t flat) const {
        if (format == ElementFormat::fp4_e2m1) {
            uint8_t b = codes[flat >> 1];
            return (flat & 1) ? (b >> 4) : (b & 0xF);
        }
        return codes[flat];
    }

    void set_code(int64_t flat, uint8_t code) {
        if (format == ElementFormat::fp4_e2m1) {
            uint8_t& b = codes[flat >> 1];
            if (flat & 1)
                b = static_cast<uint8_t>((b & 0x0F) | (code << 4));
            else
                b = static_cast<uint8_t>((b & 0xF0) | (code & 0x0F));
        } else {
            codes[flat] = code;
        }
    }

    int8_t scale_at(int64_t row, int64_t group) const {
        return scales[row * groups_per_row() + group];
    }

    bool operator==(const QuantizedBlockTensor& o) const {
        return rows == o.rows && cols == o.cols && format == o.format &&
               group_size == o.group_size && codes == o.codes &&
               scales == o.scales;
    }
};

// Quantizes a row-major matrix, grouping G consecutive elements per row.
inline QuantizedBlockTensor quantize_rows(const float* data, int64_t rows,
                                          int64_t cols, int32_t group_size,
                                          ElementFormat fmt) {
    GroupSpec g = GroupSpec::for_channels(cols, group_size);
    QuantizedBlockTensor q;
    q.rows = rows;
    q.cols = cols;
    q.format = fmt;
    q.group_size = group_size;
    q.codes.assign(static_cast<size_t>(q.code_bytes()), 0);
    q.scales.resize(static_cast<size_t>(rows * g.group_count));
    for (int64_t r = 0; r < rows; ++r) {
        const float* row = data + r * cols;
        for (int64_t k = 0; k < g.group_count; ++k) {
            std::span<const float> grp(row + k * group_size,
                                       static_cast<size_t>(group_size));
            int8_t scale = compute_group_scale(grp, fmt);
            q.scales[r * g.group_count + k] = scale;
            int e = effective_scale_exp(scale);
            int64_t base = r * cols + k * group_size;
            for (int32_t j = 0; j < group_size; ++j) {
                double scaled = std::ldexp(static_cast<double>(grp[j]), -e);
                q.set_code(base + j, encode_element(fmt, scaled));
            }
        }
    }
    return q;
}

inline QuantizedBlockTensor quantize_tensor(const ActivationTensor& x,
                                            const GroupSpec& g,
                                            ElementFormat fmt) {
    if (x.channels() != g.channels())
        throw shape_error("activation channels do not match group spec");
    return quantize_rows(x.data().data(), x.tokens(), x.channels(),
                         g.group_size, fmt);
}

// Weights quantize along the input-channel axis; the code matrix is the
// transpose (out_channels x in_channels) so groups stay contiguous.
inline QuantizedBlockTensor quantize_weight(const WeightMatrix& w,
                                            const GroupSpec& g,
                                            ElementFormat fmt) {
    if (w.in_channels() != g.channels())
        throw shape_error("weight input channels do not match group spec");
    std::vector<float> wt(static_cast<size_t>(w.in_channels() * w.out_channels()));
    for (int64_t h = 0; h < w.in_channels(); ++h)
        for (int64_t n = 0; n < w.out_channels(); ++n)
            wt[n * w.in_channels() + h] = w.at(h, n);
    return quantize_rows(wt.data(), w.out_channels(), w.in_channels(),
                         g.group_size, fmt);
}

inline std::vector<float> dequantize(const QuantizedBlockTensor& q) {
    std::vector<float> out(static_cast<size_t>(q.element_count()));
    int64_t kpr = q.groups_per_row();
    for (int64_t r = 0; r < q.rows; ++r) {
        for (int64_t k = 0; k < kpr; ++k) {
            int e = effective_scale_exp(q.scales[r * kpr + k]);
            int64_t base = r * q.cols + k * q.group_size;
            for (int32_t j = 0; j < q.group_size; ++j)
                out[base + j] =
                    std::ldexp(decode_element(q.format, q.code_at(base + j)), e);
        }
    }
    return out;
}

// --- OQT1 container --------------------------------------------------------

inline std::string encode_oqt(const QuantizedBlockTensor& q) {
    std::string out;
    out.append("OQT1", 4);
    out.push_back(static_cast<char>(kOqtVersion));
    out.push_back(static_cast<char>(q.format));
    out.push_back(2);
    out.push_back(0);
    detail::append_le(out, static_cast<uint64_t>(q.rows));
    detail::append_le(out, static_cast<uint64_t>(q.cols));
    detail::append_le(out, static_cast<uint32_t>(q.group_size));
    out.append(reinterpret_cast<const char*>(q.codes.data()), q.codes.size());
    out.append(reinterpret_cast<const char*>(q.scales.data()), q.scales.size());
    if (!q.meta.empty()) {
        detail::append_le(out, static_cast<uint32_t>(q.meta.size()));
        out.append(q.meta);
    }
    return out;
}

inline void save_quantized(const QuantizedBlockTensor& q,
                           const std::filesystem::path& path) {
    if (static_cast<int64_t>(q.codes.size()) != q.code_bytes() ||
        static_cast<int64_t>(q.scales.size()) != q.rows * q.groups_per_row())
        throw validation_error("quantized tensor sections do not match dims");
    detail::atomic_write(path, encode_oqt(q));
}

inline QuantizedBlockTensor load_quantized(const std::filesystem::path& path) {
    detail::FileReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "OQT1", 4) != 0)
        throw io_error(io_error::code::bad_magic,
                       r.path() + ": bad magic, not an OQT1 file");
    uint8_t header[4];
    r.read(header, 4, "header");
    if (header[0] != kOqtVersion)
        throw io_error(io_error::code::bad_version,
                       r.path() + ": OQT1 version " + std::to_string(header[0]) +
                           " unsupported");
    if (header[1] > 1)
        throw io_error(io_error::code::bad_dtype,
                       r.path() + ": unknown element format code " +
                           std::to_string(header[1]));
    if (header[2] != 2)
        throw io_error(io_error::code::bad_header,
                       r.path() + ": OQT1 rank must be 2");
    QuantizedBlockTensor q;
    q.format = static_cast<ElementFormat>(header[1]);
    uint64_t dims[2];
    r.read(dims, 16, "dims");
    uint32_t gsize = 0;
    r.read(&gsize, 4, "group size");
    q.rows = static_cast<int64_t>(dims[0]);
    q.cols = static_cast<int64_t>(dims[1]);
    q.group_size = static_cast<int32_t>(gsize);
    if (q.rows <= 0 || q.cols <= 0 || q.group_size <= 0 ||
        q.cols % q.group_size != 0 || q.element_count() > (int64_t(1) << 33))
        throw io_error(io_error::code::bad_header,
                       r.path() + ": implausible OQT1 geometry");
    q.codes.resize(static_cast<size_t>(q.code_bytes()));
    r.read(q.codes.data(), q.codes.size(), "codes");
    q.scales.resize(static_cast<size_t>(q.rows * q.groups_per_row()));
    r.read(q.scales.data(), q.scales.size(), "scales");
    if (q.format == ElementFormat::fp8_e4m3) {
        for (size_t i = 0; i < q.codes.size(); ++i)
            if ((q.codes[i] & 0x7F) == 0x7F)
                throw io_error(io_error::code::non_finite,
                               r.path() + ": NaN element code at index " +
                                   std::to_string(i));
    }
    if (!r.at_eof()) {
        uint32_t len = 0;
        r.read(&len, 4, "metadata length");
        q.meta.resize(len);
        if (len) r.read(q.meta.data(), len, "metadata");
    }
    return q;
}

} // namespace osc
