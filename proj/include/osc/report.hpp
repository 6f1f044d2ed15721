// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Zero-dependency image/report emission: binary PGM (P5) masks and
// magnitude heatmaps for the token x channel panels.
#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "osc/errors.hpp"
#include "osc/tensor.hpp"
#include "osc/tensor_io.hpp"

namespace osc {

inline std::string encode_pgm(int64_t width, int64_t height,
                              std::span<const uint8_t> pixels) {
    if (static_cast<int64_t>(pixels.size()) != width * height)
        throw shape_error("PGM pixel count does not match dimensions");
    std::string out = "P5\n" + std::to_string(width) + " " +
                      std::to_string(height) + "\n255\n";
    out.append(reinterpret_cast<const char*>(pixels.data()), pixels.size());
    return out;
}

inline void write_pgm(const std::filesystem::path& path, int64_t width,
                      int64_t height, std::span<const uint8_t> pixels) {
    detail::atomic_write(path, encode_pgm(width, height, pixels));
}

// 0/1 mask bits -> 0/255 pixels (outliers render white).
inline std::vector<uint8_t> render_mask(std::span<const uint8_t> mask) {
    std::vector<uint8_t> px(mask.size());
    for (size_t i = 0; i < mask.size(); ++i) px[i] = mask[i] ? 255 : 0;
    return px;
}

// Magnitude heatmap: pixel = floor(255 * rank(|x|) / (count - 1)), where
// rank is the index of the first occurrence of |x| in the sorted magnitude
// list. The mapping is a monotone function of |x| (the empirical CDF), so
// brighter always means larger.
inline std::vector<uint8_t> render_magnitude_heatmap(const ActivationTensor& x) {
    const auto& d = x.data();
    std::vector<float> mags(d.size());
    for (size_t i = 0; i < d.size(); ++i) mags[i] = std::fabs(d[i]);
    std::vector<float> sorted = mags;
    std::sort(sorted.begin(), sorted.end());
    const double denom =
        sorted.size() > 1 ? static_cast<double>(sorted.size() - 1) : 1.0;
    std::vector<uint8_t> px(d.size());
    for (size_t i = 0; i < d.size(); ++i) {
        auto it = std::lower_bound(sorted.begin(), sorted.end(), mags[i]);
        double rank = static_cast<double>(it - sorted.begin());
        px[i] = static_cast<uint8_t>(255.0 * rank / denom);
    }
    return px;
}

} // namespace osc
