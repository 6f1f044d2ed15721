// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "osc/errors.hpp"

namespace osc {

// The four projection inputs that run through quantized GEMMs.
enum class PositionId : uint8_t {
    attention_in = 0,
    wo_in = 1,
    w1w3_in = 2,
    w2_in = 3,
};

constexpr int kPositionCount = 4;

inline const char* to_string(PositionId p) {
    switch (p) {
    case PositionId::attention_in: return "attention_in";
    case PositionId::wo_in: return "wo_in";
    case PositionId::w1w3_in: return "w1w3_in";
    case PositionId::w2_in: return "w2_in";
    }
    return "?";
}

inline PositionId position_from_string(std::string_view s) {
    if (s == "attention_in") return PositionId::attention_in;
    if (s == "wo_in") return PositionId::wo_in;
    if (s == "w1w3_in") return PositionId::w1w3_in;
    if (s == "w2_in") return PositionId::w2_in;
    throw validation_error("unknown position name: '" + std::string(s) + "'");
}

inline std::vector<PositionId> all_positions() {
    return {PositionId::attention_in, PositionId::wo_in, PositionId::w1w3_in,
            PositionId::w2_in};
}

// Channel grouping: K disjoint groups of G consecutive channels.
//
// The library accepts any group size that divides the channel count; the
// hardware-format sizes {16, 32, 64} are enforced at the CLI boundary.
struct GroupSpec {
    int32_t group_size = 0;
    int64_t group_count = 0;

    static GroupSpec for_channels(int64_t channels, int32_t group_size) {
        if (group_size <= 0)
            throw shape_error("group size must be positive, got " +
                              std::to_string(group_size));
        if (channels <= 0 || channels % group_size != 0)
            throw shape_error("channel count " + std::to_string(channels) +
                              " is not divisible by group size " +
                              std::to_string(group_size));
        return GroupSpec{group_size, channels / group_size};
    }

    int64_t channels() const { return group_count * group_size; }

    static bool is_hardware_size(int32_t g) {
        return g == 16 || g == 32 || g == 64;
    }
};

namespace detail {

inline void check_finite(const std::vector<float>& data, const char* what) {
    for (size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i]))
            throw validation_error(std::string(what) +
                                   ": non-finite value at flat index " +
                                   std::to_string(i));
    }
}

} // namespace detail

// Token-major activation matrix: tokens() x channels(), row-major fp32.
// Any leading batch dimension is flattened into the token axis at
// construction. Immutable after construction.
class ActivationTensor {
public:
    ActivationTensor(int64_t tokens, int64_t channels, std::vector<float> data,
                     PositionId position = PositionId::attention_in,
                     int32_t layer = 0)
        : tokens_(tokens), channels_(channels), data_(std::move(data)),
          position_(position), layer_(layer) {
        if (tokens_ <= 0 || channels_ <= 0)
            throw shape_error("activation dims must be positive");
        if (static_cast<int64_t>(data_.size()) != tokens_ * channels_)
            throw shape_error("activation payload has " +
                              std::to_string(data_.size()) +
                              " values, expected " +
                              std::to_string(tokens_ * channels_));
        detail::check_finite(data_, "activation tensor");
    }

    // Appends zero channels until `group_size` divides the channel count.
    ActivationTensor padded_to_multiple(int32_t group_size) const {
        int64_t rem = channels_ % group_size;
        if (rem == 0) return *this;
        int64_t padded = channels_ + (group_size - rem);
        std::vector<float> out(static_cast<size_t>(tokens_ * padded), 0.0f);
        for (int64_t s = 0; s < tokens_; ++s)
            std::copy(data_.begin() + s * channels_,
                      data_.begin() + (s + 1) * channels_,
                      out.begin() + s * padded);
        return ActivationTensor(tokens_, padded, std::move(out), position_, layer_);
    }

    int64_t tokens() const { return tokens_; }
    int64_t channels() const { return channels_; }
    const std::vector<float>& data() const { return data_; }
    float at(int64_t s, int64_t j) const { return data_[s * channels_ + j]; }
    PositionId position() const { return position_; }
    int32_t layer() const { return layer_; }

private:
    int64_t tokens_;
    int64_t channels_;
    std::vector<float> data_;
    PositionId position_;
    int32_t layer_;
};

// Row-major in_channels() x out_channels() fp32 weight matrix.
class WeightMatrix {
public:
    WeightMatrix(int64_t in_channels, int64_t out_channels,
                 std::vector<float> data)
        : in_(in_channels), out_(out_channels), data_(std::move(data)) {
        if (in_ <= 0 || out_ <= 0)
            throw shape_error("weight dims must be positive");
        if (static_cast<int64_t>(data_.size()) != in_ * out_)
            throw shape_error("weight payload has " +
                              std::to_string(data_.size()) +
                              " values, expected " + std::to_string(in_ * out_));
        detail::check_finite(data_, "weight matrix");
    }

    int64_t in_channels() const { return in_; }
    int64_t out_channels() const { return out_; }
    const std::vector<float>& data() const { return data_; }
    float at(int64_t h, int64_t n) const { return data_[h * out_ + n]; }

private:
    int64_t in_;
    int64_t out_;
    std::vector<float> data_;
};

// Zero-copy (s, k, j) indexing over an activation tensor. Element (s, k, j)
// is flat channel k*G + j of token s.
class GroupedView {
public:
    GroupedView(const ActivationTensor& x, const GroupSpec& g)
        : data_(x.data().data()), tokens_(x.tokens()), channels_(x.channels()),
          spec_(g) {
        if (channels_ != g.channels())
            throw shape_error("grouping " + std::to_string(g.group_count) +
                              "x" + std::to_string(g.group_size) +
                              " does not cover " + std::to_string(channels_) +
                              " channels");
    }

    float operator()(int64_t s, int64_t k, int64_t j) const {
        return data_[s * channels_ + k * spec_.group_size + j];
    }
    const float* group(int64_t s, int64_t k) const {
        return data_ + s * channels_ + k * spec_.group_size;
    }

    int64_t tokens() const { return tokens_; }
    int64_t groups() const { return spec_.group_count; }
    int32_t group_size() const { return spec_.group_size; }
    const GroupSpec& spec() const { return spec_; }

private:
    const float* data_;
    int64_t tokens_;
    int64_t channels_;
    GroupSpec spec_;
};

inline GroupedView reshape_grouped(const ActivationTensor& x, const GroupSpec& g) {
    return GroupedView(x, g);
}

} // namespace osc
