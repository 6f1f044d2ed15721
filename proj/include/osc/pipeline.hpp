// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Suppressed quantization and the dual-path GEMM:
//
//   Y = dequant(Q_X) . dequant(Q_W)   (Path A, low-bit base)
//     + B . W_L                       (Path B, high-precision bypass)
//
// plus the two comparison baselines (direct quantization, per-token dynamic
// max extraction) and the per-position precision policy.
//
// Every dot product accumulates in fp32 sequentially over the reduction
// index, so results are run-to-run deterministic and bit-comparable with a
// scalar reference written in the same order.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "osc/errors.hpp"
#include "osc/profiler.hpp"
#include "osc/quantized_tensor.hpp"
#include "osc/suppression_table.hpp"
#include "osc/tensor.hpp"

namespace osc {

namespace detail {

// y[m][n] = sum_k a[m][k] * bt[n][k]; bt is the transposed right operand.
inline std::vector<float> gemm_row_dot(const float* a, const float* bt,
                                       int64_t m, int64_t kdim, int64_t n) {
    std::vector<float> y(static_cast<size_t>(m * n));
    for (int64_t i = 0; i < m; ++i) {
        const float* arow = a + i * kdim;
        for (int64_t j = 0; j < n; ++j) {
            const float* brow = bt + j * kdim;
            float acc = 0.0f;
            for (int64_t k = 0; k < kdim; ++k) acc += arow[k] * brow[k];
            y[i * n + j] = acc;
        }
    }
    return y;
}

// y[m][n] += b[m][k] * c[k][n] with c row-major; k ascending per output.
inline void gemm_accumulate(const float* b, const float* c, float* y,
                            int64_t m, int64_t kdim, int64_t n) {
    for (int64_t i = 0; i < m; ++i) {
        float* yrow = y + i * n;
        for (int64_t k = 0; k < kdim; ++k) {
            float bv = b[i * kdim + k];
            const float* crow = c + k * n;
            for (int64_t j = 0; j < n; ++j) yrow[j] += bv * crow[j];
        }
    }
}

} // namespace detail

// Full-precision reference: Y = X . W in fp32.
inline std::vector<float> reference_gemm(const ActivationTensor& x,
                                         const WeightMatrix& w) {
    if (x.channels() != w.in_channels())
        throw shape_error("activation channels do not match weight rows");
    std::vector<float> y(static_cast<size_t>(x.tokens() * w.out_channels()),
                         0.0f);
    detail::gemm_accumulate(x.data().data(), w.data().data(), y.data(),
                            x.tokens(), x.channels(), w.out_channels());
    return y;
}

inline double relative_frobenius_error(std::span<const float> value,
                                       std::span<const float> reference) {
    if (value.size() != reference.size())
        throw shape_error("frobenius error operands differ in size");
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < value.size(); ++i) {
        double d = static_cast<double>(value[i]) -
                   static_cast<double>(reference[i]);
        num += d * d;
        den += static_cast<double>(reference[i]) *
               static_cast<double>(reference[i]);
    }
    if (den == 0.0) return num == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
    return std::sqrt(num / den);
}

// Extracted high-precision outliers: one slot per (token, group), zero where
// the table entry is -1. Paired with the Q_base produced by the same
// osc_quantize call.
struct OutlierBuffer {
    int64_t tokens = 0;
    int64_t groups = 0;
    std::vector<float> values;  // tokens x groups
    std::vector<int8_t> indices; // the table slice this buffer was built with

    float at(int64_t s, int64_t k) const { return values[s * groups + k]; }
};

struct OscQuantizeResult {
    QuantizedBlockTensor base;
    OutlierBuffer outliers;
};

// Algorithmic core: move each group's table-designated element into the
// buffer, zero it on a working copy, then run standard group quantization on
// the modified tensor. The input tensor is never mutated.
inline OscQuantizeResult osc_quantize(const ActivationTensor& x,
                                      std::span<const int8_t> indices,
                                      const GroupSpec& g, ElementFormat fmt) {
    if (x.channels() != g.channels())
        throw shape_error("activation channels do not match group spec");
    if (static_cast<int64_t>(indices.size()) != g.group_count)
        throw shape_error("suppression slice length " +
                          std::to_string(indices.size()) +
                          " does not match group count " +
                          std::to_string(g.group_count));
    for (int8_t idx : indices)
        if (idx < -1 || idx >= g.group_size)
            throw validation_error("suppression index " + std::to_string(idx) +
                                   " out of range for group size " +
                                   std::to_string(g.group_size));

    OscQuantizeResult out;
    out.outliers.tokens = x.tokens();
    out.outliers.groups = g.group_count;
    out.outliers.values.assign(
        static_cast<size_t>(x.tokens() * g.group_count), 0.0f);
    out.outliers.indices.assign(indices.begin(), indices.end());

    std::vector<float> work = x.data();
    for (int64_t k = 0; k < g.group_count; ++k) {
        if (indices[k] < 0) continue;
        int64_t channel = k * g.group_size + indices[k];
        for (int64_t s = 0; s < x.tokens(); ++s) {
            int64_t flat = s * x.channels() + channel;
            out.outliers.values[s * g.group_count + k] = work[flat];
            work[flat] = 0.0f;
        }
    }
    out.base = quantize_rows(work.data(), x.tokens(), x.channels(),
                             g.group_size, fmt);
    return out;
}

// Rows of the full-precision weights addressed by the suppression slice:
// row k is W[k*G + I[k]], or zeros when I[k] = -1.
struct GatheredWeights {
    int64_t groups = 0;
    int64_t out_channels = 0;
    std::vector<float> values;      // groups x out_channels
    std::vector<int64_t> source_rows; // flat input channel per group, -1 if none
};

inline GatheredWeights gather_weight_rows(const WeightMatrix& w,
                                          std::span<const int8_t> indices,
                                          const GroupSpec& g) {
    if (w.in_channels() != g.channels())
        throw shape_error("weight input channels do not match group spec");
    if (static_cast<int64_t>(indices.size()) != g.group_count)
        throw shape_error("suppression slice length does not match group count");
    GatheredWeights out;
    out.groups = g.group_count;
    out.out_channels = w.out_channels();
    out.values.assign(static_cast<size_t>(g.group_count * w.out_channels()),
                      0.0f);
    out.source_rows.assign(static_cast<size_t>(g.group_count), -1);
    for (int64_t k = 0; k < g.group_count; ++k) {
        if (indices[k] < 0) continue;
        if (indices[k] >= g.group_size)
            throw validation_error("suppression index out of range");
        int64_t row = k * g.group_size + indices[k];
        out.source_rows[k] = row;
        std::copy(w.data().begin() + row * w.out_channels(),
                  w.data().begin() + (row + 1) * w.out_channels(),
                  out.values.begin() + k * w.out_channels());
    }
    return out;
}

// Active-groups-only view of the bypass operands. The dual-path GEMM keeps
// dense regular shapes; this compact form exists for size accounting and
// export.
struct CompactBypass {
    std::vector<int64_t> active_groups; // k indices with a table entry
    std::vector<float> buffer;          // tokens x active
    std::vector<float> weights;         // active x out_channels
    int64_t tokens = 0;
    int64_t out_channels = 0;

    int64_t active() const {
        return static_cast<int64_t>(active_groups.size());
    }
    int64_t buffer_bytes(int64_t bytes_per_value = 4) const {
        return tokens * active() * bytes_per_value;
    }
    int64_t weight_bytes(int64_t bytes_per_value = 4) const {
        return active() * out_channels * bytes_per_value;
    }
};

inline CompactBypass compact_bypass(const OutlierBuffer& b,
                                    const GatheredWeights& w_l) {
    if (b.groups != w_l.groups)
        throw shape_error("buffer and gathered weights disagree on groups");
    CompactBypass out;
    out.tokens = b.tokens;
    out.out_channels = w_l.out_channels;
    for (int64_t k = 0; k < b.groups; ++k)
        if (w_l.source_rows[k] >= 0) out.active_groups.push_back(k);
    out.buffer.reserve(static_cast<size_t>(b.tokens * out.active()));
    for (int64_t s = 0; s < b.tokens; ++s)
        for (int64_t k : out.active_groups) out.buffer.push_back(b.at(s, k));
    out.weights.reserve(static_cast<size_t>(out.active() * w_l.out_channels));
    for (int64_t k : out.active_groups)
        out.weights.insert(out.weights.end(),
                           w_l.values.begin() + k * w_l.out_channels,
                           w_l.values.begin() + (k + 1) * w_l.out_channels);
    return out;
}

// Path A + Path B. q_w must hold the weights output-major (as produced by
// quantize_weight). Groups with no suppression entry contribute nothing to
// Path B, so an all-(-1) slice reduces bit-for-bit to the direct GEMM.
inline std::vector<float> dual_path_gemm(const QuantizedBlockTensor& q_x,
                                         const OutlierBuffer& b,
                                         const QuantizedBlockTensor& q_w,
                                         const GatheredWeights& w_l) {
    if (q_x.cols != q_w.cols)
        throw shape_error("activation and weight reduction dims differ");
    if (q_x.group_size != q_w.group_size)
        throw shape_error("activation and weight group sizes differ");
    if (b.tokens != q_x.rows || b.groups != q_x.groups_per_row())
        throw shape_error("outlier buffer shape does not match Q_X");
    if (w_l.groups != b.groups || w_l.out_channels != q_w.rows)
        throw shape_error("gathered weights shape mismatch");

    std::vector<float> xd = dequantize(q_x);
    std::vector<float> wtd = dequantize(q_w);
    std::vector<float> y = detail::gemm_row_dot(xd.data(), wtd.data(), q_x.rows,
                                                q_x.cols, q_w.rows);
    const int64_t n = w_l.out_channels;
    for (int64_t s = 0; s < b.tokens; ++s) {
        float* yrow = y.data() + s * n;
        for (int64_t k = 0; k < b.groups; ++k) {
            if (w_l.source_rows[k] < 0) continue;
            float bv = b.at(s, k);
            const float* wrow = w_l.values.data() + k * n;
            for (int64_t j = 0; j < n; ++j) yrow[j] += bv * wrow[j];
        }
    }
    return y;
}

// Baseline: quantize both operands without suppression, dense GEMM on the
// dequantized values.
inline std::vector<float> direct_quant_gemm(const ActivationTensor& x,
                                            const WeightMatrix& w,
                                            const GroupSpec& g,
                                            ElementFormat fmt) {
    if (x.channels() != w.in_channels())
        throw shape_error("activation channels do not match weight rows");
    QuantizedBlockTensor qx = quantize_tensor(x, g, fmt);
    QuantizedBlockTensor qw = quantize_weight(w, g, fmt);
    std::vector<float> xd = dequantize(qx);
    std::vector<float> wtd = dequantize(qw);
    return detail::gemm_row_dot(xd.data(), wtd.data(), qx.rows, qx.cols,
                                qw.rows);
}

// Idealized comparator: every (token, group) extracts its runtime max into
// the bypass (token-dependent indices), the remainder quantizes as usual.
inline std::vector<float> dynamic_quant_gemm(const ActivationTensor& x,
                                             const WeightMatrix& w,
                                             const GroupSpec& g,
                                             ElementFormat fmt) {
    if (x.channels() != w.in_channels())
        throw shape_error("activation channels do not match weight rows");
    if (x.channels() != g.channels())
        throw shape_error("activation channels do not match group spec");

    std::vector<int32_t> argmax = group_argmax(x, g);
    std::vector<float> work = x.data();
    std::vector<float> extracted(
        static_cast<size_t>(x.tokens() * g.group_count));
    for (int64_t s = 0; s < x.tokens(); ++s) {
        for (int64_t k = 0; k < g.group_count; ++k) {
            int64_t flat =
                s * x.channels() + k * g.group_size + argmax[s * g.group_count + k];
            extracted[s * g.group_count + k] = work[flat];
            work[flat] = 0.0f;
        }
    }
    QuantizedBlockTensor qx = quantize_rows(work.data(), x.tokens(),
                                            x.channels(), g.group_size, fmt);
    QuantizedBlockTensor qw = quantize_weight(w, g, fmt);
    std::vector<float> xd = dequantize(qx);
    std::vector<float> wtd = dequantize(qw);
    std::vector<float> y = detail::gemm_row_dot(xd.data(), wtd.data(), qx.rows,
                                                qx.cols, qw.rows);
    const int64_t n = w.out_channels();
    for (int64_t s = 0; s < x.tokens(); ++s) {
        float* yrow = y.data() + s * n;
        for (int64_t k = 0; k < g.group_count; ++k) {
            float bv = extracted[s * g.group_count + k];
            int64_t row = k * g.group_size + argmax[s * g.group_count + k];
            const float* wrow = w.data().data() + row * n;
            for (int64_t j = 0; j < n; ++j) yrow[j] += bv * wrow[j];
        }
    }
    return y;
}

// --- precision policy ------------------------------------------------------

enum class Treatment : uint8_t {
    osc_fp4 = 0,
    direct_fp4 = 1,
    fp8_fallback = 2,
    full_precision = 3,
};

inline const char* to_string(Treatment t) {
    switch (t) {
    case Treatment::osc_fp4: return "osc_fp4";
    case Treatment::direct_fp4: return "direct_fp4";
    case Treatment::fp8_fallback: return "fp8_fallback";
    case Treatment::full_precision: return "full_precision";
    }
    return "?";
}

inline Treatment treatment_from_string(std::string_view s) {
    if (s == "osc_fp4") return Treatment::osc_fp4;
    if (s == "direct_fp4") return Treatment::direct_fp4;
    if (s == "fp8_fallback") return Treatment::fp8_fallback;
    if (s == "full_precision") return Treatment::full_precision;
    throw validation_error("unknown treatment: '" + std::string(s) + "'");
}

// Total map PositionId -> numeric treatment.
struct PrecisionPolicy {
    std::array<Treatment, kPositionCount> by_position{
        Treatment::osc_fp4, Treatment::osc_fp4, Treatment::osc_fp4,
        Treatment::fp8_fallback};

    Treatment at(PositionId p) const {
        return by_position[static_cast<size_t>(p)];
    }
    Treatment& at(PositionId p) { return by_position[static_cast<size_t>(p)]; }

    // Suppression on the clustered positions, FP8 fallback on the diffused
    // down-projection inputs.
    static PrecisionPolicy default_policy() { return PrecisionPolicy{}; }

    static PrecisionPolicy uniform(Treatment t) {
        PrecisionPolicy p;
        p.by_position.fill(t);
        return p;
    }
};

struct PositionInput {
    ActivationTensor x;
    WeightMatrix w;
};

struct PolicyOutcome {
    Treatment treatment = Treatment::full_precision;
    int64_t rows = 0;
    int64_t cols = 0;
    std::vector<float> y;
    double rel_error = 0.0; // Frobenius, vs the full-precision reference
};

// Routes every (position, layer) input through its policy treatment and
// reports the relative error against the fp32 reference GEMM.
inline std::map<CalibrationKey, PolicyOutcome>
apply_policy(const std::map<CalibrationKey, PositionInput>& inputs,
             const PrecisionPolicy& policy, const SuppressionTable* table,
             int32_t group_size) {
    std::map<CalibrationKey, PolicyOutcome> out;
    for (const auto& [key, in] : inputs) {
        GroupSpec g = GroupSpec::for_channels(in.x.channels(), group_size);
        Treatment t = policy.at(key.position);
        PolicyOutcome res;
        res.treatment = t;
        res.rows = in.x.tokens();
        res.cols = in.w.out_channels();
        switch (t) {
        case Treatment::osc_fp4: {
            if (!table)
                throw validation_error(
                    "policy routes a position through suppression but no "
                    "table was provided");
            const std::vector<int8_t>* slice =
                table->slice(key.position, key.layer);
            if (!slice)
                throw validation_error(
                    std::string("suppression table has no slice for ") +
                    to_string(key.position) + " layer " +
                    std::to_string(key.layer));
            OscQuantizeResult q =
                osc_quantize(in.x, *slice, g, ElementFormat::fp4_e2m1);
            QuantizedBlockTensor qw =
                quantize_weight(in.w, g, ElementFormat::fp4_e2m1);
            GatheredWeights wl = gather_weight_rows(in.w, *slice, g);
            res.y = dual_path_gemm(q.base, q.outliers, qw, wl);
            break;
        }
        case Treatment::direct_fp4:
            res.y = direct_quant_gemm(in.x, in.w, g, ElementFormat::fp4_e2m1);
            break;
        case Treatment::fp8_fallback:
            res.y = direct_quant_gemm(in.x, in.w, g, ElementFormat::fp8_e4m3);
            break;
        case Treatment::full_precision:
            res.y = reference_gemm(in.x, in.w);
            break;
        }
        std::vector<float> ref = reference_gemm(in.x, in.w);
        res.rel_error = relative_frobenius_error(res.y, ref);
        out.emplace(key, std::move(res));
    }
    return out;
}

} // namespace osc
