// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Two-regime roofline model for the dual-path GEMM.
//
// Compute cycles per scheme (rates in MACs/cycle):
//   W16A16:   M*K*N / r16
//   W8A8:     M*K*N / r8
//   OSC W4A4: M*K*N / r4  +  M*(K/G)*N / r16    (Path A + Path B)
// Memory cycles = operand + output bytes / bandwidth; element bytes are
// fp16=2, fp8=1, fp4=0.5, plus one scale byte per G elements for the
// quantized formats. The suppression table itself is cache-resident and
// costs no traffic. Estimated cycles = max(compute, memory).
//
// With the 1:2:4 throughput profile the compute-bound speedup over W8A8 is
// 2 / (1 + 4/G) and the Path-B overhead is (r4/r16)/G.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include "osc/errors.hpp"

namespace osc {

enum class GemmScheme : uint8_t {
    w16a16 = 0,
    w8a8 = 1,
    osc_w4a4 = 2,
};

inline const char* to_string(GemmScheme s) {
    switch (s) {
    case GemmScheme::w16a16: return "w16a16";
    case GemmScheme::w8a8: return "w8a8";
    case GemmScheme::osc_w4a4: return "osc_w4a4";
    }
    return "?";
}

struct HardwareProfile {
    // MACs per cycle; the ratio is what matters (default 1:2:4). The default
    // bandwidth is calibrated so every M >= 128 cell of the classic dims
    // sweep is compute-bound while small-M (decode-style) cells stay
    // memory-bound.
    double fp16_macs_per_cycle = 256.0;
    double fp8_macs_per_cycle = 512.0;
    double fp4_macs_per_cycle = 1024.0;
    double bytes_per_cycle = 10.0;

    void validate() const {
        if (!(fp16_macs_per_cycle > 0) || !(fp8_macs_per_cycle > 0) ||
            !(fp4_macs_per_cycle > 0) || !(bytes_per_cycle > 0))
            throw validation_error("hardware rates must be strictly positive");
    }

    static HardwareProfile default_profile() { return HardwareProfile{}; }
};

struct WorkloadSpec {
    int64_t m = 0;    // token rows
    int64_t kdim = 0; // reduction (hidden) dimension
    int64_t n = 0;    // output columns
    int32_t group_size = 32;
    GemmScheme scheme = GemmScheme::osc_w4a4;

    void validate() const {
        if (m <= 0 || kdim <= 0 || n <= 0)
            throw validation_error("GEMM dims must be positive");
        if (scheme != GemmScheme::w16a16) {
            if (group_size <= 0 || kdim % group_size != 0)
                throw validation_error(
                    "group size must divide the reduction dimension");
        }
    }
};

struct CycleEstimate {
    double compute_cycles = 0.0;
    double memory_cycles = 0.0;

    double cycles() const { return std::max(compute_cycles, memory_cycles); }
    bool compute_bound() const { return compute_cycles >= memory_cycles; }
    const char* regime() const { return compute_bound() ? "compute" : "memory"; }
};

inline CycleEstimate compute_cycles(const WorkloadSpec& w,
                                    const HardwareProfile& hw) {
    w.validate();
    hw.validate();
    const double m = static_cast<double>(w.m);
    const double k = static_cast<double>(w.kdim);
    const double n = static_cast<double>(w.n);
    const double macs = m * k * n;
    const double g = static_cast<double>(w.group_size);

    CycleEstimate est;
    double bytes = 0.0;
    switch (w.scheme) {
    case GemmScheme::w16a16:
        est.compute_cycles = macs / hw.fp16_macs_per_cycle;
        bytes = 2.0 * (m * k + k * n) + 2.0 * m * n;
        break;
    case GemmScheme::w8a8:
        est.compute_cycles = macs / hw.fp8_macs_per_cycle;
        bytes = (m * k + k * n) + (m * k + k * n) / g + 2.0 * m * n;
        break;
    case GemmScheme::osc_w4a4:
        est.compute_cycles = macs / hw.fp4_macs_per_cycle +
                             m * (k / g) * n / hw.fp16_macs_per_cycle;
        bytes = 0.5 * (m * k + k * n) + (m * k + k * n) / g // fp4 + scales
                + 2.0 * m * (k / g)                          // outlier buffer
                + 2.0 * (k / g) * n                          // gathered rows
                + 2.0 * m * n;                               // fp16 output
        break;
    }
    est.memory_cycles = bytes / hw.bytes_per_cycle;
    return est;
}

// cycles(baseline) / cycles(target) on identical dims.
inline double speedup(const WorkloadSpec& baseline, const WorkloadSpec& target,
                      const HardwareProfile& hw) {
    if (baseline.m != target.m || baseline.kdim != target.kdim ||
        baseline.n != target.n)
        throw validation_error("speedup requires identical GEMM dims");
    return compute_cycles(baseline, hw).cycles() /
           compute_cycles(target, hw).cycles();
}

// Path B cycles as a fraction of Path A cycles: (r4/r16)/G.
inline double path_b_overhead_fraction(int32_t group_size,
                                       const HardwareProfile& hw) {
    hw.validate();
    if (group_size <= 0)
        throw validation_error("group size must be positive");
    return (hw.fp4_macs_per_cycle / hw.fp16_macs_per_cycle) /
           static_cast<double>(group_size);
}

// Closed form for the compute-bound regime: (1/r8) / (1/r4 + 1/(G*r16)).
inline double compute_bound_speedup_vs_w8a8(int32_t group_size,
                                            const HardwareProfile& hw) {
    hw.validate();
    if (group_size <= 0)
        throw validation_error("group size must be positive");
    return (1.0 / hw.fp8_macs_per_cycle) /
           (1.0 / hw.fp4_macs_per_cycle +
            1.0 / (static_cast<double>(group_size) * hw.fp16_macs_per_cycle));
}

struct SweepRow {
    int64_t m = 0, kdim = 0, n = 0;
    int32_t group_size = 0;
    GemmScheme scheme = GemmScheme::osc_w4a4;
    CycleEstimate estimate;
    double speedup_vs_w8a8 = 0.0; // same dims/G, W8A8 baseline
};

inline const std::vector<int64_t>& classic_dims() {
    static const std::vector<int64_t> k = {512, 768, 2048, 4096, 12288};
    return k;
}

// Cartesian sweep over M x (K, N) x G x scheme.
inline std::vector<SweepRow> sweep_table(const std::vector<int64_t>& ms,
                                         const std::vector<int64_t>& ks,
                                         const std::vector<int64_t>& ns,
                                         const std::vector<int32_t>& gs,
                                         const HardwareProfile& hw) {
    std::vector<SweepRow> rows;
    for (int64_t m : ms)
        for (int64_t k : ks)
            for (int64_t n : ns)
                for (int32_t g : gs) {
                    WorkloadSpec w8{m, k, n, g, GemmScheme::w8a8};
                    double w8_cycles = compute_cycles(w8, hw).cycles();
                    for (GemmScheme scheme :
                         {GemmScheme::w16a16, GemmScheme::w8a8,
                          GemmScheme::osc_w4a4}) {
                        SweepRow row;
                        row.m = m;
                        row.kdim = k;
                        row.n = n;
                        row.group_size = g;
                        row.scheme = scheme;
                        row.estimate =
                            compute_cycles({m, k, n, g, scheme}, hw);
                        row.speedup_vs_w8a8 =
                            w8_cycles / row.estimate.cycles();
                        rows.push_back(row);
                    }
                }
    return rows;
}

} // namespace osc
