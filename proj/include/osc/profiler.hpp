// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Offline outlier profiling: layer-wise magnitude threshold, boolean outlier
// masks, and the per-group clustering-density statistic that drives the
// suppression table.
#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "osc/errors.hpp"
#include "osc/tensor.hpp"

namespace osc {

struct ThresholdConfig {
    double alpha = 5.0;

    void validate() const {
        if (!(alpha > 0.0))
            throw validation_error("alpha must be > 0");
    }
};

namespace detail {

// Permutation-invariant sum of |v|: 24-bit significands are binned exactly
// into one int64 per binary exponent, then the bins are combined in a fixed
// order. Reordering or concatenating inputs cannot change the result, which
// keeps thresholds (and everything downstream of them) bit-stable under
// token shuffles and calibration reordering.
class AbsSumBins {
public:
    void add(std::span<const float> values) {
        count_ += static_cast<int64_t>(values.size());
        for (float v : values) {
            if (v == 0.0f) continue;
            int e;
            float f = std::frexp(std::fabs(v), &e); // |v| = f * 2^e, f in [0.5, 1)
            bins_[e - kMinExp] += static_cast<int64_t>(std::ldexp(f, 24));
        }
    }

    double sum() const {
        double total = 0.0;
        for (int i = 0; i < kBinCount; ++i)
            if (bins_[i] != 0)
                total += std::ldexp(static_cast<double>(bins_[i]),
                                    i + kMinExp - 24);
        return total;
    }

    int64_t count() const { return count_; }

private:
    // frexp exponents of finite nonzero fp32 lie in [-148, 128]
    static constexpr int kMinExp = -148;
    static constexpr int kBinCount = 277;

    std::array<int64_t, kBinCount> bins_{};
    int64_t count_ = 0;
};

} // namespace detail

// Layer threshold T = alpha * mean(|x|) over every entry.
inline double compute_threshold(const ActivationTensor& x,
                                const ThresholdConfig& cfg = {}) {
    cfg.validate();
    detail::AbsSumBins bins;
    bins.add(x.data());
    return cfg.alpha * (bins.sum() / static_cast<double>(x.data().size()));
}

// mask(s, j) = 1 iff |x(s, j)| > threshold (strict).
inline std::vector<uint8_t> outlier_mask(const ActivationTensor& x,
                                         double threshold) {
    if (threshold < 0.0)
        throw validation_error("outlier threshold must be nonnegative");
    std::vector<uint8_t> mask(x.data().size());
    const auto& d = x.data();
    for (size_t i = 0; i < d.size(); ++i)
        mask[i] = std::fabs(static_cast<double>(d[i])) > threshold ? 1 : 0;
    return mask;
}

// Per (token, group) channel of maximum |value|; ties resolve to the lowest
// local index.
inline std::vector<int32_t> group_argmax(const ActivationTensor& x,
                                         const GroupSpec& g) {
    GroupedView v = reshape_grouped(x, g);
    std::vector<int32_t> out(static_cast<size_t>(v.tokens() * v.groups()));
    for (int64_t s = 0; s < v.tokens(); ++s) {
        for (int64_t k = 0; k < v.groups(); ++k) {
            const float* grp = v.group(s, k);
            int32_t best = 0;
            float best_mag = std::fabs(grp[0]);
            for (int32_t j = 1; j < v.group_size(); ++j) {
                float m = std::fabs(grp[j]);
                if (m > best_mag) {
                    best_mag = m;
                    best = j;
                }
            }
            out[s * v.groups() + k] = best;
        }
    }
    return out;
}

struct GroupDensityRecord {
    int64_t group = 0;
    int64_t n_total = 0;          // tokens whose group max exceeds the threshold
    int64_t n_hit = 0;            // frequency of the dominant channel
    int32_t dominant_index = -1;  // -1 when the group has no afflicted tokens

    bool defined() const { return n_total > 0; }
    double density() const {
        return static_cast<double>(n_hit) / static_cast<double>(n_total);
    }
};

enum class ClusterTier { high, moderate, low };

inline const char* to_string(ClusterTier t) {
    switch (t) {
    case ClusterTier::high: return "high";
    case ClusterTier::moderate: return "moderate";
    case ClusterTier::low: return "low";
    }
    return "?";
}

constexpr double kHighTierCutoff = 0.60;
constexpr double kLowTierCutoff = 0.35;

inline ClusterTier tier_for(double mean_density) {
    if (mean_density > kHighTierCutoff) return ClusterTier::high;
    if (mean_density < kLowTierCutoff) return ClusterTier::low;
    return ClusterTier::moderate;
}

struct ClusteringReport {
    PositionId position = PositionId::attention_in;
    int32_t layer = 0;
    int32_t group_size = 0;
    double threshold = 0.0;
    std::vector<GroupDensityRecord> records;
    std::optional<double> mean_density; // averaged over defined groups only
    std::optional<ClusterTier> tier;    // absent when no group has outliers
};

inline ClusteringReport clustering_density(const ActivationTensor& x,
                                           const GroupSpec& g,
                                           double threshold) {
    GroupedView v = reshape_grouped(x, g);
    ClusteringReport rep;
    rep.position = x.position();
    rep.layer = x.layer();
    rep.group_size = g.group_size;
    rep.threshold = threshold;
    rep.records.resize(static_cast<size_t>(v.groups()));

    std::vector<int64_t> counts(static_cast<size_t>(g.group_size));
    for (int64_t k = 0; k < v.groups(); ++k) {
        std::fill(counts.begin(), counts.end(), 0);
        int64_t total = 0;
        for (int64_t s = 0; s < v.tokens(); ++s) {
            const float* grp = v.group(s, k);
            int32_t best = 0;
            float best_mag = std::fabs(grp[0]);
            for (int32_t j = 1; j < v.group_size(); ++j) {
                float m = std::fabs(grp[j]);
                if (m > best_mag) {
                    best_mag = m;
                    best = j;
                }
            }
            if (static_cast<double>(best_mag) > threshold) {
                ++counts[best];
                ++total;
            }
        }
        GroupDensityRecord& rec = rep.records[k];
        rec.group = k;
        rec.n_total = total;
        if (total > 0) {
            int32_t dominant = 0;
            for (int32_t j = 1; j < g.group_size; ++j)
                if (counts[j] > counts[dominant]) dominant = j;
            rec.dominant_index = dominant;
            rec.n_hit = counts[dominant];
        }
    }

    double sum = 0.0;
    int64_t defined = 0;
    for (const auto& rec : rep.records) {
        if (rec.defined()) {
            sum += rec.density();
            ++defined;
        }
    }
    if (defined > 0) {
        rep.mean_density = sum / static_cast<double>(defined);
        rep.tier = tier_for(*rep.mean_density);
    }
    return rep;
}

// One report per (position, layer), each with its own layer-wise threshold.
inline std::vector<ClusteringReport>
profile_sweep(std::span<const ActivationTensor> tensors, const GroupSpec& g,
              const ThresholdConfig& cfg = {}) {
    cfg.validate();
    std::vector<ClusteringReport> out;
    out.reserve(tensors.size());
    for (const auto& x : tensors) {
        for (const auto& prev : out)
            if (prev.position == x.position() && prev.layer == x.layer())
                throw validation_error(
                    std::string("duplicate (position, layer) tag: ") +
                    to_string(x.position()) + ", layer " +
                    std::to_string(x.layer()));
        double t = compute_threshold(x, cfg);
        out.push_back(clustering_density(x, g, t));
    }
    return out;
}

} // namespace osc
