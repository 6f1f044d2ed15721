// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Deterministic synthetic activation/weight generator with planted
// token-persistent outlier channels. The PRNG is SplitMix64 (Steele/Lea/
// Vigna) with Box-Muller for normals; the algorithm name is recorded in the
// emitted ground truth so recorded tensors stay reproducible.
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "osc/errors.hpp"
#include "osc/suppression_table.hpp"
#include "osc/tensor.hpp"
#include "osc/tensor_io.hpp"

namespace osc {

constexpr const char* kSynthAlgorithm = "splitmix64+box-muller";

struct SplitMix64 {
    uint64_t state = 0;

    explicit SplitMix64(uint64_t seed) : state(seed) {}

    uint64_t next() {
        uint64_t z = (state += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform in (0, 1]; never 0 so it is safe under log()
    double uniform() {
        return (static_cast<double>(next() >> 11) + 1.0) * 0x1.0p-53;
    }

    // unbiased-enough integer in [0, n)
    uint64_t uniform_int(uint64_t n) {
        return static_cast<uint64_t>(
            (static_cast<unsigned __int128>(next()) * n) >> 64);
    }

    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) *
               std::cos(2.0 * 3.14159265358979323846 * u2);
    }
};

// SplitMix64 finalizer, used to derive independent stream seeds.
inline uint64_t mix64(uint64_t z) {
    z += 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

inline uint64_t derive_seed(uint64_t master, uint64_t stream) {
    return mix64(master ^ mix64(stream));
}

struct SynthSpec {
    int64_t tokens = 1024;
    int64_t channels = 1024;
    int32_t group_size = 32;
    uint64_t seed = 0;
    double persistence = 0.7;  // P(planted outlier lands on the designated channel)
    double outlier_rate = 0.2; // P(a token receives a planted outlier per group)
    double magnitude = 20.0;   // outlier magnitude in units of base_scale
    double base_scale = 1.0;   // std-dev of the base normal noise
    PositionId position = PositionId::attention_in;
    int32_t layer = 0;

    void validate() const {
        if (tokens <= 0 || channels <= 0 || group_size <= 0)
            throw validation_error("synth dims must be positive");
        if (channels % group_size != 0)
            throw shape_error("synth channels must be a multiple of the group size");
        if (persistence < 0.0 || persistence > 1.0)
            throw validation_error("persistence must be in [0, 1]");
        if (outlier_rate < 0.0 || outlier_rate > 1.0)
            throw validation_error("outlier rate must be in [0, 1]");
        if (!(magnitude > 0.0) || !(base_scale > 0.0))
            throw validation_error("magnitude and base scale must be positive");
    }
};

struct SynthGroundTruth {
    SynthSpec spec;
    std::vector<int32_t> designated; // per group, the persistent channel
    std::vector<int32_t> planted;    // tokens x groups, local index or -1
};

struct SynthResult {
    ActivationTensor x;
    SynthGroundTruth truth;
};

// Base noise is standard normal * base_scale; outliers overwrite (never add)
// at +-magnitude * base_scale so ground truth stays exact.
inline SynthResult generate(const SynthSpec& spec) {
    spec.validate();
    const int64_t s_count = spec.tokens;
    const int64_t h = spec.channels;
    const int32_t g = spec.group_size;
    const int64_t k_count = h / g;

    std::vector<float> data(static_cast<size_t>(s_count * h));
    SplitMix64 base_rng(derive_seed(spec.seed, 0xBA5Eull));
    for (auto& v : data)
        v = static_cast<float>(spec.base_scale * base_rng.normal());

    SynthGroundTruth truth;
    truth.spec = spec;
    truth.designated.resize(static_cast<size_t>(k_count));
    SplitMix64 chan_rng(derive_seed(spec.seed, 0xC4A11ull));
    for (auto& d : truth.designated)
        d = static_cast<int32_t>(chan_rng.uniform_int(g));

    truth.planted.assign(static_cast<size_t>(s_count * k_count), -1);
    SplitMix64 plant_rng(derive_seed(spec.seed, 0x9147ull));
    const float outlier_mag =
        static_cast<float>(spec.magnitude * spec.base_scale);
    for (int64_t s = 0; s < s_count; ++s) {
        for (int64_t k = 0; k < k_count; ++k) {
            if (plant_rng.uniform() > spec.outlier_rate) continue;
            int32_t pos;
            if (g == 1 || plant_rng.uniform() <= spec.persistence) {
                pos = truth.designated[k];
            } else {
                // uniform over the other G-1 channels
                int32_t o = static_cast<int32_t>(plant_rng.uniform_int(g - 1));
                pos = o + (o >= truth.designated[k] ? 1 : 0);
            }
            float sign = (plant_rng.next() & 1) ? -1.0f : 1.0f;
            data[s * h + k * g + pos] = sign * outlier_mag;
            truth.planted[s * k_count + k] = pos;
        }
    }
    return SynthResult{
        ActivationTensor(s_count, h, std::move(data), spec.position, spec.layer),
        std::move(truth)};
}

inline WeightMatrix generate_weight(int64_t in_channels, int64_t out_channels,
                                    uint64_t seed) {
    std::vector<float> data(static_cast<size_t>(in_channels * out_channels));
    SplitMix64 rng(derive_seed(seed, 0x3E16ull));
    for (auto& v : data) v = static_cast<float>(rng.normal());
    return WeightMatrix(in_channels, out_channels, std::move(data));
}

// --- ground truth serialization ---------------------------------------------

inline nlohmann::json ground_truth_to_json(const SynthGroundTruth& t) {
    nlohmann::json j;
    j["algorithm"] = kSynthAlgorithm;
    j["seed"] = t.spec.seed;
    j["tokens"] = t.spec.tokens;
    j["channels"] = t.spec.channels;
    j["group_size"] = t.spec.group_size;
    j["persistence"] = t.spec.persistence;
    j["outlier_rate"] = t.spec.outlier_rate;
    j["magnitude"] = t.spec.magnitude;
    j["base_scale"] = t.spec.base_scale;
    j["position"] = to_string(t.spec.position);
    j["layer"] = t.spec.layer;
    j["designated"] = t.designated;
    int64_t k_count = t.spec.channels / t.spec.group_size;
    nlohmann::json planted = nlohmann::json::array();
    for (int64_t s = 0; s < t.spec.tokens; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (int64_t k = 0; k < k_count; ++k)
            row.push_back(t.planted[s * k_count + k]);
        planted.push_back(std::move(row));
    }
    j["planted"] = std::move(planted);
    return j;
}

inline SynthGroundTruth ground_truth_from_json(const nlohmann::json& j) {
    SynthGroundTruth t;
    t.spec.seed = j.at("seed").get<uint64_t>();
    t.spec.tokens = j.at("tokens").get<int64_t>();
    t.spec.channels = j.at("channels").get<int64_t>();
    t.spec.group_size = j.at("group_size").get<int32_t>();
    t.spec.persistence = j.at("persistence").get<double>();
    t.spec.outlier_rate = j.at("outlier_rate").get<double>();
    t.spec.magnitude = j.at("magnitude").get<double>();
    t.spec.base_scale = j.at("base_scale").get<double>();
    t.spec.position = position_from_string(j.at("position").get<std::string>());
    t.spec.layer = j.at("layer").get<int32_t>();
    t.designated = j.at("designated").get<std::vector<int32_t>>();
    t.planted.clear();
    for (const auto& row : j.at("planted"))
        for (const auto& v : row) t.planted.push_back(v.get<int32_t>());
    return t;
}

inline void save_ground_truth(const SynthGroundTruth& t,
                              const std::filesystem::path& path) {
    detail::atomic_write(path, ground_truth_to_json(t).dump());
}

inline SynthGroundTruth load_ground_truth(const std::filesystem::path& path) {
    detail::FileReader r(path);
    std::string bytes;
    auto size = std::filesystem::file_size(path);
    bytes.resize(size);
    r.read(bytes.data(), bytes.size(), "ground truth JSON");
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded())
        throw io_error(io_error::code::bad_metadata,
                       path.string() + ": not valid JSON");
    return ground_truth_from_json(j);
}

// --- grid generation ---------------------------------------------------------

// Position/layer grid mirroring the tiered clustering landscape: the
// down-projection inputs get low persistence (diffused outliers) and a wider
// hidden dimension, everything else is highly persistent.
struct GridSpec {
    int32_t layers = 4;
    int64_t tokens = 256;
    int64_t hidden = 1024;
    int64_t w2_hidden = 2048; // down-projection input width
    int64_t out_channels = 512;
    int32_t group_size = 32;
    uint64_t master_seed = 7;
    double high_persistence = 0.7;
    double low_persistence = 0.3;
    double outlier_rate = 0.2;
    double magnitude = 20.0;
    double layer_magnitude_growth = 1.0; // base_scale multiplier per layer

    void validate() const {
        if (layers <= 0)
            throw validation_error("grid needs at least one layer");
        if (tokens <= 0 || hidden <= 0 || w2_hidden <= 0 || out_channels <= 0)
            throw validation_error("grid dims must be positive");
        if (hidden % group_size != 0 || w2_hidden % group_size != 0)
            throw shape_error("grid hidden dims must be multiples of the group size");
    }
};

struct GridCell {
    SynthResult synth;
    WeightMatrix weights;
};

inline std::map<CalibrationKey, GridCell> generate_grid(const GridSpec& grid) {
    grid.validate();
    std::map<CalibrationKey, GridCell> out;
    for (PositionId pos : all_positions()) {
        for (int32_t layer = 0; layer < grid.layers; ++layer) {
            uint64_t cell_tag =
                (static_cast<uint64_t>(pos) << 32) | static_cast<uint32_t>(layer);
            SynthSpec spec;
            spec.tokens = grid.tokens;
            spec.channels =
                pos == PositionId::w2_in ? grid.w2_hidden : grid.hidden;
            spec.group_size = grid.group_size;
            spec.seed = derive_seed(grid.master_seed, cell_tag);
            spec.persistence = pos == PositionId::w2_in ? grid.low_persistence
                                                        : grid.high_persistence;
            spec.outlier_rate = grid.outlier_rate;
            spec.magnitude = grid.magnitude;
            spec.base_scale = std::pow(grid.layer_magnitude_growth, layer);
            spec.position = pos;
            spec.layer = layer;
            GridCell cell{generate(spec),
                          generate_weight(spec.channels, grid.out_channels,
                                          derive_seed(grid.master_seed,
                                                      cell_tag ^ 0xE160ull))};
            out.emplace(CalibrationKey{pos, layer}, std::move(cell));
        }
    }
    return out;
}

} // namespace osc
