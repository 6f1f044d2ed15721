// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// Static suppression table: for every (position, layer, group) the single
// channel to protect, or -1 when calibration saw no outliers there. Built
// offline from a calibration set, serialized as versioned JSON.
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "osc/errors.hpp"
#include "osc/profiler.hpp"
#include "osc/tensor.hpp"
#include "osc/tensor_io.hpp"
#include "osc/version.hpp"

namespace osc {

struct CalibrationKey {
    PositionId position = PositionId::attention_in;
    int32_t layer = 0;

    auto operator<=>(const CalibrationKey&) const = default;
};

// Calibration activations grouped by (position, layer); multiple sequences
// per cell are treated as one concatenated token stream.
class CalibrationSet {
public:
    void add(ActivationTensor t) {
        CalibrationKey key{t.position(), t.layer()};
        auto& cell = cells_[key];
        if (!cell.empty() && cell.front().channels() != t.channels())
            throw shape_error(std::string("inconsistent hidden dimension at ") +
                              to_string(key.position) + " layer " +
                              std::to_string(key.layer));
        cell.push_back(std::move(t));
    }

    bool empty() const { return cells_.empty(); }
    const std::map<CalibrationKey, std::vector<ActivationTensor>>& cells() const {
        return cells_;
    }

    int64_t total_tokens() const {
        int64_t n = 0;
        for (const auto& [key, seqs] : cells_)
            for (const auto& t : seqs) n += t.tokens();
        return n;
    }

private:
    std::map<CalibrationKey, std::vector<ActivationTensor>> cells_;
};

// Concatenates sequences along the token axis (all must share channel count
// and carry the same position/layer tags as the first).
inline ActivationTensor
concat_tokens(std::span<const ActivationTensor> sequences) {
    if (sequences.empty())
        throw validation_error("cannot concatenate an empty sequence list");
    int64_t channels = sequences.front().channels();
    int64_t tokens = 0;
    for (const auto& t : sequences) {
        if (t.channels() != channels)
            throw shape_error("sequence channel counts differ");
        tokens += t.tokens();
    }
    std::vector<float> data;
    data.reserve(static_cast<size_t>(tokens * channels));
    for (const auto& t : sequences)
        data.insert(data.end(), t.data().begin(), t.data().end());
    return ActivationTensor(tokens, channels, std::move(data),
                            sequences.front().position(),
                            sequences.front().layer());
}

struct SuppressionTable {
    struct Position {
        PositionId id = PositionId::attention_in;
        int64_t hidden_dim = 0;
        // layers[l][k] in {-1} u [0, G)
        std::vector<std::vector<int8_t>> layers;
    };
    struct Provenance {
        int64_t calibration_tokens = 0;
        std::string created_at; // empty unless explicitly stamped
    };

    int32_t group_size = 0;
    double alpha = 5.0;
    std::vector<Position> positions;
    Provenance provenance;

    const Position* find(PositionId p) const {
        for (const auto& pos : positions)
            if (pos.id == p) return &pos;
        return nullptr;
    }

    // Table row for one (position, layer); nullptr when absent.
    const std::vector<int8_t>* slice(PositionId p, int32_t layer) const {
        const Position* pos = find(p);
        if (!pos || layer < 0 ||
            layer >= static_cast<int32_t>(pos->layers.size()))
            return nullptr;
        return &pos->layers[layer];
    }

    int32_t layer_count() const {
        return positions.empty()
                   ? 0
                   : static_cast<int32_t>(positions.front().layers.size());
    }

    bool same_entries(const SuppressionTable& o) const {
        if (group_size != o.group_size || alpha != o.alpha ||
            positions.size() != o.positions.size())
            return false;
        for (size_t i = 0; i < positions.size(); ++i) {
            if (positions[i].id != o.positions[i].id ||
                positions[i].hidden_dim != o.positions[i].hidden_dim ||
                positions[i].layers != o.positions[i].layers)
                return false;
        }
        return true;
    }
};

// Rectangular P x L x K_max export with -1 padding for ragged group counts.
struct DenseTableView {
    int64_t position_count = 0;
    int64_t layer_count = 0;
    int64_t k_max = 0;
    std::vector<int8_t> entries; // [p][l][k] row-major

    int8_t at(int64_t p, int64_t l, int64_t k) const {
        return entries[(p * layer_count + l) * k_max + k];
    }
};

inline DenseTableView dense_export(const SuppressionTable& t) {
    DenseTableView d;
    d.position_count = static_cast<int64_t>(t.positions.size());
    d.layer_count = t.layer_count();
    for (const auto& pos : t.positions)
        d.k_max = std::max(d.k_max, pos.hidden_dim / t.group_size);
    d.entries.assign(
        static_cast<size_t>(d.position_count * d.layer_count * d.k_max), -1);
    for (int64_t p = 0; p < d.position_count; ++p)
        for (int64_t l = 0; l < d.layer_count; ++l) {
            const auto& row = t.positions[p].layers[l];
            for (size_t k = 0; k < row.size(); ++k)
                d.entries[(p * d.layer_count + l) * d.k_max + k] = row[k];
        }
    return d;
}

// Builds the table: per (position, layer) the threshold comes from the
// concatenated calibration stream of that cell, then each group's entry is
// the most frequent above-threshold argmax channel (lowest index on ties).
inline SuppressionTable build_table(const CalibrationSet& calib,
                                    int32_t group_size,
                                    const ThresholdConfig& cfg = {}) {
    cfg.validate();
    if (calib.empty())
        throw validation_error("calibration set is empty");

    // collect the declared grid
    std::map<PositionId, int64_t> hidden;
    std::map<PositionId, std::vector<int32_t>> layer_sets;
    for (const auto& [key, seqs] : calib.cells()) {
        int64_t h = seqs.front().channels();
        auto it = hidden.find(key.position);
        if (it == hidden.end())
            hidden[key.position] = h;
        else if (it->second != h)
            throw shape_error(std::string("inconsistent hidden dimension at ") +
                              to_string(key.position));
        layer_sets[key.position].push_back(key.layer);
    }
    int32_t layer_count = static_cast<int32_t>(layer_sets.begin()->second.size());
    for (const auto& [p, layers] : layer_sets) {
        if (static_cast<int32_t>(layers.size()) != layer_count)
            throw validation_error("calibration grid is ragged across positions");
        for (int32_t l = 0; l < layer_count; ++l)
            if (layers[l] != l) // std::map iteration gives sorted layers
                throw validation_error(
                    std::string("calibration layers for ") + to_string(p) +
                    " are not contiguous from 0");
    }

    SuppressionTable table;
    table.group_size = group_size;
    table.alpha = cfg.alpha;
    table.provenance.calibration_tokens = calib.total_tokens();

    for (const auto& [pid, h] : hidden) {
        GroupSpec g = GroupSpec::for_channels(h, group_size);
        SuppressionTable::Position pos;
        pos.id = pid;
        pos.hidden_dim = h;
        pos.layers.resize(layer_count);
        for (int32_t l = 0; l < layer_count; ++l) {
            const auto& seqs = calib.cells().at(CalibrationKey{pid, l});

            detail::AbsSumBins bins;
            for (const auto& t : seqs) bins.add(t.data());
            double threshold =
                cfg.alpha * (bins.sum() / static_cast<double>(bins.count()));

            std::vector<int64_t> counts(
                static_cast<size_t>(g.group_count * group_size), 0);
            for (const auto& t : seqs) {
                GroupedView v = reshape_grouped(t, g);
                for (int64_t s = 0; s < v.tokens(); ++s) {
                    for (int64_t k = 0; k < g.group_count; ++k) {
                        const float* grp = v.group(s, k);
                        int32_t best = 0;
                        float best_mag = std::fabs(grp[0]);
                        for (int32_t j = 1; j < group_size; ++j) {
                            float m = std::fabs(grp[j]);
                            if (m > best_mag) {
                                best_mag = m;
                                best = j;
                            }
                        }
                        if (static_cast<double>(best_mag) > threshold)
                            ++counts[k * group_size + best];
                    }
                }
            }
            std::vector<int8_t>& row = pos.layers[l];
            row.assign(static_cast<size_t>(g.group_count), -1);
            for (int64_t k = 0; k < g.group_count; ++k) {
                const int64_t* c = counts.data() + k * group_size;
                int32_t best = -1;
                int64_t best_count = 0;
                for (int32_t j = 0; j < group_size; ++j) {
                    if (c[j] > best_count) {
                        best_count = c[j];
                        best = j;
                    }
                }
                row[k] = static_cast<int8_t>(best);
            }
        }
        table.positions.push_back(std::move(pos));
    }
    return table;
}

struct HitRateResult {
    int64_t hits = 0;
    int64_t total = 0; // afflicted tokens across all groups

    bool defined() const { return total > 0; }
    double fraction() const {
        return static_cast<double>(hits) / static_cast<double>(total);
    }
};

// Fraction of afflicted (token, group) samples whose argmax channel matches
// the table entry; -1 entries count their afflicted tokens as misses.
inline HitRateResult table_hit_rate(const SuppressionTable& table,
                                    const ActivationTensor& x,
                                    const GroupSpec& g, double threshold) {
    const std::vector<int8_t>* slice = table.slice(x.position(), x.layer());
    if (!slice)
        throw validation_error(std::string("table has no entry for ") +
                               to_string(x.position()) + " layer " +
                               std::to_string(x.layer()));
    if (static_cast<int64_t>(slice->size()) != g.group_count ||
        g.channels() != x.channels() || table.group_size != g.group_size)
        throw shape_error("table slice does not match tensor grouping");

    GroupedView v = reshape_grouped(x, g);
    HitRateResult r;
    for (int64_t s = 0; s < v.tokens(); ++s) {
        for (int64_t k = 0; k < g.group_count; ++k) {
            const float* grp = v.group(s, k);
            int32_t best = 0;
            float best_mag = std::fabs(grp[0]);
            for (int32_t j = 1; j < g.group_size; ++j) {
                float m = std::fabs(grp[j]);
                if (m > best_mag) {
                    best_mag = m;
                    best = j;
                }
            }
            if (static_cast<double>(best_mag) > threshold) {
                ++r.total;
                if ((*slice)[k] == best) ++r.hits;
            }
        }
    }
    return r;
}

// --- serialization ---------------------------------------------------------

inline nlohmann::json table_to_json(const SuppressionTable& t) {
    nlohmann::json j;
    j["version"] = kTableSchemaVersion;
    j["group_size"] = t.group_size;
    j["alpha"] = t.alpha;
    nlohmann::json positions = nlohmann::json::array();
    for (const auto& pos : t.positions) {
        nlohmann::json p;
        p["name"] = to_string(pos.id);
        p["hidden_dim"] = pos.hidden_dim;
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& row : pos.layers) {
            nlohmann::json indices = nlohmann::json::array();
            for (int8_t e : row) indices.push_back(static_cast<int>(e));
            layers.push_back(std::move(indices));
        }
        p["layers"] = std::move(layers);
        positions.push_back(std::move(p));
    }
    j["positions"] = std::move(positions);
    j["provenance"] = {{"calibration_tokens", t.provenance.calibration_tokens},
                       {"created_at", t.provenance.created_at}};
    return j;
}

inline SuppressionTable table_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("version"))
        throw validation_error("suppression table JSON lacks a version field");
    if (j["version"].get<int>() != kTableSchemaVersion)
        throw io_error(io_error::code::bad_version,
                       "suppression table schema version " +
                           j["version"].dump() + " unsupported (expected " +
                           std::to_string(kTableSchemaVersion) + ")");
    SuppressionTable t;
    t.group_size = j.at("group_size").get<int32_t>();
    t.alpha = j.at("alpha").get<double>();
    if (t.group_size <= 0)
        throw validation_error("table group_size must be positive");
    for (const auto& p : j.at("positions")) {
        SuppressionTable::Position pos;
        pos.id = position_from_string(p.at("name").get<std::string>());
        pos.hidden_dim = p.at("hidden_dim").get<int64_t>();
        if (pos.hidden_dim <= 0 || pos.hidden_dim % t.group_size != 0)
            throw validation_error(
                std::string("hidden_dim of ") + to_string(pos.id) +
                " is not a positive multiple of the group size");
        int64_t k_expect = pos.hidden_dim / t.group_size;
        for (const auto& layer : p.at("layers")) {
            std::vector<int8_t> row;
            row.reserve(layer.size());
            for (const auto& e : layer) {
                int v = e.get<int>();
                if (v < -1 || v >= t.group_size)
                    throw validation_error(
                        "table entry " + std::to_string(v) +
                        " out of range [-1, " + std::to_string(t.group_size) +
                        ")");
                row.push_back(static_cast<int8_t>(v));
            }
            if (static_cast<int64_t>(row.size()) != k_expect)
                throw validation_error(
                    "layer row length does not match hidden_dim/group_size");
            pos.layers.push_back(std::move(row));
        }
        t.positions.push_back(std::move(pos));
    }
    if (j.contains("provenance")) {
        const auto& prov = j["provenance"];
        if (prov.contains("calibration_tokens"))
            t.provenance.calibration_tokens =
                prov["calibration_tokens"].get<int64_t>();
        if (prov.contains("created_at"))
            t.provenance.created_at = prov["created_at"].get<std::string>();
    }
    return t;
}

inline void save_table(const SuppressionTable& t,
                       const std::filesystem::path& path) {
    detail::atomic_write(path, table_to_json(t).dump());
}

inline SuppressionTable load_table(const std::filesystem::path& path) {
    detail::FileReader r(path);
    std::string bytes;
    {
        std::error_code ec;
        auto size = std::filesystem::file_size(path, ec);
        if (ec)
            throw io_error(io_error::code::open_failed,
                           path.string() + ": " + ec.message());
        bytes.resize(size);
        r.read(bytes.data(), bytes.size(), "table JSON");
    }
    nlohmann::json j = nlohmann::json::parse(bytes, nullptr, false);
    if (j.is_discarded())
        throw io_error(io_error::code::bad_metadata,
                       path.string() + ": not valid JSON");
    return table_from_json(j);
}

// Packed binary export "OSB1": the dense P x L x K_max view with a fixed
// 16-byte header plus one descriptor per position.
inline void export_packed_table(const SuppressionTable& t,
                                const std::filesystem::path& path) {
    DenseTableView d = dense_export(t);
    std::string out;
    out.append("OSB1", 4);
    out.push_back(1); // version
    out.push_back(static_cast<char>(t.group_size));
    out.push_back(static_cast<char>(d.position_count));
    out.push_back(0);
    detail::append_le(out, static_cast<uint32_t>(d.layer_count));
    detail::append_le(out, static_cast<uint32_t>(d.k_max));
    for (const auto& pos : t.positions) {
        out.push_back(static_cast<char>(pos.id));
        out.push_back(0);
        out.push_back(0);
        out.push_back(0);
        detail::append_le(out,
                          static_cast<uint32_t>(pos.hidden_dim / t.group_size));
    }
    out.append(reinterpret_cast<const char*>(d.entries.data()),
               d.entries.size());
    detail::atomic_write(path, out);
}

} // namespace osc
