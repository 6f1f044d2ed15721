// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <filesystem>
#include <random>

#include "osc/suppression_table.hpp"
#include "osc/synth.hpp"
#include "support/test_util.hpp"

using namespace osc;
namespace fs = std::filesystem;

namespace {

// one-cell calibration set with hand-authored data
CalibrationSet single_cell(std::vector<float> data, int64_t tokens,
                           int64_t channels) {
    CalibrationSet set;
    set.add(ActivationTensor(tokens, channels, std::move(data)));
    return set;
}

} // namespace

TEST_CASE("build_table mode selection") {
    SECTION("unanimous above-threshold channel") {
        // 3 tokens; channel 5 of the (single) group carries 100 every time
        std::vector<float> data(3 * 16, 0.5f);
        for (int s = 0; s < 3; ++s) data[s * 16 + 5] = 100.0f;
        auto table = build_table(single_cell(std::move(data), 3, 16), 16);
        REQUIRE(table.positions.size() == 1);
        CHECK(table.positions[0].layers[0][0] == 5);
    }
    SECTION("mode of {3,3,7} is 3") {
        std::vector<float> data(3 * 16, 0.0f);
        data[0 * 16 + 3] = 100.0f;
        data[1 * 16 + 3] = 90.0f;
        data[2 * 16 + 7] = 95.0f;
        auto table = build_table(single_cell(std::move(data), 3, 16), 16);
        CHECK(table.positions[0].layers[0][0] == 3);
    }
    SECTION("tie {2,2,5,5} resolves to the lowest index") {
        std::vector<float> data(4 * 16, 0.0f);
        data[0 * 16 + 2] = 100.0f;
        data[1 * 16 + 2] = 100.0f;
        data[2 * 16 + 5] = 100.0f;
        data[3 * 16 + 5] = 100.0f;
        auto table = build_table(single_cell(std::move(data), 4, 16), 16);
        CHECK(table.positions[0].layers[0][0] == 2);
    }
    SECTION("group that never exceeds the threshold stays -1") {
        // second group is all small values
        std::vector<float> data(2 * 32, 0.1f);
        data[0 * 32 + 1] = 100.0f;
        data[1 * 32 + 1] = 100.0f;
        auto table = build_table(single_cell(std::move(data), 2, 32), 16);
        CHECK(table.positions[0].layers[0][0] == 1);
        CHECK(table.positions[0].layers[0][1] == -1);
    }
}

TEST_CASE("build_table input validation") {
    CHECK_THROWS_AS(build_table(CalibrationSet{}, 16), validation_error);

    CalibrationSet bad;
    bad.add(ActivationTensor(1, 16, std::vector<float>(16, 1.0f),
                             PositionId::attention_in, 0));
    CHECK_THROWS_AS(
        bad.add(ActivationTensor(1, 32, std::vector<float>(32, 1.0f),
                                 PositionId::attention_in, 0)),
        shape_error);

    // ragged layer grids are rejected
    CalibrationSet ragged;
    ragged.add(ActivationTensor(1, 16, std::vector<float>(16, 1.0f),
                                PositionId::attention_in, 0));
    ragged.add(ActivationTensor(1, 16, std::vector<float>(16, 1.0f),
                                PositionId::wo_in, 1));
    CHECK_THROWS_AS(build_table(ragged, 16), validation_error);
}

TEST_CASE("table entries match the profiler's dominant indices") {
    std::mt19937_64 rng(31337);
    for (int iter = 0; iter < 30; ++iter) {
        int64_t tokens = 2 + static_cast<int64_t>(rng() % 48);
        int32_t g = (rng() % 2) ? 16 : 32;
        int64_t h = g * (1 + static_cast<int64_t>(rng() % 2));
        ActivationTensor x = testutil::random_tie_prone_tensor(rng, tokens, h);

        CalibrationSet set;
        set.add(x);
        auto table = build_table(set, g);

        double t = compute_threshold(x);
        ClusteringReport rep =
            clustering_density(x, GroupSpec::for_channels(h, g), t);
        const auto& row = table.positions[0].layers[0];
        REQUIRE(row.size() == rep.records.size());
        for (size_t k = 0; k < row.size(); ++k)
            REQUIRE(static_cast<int32_t>(row[k]) ==
                    rep.records[k].dominant_index);
    }
}

TEST_CASE("calibration order does not matter") {
    std::mt19937_64 rng(555);
    // three sequences for one cell plus a second layer
    std::vector<ActivationTensor> seqs;
    for (int i = 0; i < 3; ++i)
        seqs.push_back(testutil::random_tie_prone_tensor(
            rng, 12, 32, PositionId::attention_in, 0));
    ActivationTensor other = testutil::random_tie_prone_tensor(
        rng, 20, 32, PositionId::attention_in, 1);

    CalibrationSet a;
    for (const auto& s : seqs) a.add(s);
    a.add(other);
    CalibrationSet b;
    b.add(other);
    b.add(seqs[2]);
    b.add(seqs[0]);
    b.add(seqs[1]);

    auto ta = build_table(a, 16);
    auto tb = build_table(b, 16);
    CHECK(ta.same_entries(tb));

    // shuffling tokens inside a sequence is also invisible
    std::vector<float> shuffled = seqs[0].data();
    std::vector<int64_t> order(12);
    for (int64_t i = 0; i < 12; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<float> out(shuffled.size());
    for (int64_t s = 0; s < 12; ++s)
        std::copy(shuffled.begin() + order[s] * 32,
                  shuffled.begin() + (order[s] + 1) * 32,
                  out.begin() + s * 32);
    CalibrationSet c;
    c.add(ActivationTensor(12, 32, std::move(out),
                           PositionId::attention_in, 0));
    c.add(seqs[1]);
    c.add(seqs[2]);
    c.add(other);
    auto tc = build_table(c, 16);
    CHECK(ta.same_entries(tc));
}

TEST_CASE("adding never-above-threshold tokens leaves the table unchanged") {
    std::vector<float> data(4 * 16, 0.0f);
    for (int s = 0; s < 4; ++s) data[s * 16 + 9] = 50.0f;
    CalibrationSet a = single_cell(std::vector<float>(data), 4, 16);
    auto ta = build_table(a, 16);

    // extra tokens of tiny magnitude; they lower the threshold's mean but
    // stay under it themselves
    std::vector<float> extended = data;
    extended.insert(extended.end(), 16, 0.01f);
    CalibrationSet b = single_cell(std::move(extended), 5, 16);
    auto tb = build_table(b, 16);
    CHECK(ta.positions[0].layers == tb.positions[0].layers);

    // every -1 corresponds to a group with zero above-threshold tokens
    for (const auto& row : tb.positions[0].layers)
        for (int8_t e : row)
            CHECK(e == 9); // single group here; sanity anchor
}

TEST_CASE("table JSON round trip preserves everything") {
    std::mt19937_64 rng(8);
    CalibrationSet set;
    for (PositionId pos : all_positions())
        for (int32_t layer = 0; layer < 2; ++layer)
            set.add(testutil::random_tie_prone_tensor(
                rng, 16, pos == PositionId::w2_in ? 64 : 32, pos, layer));
    auto table = build_table(set, 16);
    table.provenance.created_at = "2026-01-01T00:00:00Z";

    fs::path dir = testutil::temp_dir("table");
    save_table(table, dir / "t.json");
    auto loaded = load_table(dir / "t.json");
    CHECK(loaded.same_entries(table));
    CHECK(loaded.provenance.calibration_tokens ==
          table.provenance.calibration_tokens);
    CHECK(loaded.provenance.created_at == table.provenance.created_at);

    // byte-stable re-serialization
    save_table(loaded, dir / "t2.json");
    CHECK(testutil::slurp(dir / "t.json") == testutil::slurp(dir / "t2.json"));
    fs::remove_all(dir);
}

TEST_CASE("table validation rejects bad entries and versions") {
    nlohmann::json j;
    j["version"] = kTableSchemaVersion;
    j["group_size"] = 16;
    j["alpha"] = 5.0;
    j["positions"] = nlohmann::json::array(
        {{{"name", "attention_in"},
          {"hidden_dim", 16},
          {"layers", nlohmann::json::array({nlohmann::json::array({3})})}}});

    CHECK(table_from_json(j).positions[0].layers[0][0] == 3);

    nlohmann::json bad_entry = j;
    bad_entry["positions"][0]["layers"][0][0] = 16; // == G: out of range
    CHECK_THROWS_AS(table_from_json(bad_entry), validation_error);

    nlohmann::json bad_low = j;
    bad_low["positions"][0]["layers"][0][0] = -2;
    CHECK_THROWS_AS(table_from_json(bad_low), validation_error);

    nlohmann::json bad_version = j;
    bad_version["version"] = 99;
    CHECK_THROWS_AS(table_from_json(bad_version), io_error);
}

TEST_CASE("desk-scale table serializes under 64 KiB") {
    // P=4, L=32, K=128 with realistic two-digit entries
    SuppressionTable t;
    t.group_size = 32;
    t.alpha = 5.0;
    std::mt19937_64 rng(4);
    for (PositionId pos : all_positions()) {
        SuppressionTable::Position p;
        p.id = pos;
        p.hidden_dim = 128 * 32;
        for (int l = 0; l < 32; ++l) {
            std::vector<int8_t> row(128);
            for (auto& e : row)
                e = static_cast<int8_t>(rng() % 33) - 1; // -1..31
            p.layers.push_back(std::move(row));
        }
        t.positions.push_back(std::move(p));
    }
    std::string json_bytes = table_to_json(t).dump();
    CHECK(json_bytes.size() < 64 * 1024);

    fs::path dir = testutil::temp_dir("packed");
    export_packed_table(t, dir / "t.osb");
    // dense P*L*K_max int8 payload plus small headers
    auto packed = testutil::slurp(dir / "t.osb");
    // 16-byte header + 8 bytes per position descriptor + dense entries
    CHECK(packed.size() == 16 + 4 * 8 + 4 * 32 * 128);
    fs::remove_all(dir);
}

TEST_CASE("dense export pads ragged group counts with -1") {
    std::mt19937_64 rng(9);
    CalibrationSet set;
    set.add(testutil::random_tie_prone_tensor(rng, 8, 32,
                                              PositionId::attention_in, 0));
    set.add(testutil::random_tie_prone_tensor(rng, 8, 64, PositionId::w2_in,
                                              0));
    auto table = build_table(set, 16);
    DenseTableView d = dense_export(table);
    CHECK(d.position_count == 2);
    CHECK(d.layer_count == 1);
    CHECK(d.k_max == 4); // w2 has 64/16 groups
    // attention (2 groups) padded to k_max with -1
    CHECK(d.at(0, 0, 2) == -1);
    CHECK(d.at(0, 0, 3) == -1);
}

TEST_CASE("hit rate on matching and held-out data") {
    SECTION("perfectly persistent channel gives hit rate 1") {
        std::vector<float> data(4 * 16, 0.0f);
        for (int s = 0; s < 4; ++s) data[s * 16 + 11] = 100.0f;
        ActivationTensor x(4, 16, std::move(data));
        CalibrationSet set;
        set.add(x);
        auto table = build_table(set, 16);
        double t = compute_threshold(x);
        auto hr = table_hit_rate(table, x, GroupSpec::for_channels(16, 16), t);
        CHECK(hr.total == 4);
        CHECK(hr.fraction() == 1.0);
    }
    SECTION("-1 entries count afflicted tokens as misses") {
        std::vector<float> data(2 * 16, 0.0f);
        data[0 * 16 + 3] = 100.0f;
        data[1 * 16 + 3] = 100.0f;
        ActivationTensor x(2, 16, std::move(data));
        SuppressionTable table;
        table.group_size = 16;
        table.positions.push_back(
            {PositionId::attention_in, 16, {{-1}}});
        auto hr = table_hit_rate(table, x, GroupSpec::for_channels(16, 16),
                                 10.0);
        CHECK(hr.total == 2);
        CHECK(hr.hits == 0);
    }
    SECTION("held-out hit rate tracks the planted persistence") {
        // one generation, split into calibration and evaluation token halves
        SynthSpec spec;
        spec.tokens = 2048;
        spec.channels = 512;
        spec.group_size = 32;
        spec.persistence = 0.7;
        spec.outlier_rate = 0.2;
        spec.seed = 100;
        auto res = generate(spec);
        const int64_t half = 1024;
        std::vector<float> front(res.x.data().begin(),
                                 res.x.data().begin() + half * 512);
        std::vector<float> back(res.x.data().begin() + half * 512,
                                res.x.data().end());
        CalibrationSet set;
        set.add(ActivationTensor(half, 512, std::move(front)));
        auto table = build_table(set, 32);

        ActivationTensor eval(half, 512, std::move(back));
        double t = compute_threshold(eval);
        auto hr = table_hit_rate(table, eval,
                                 GroupSpec::for_channels(512, 32), t);
        CHECK(hr.fraction() == Catch::Approx(0.7).margin(0.05));
    }
}
