// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <random>

#include "osc/mx_format.hpp"
#include "osc/quantized_tensor.hpp"
#include "support/test_util.hpp"

using namespace osc;

TEST_CASE("fp4 e2m1 code book") {
    auto book = magnitude_codebook(ElementFormat::fp4_e2m1);
    std::vector<float> expected = {0, 0.5f, 1, 1.5f, 2, 3, 4, 6};
    REQUIRE(std::vector<float>(book.begin(), book.end()) == expected);
    CHECK(max_normal(ElementFormat::fp4_e2m1) == 6.0);
    CHECK(element_emax(ElementFormat::fp4_e2m1) == 2);
}

TEST_CASE("fp8 e4m3 code book landmarks") {
    auto book = magnitude_codebook(ElementFormat::fp8_e4m3);
    REQUIRE(book.size() == 127);
    CHECK(book[0] == 0.0f);
    CHECK(book[1] == std::ldexp(1.0f, -9));     // smallest subnormal
    CHECK(book[7] == std::ldexp(7.0f, -9));     // largest subnormal
    CHECK(book[8] == std::ldexp(1.0f, -6));     // smallest normal
    CHECK(book[126] == 448.0f);                 // largest finite (mant 6)
    CHECK(book[125] == 416.0f);
    CHECK(max_normal(ElementFormat::fp8_e4m3) == 448.0);
    CHECK(element_emax(ElementFormat::fp8_e4m3) == 8);
    // strictly increasing
    for (size_t i = 1; i < book.size(); ++i) REQUIRE(book[i] > book[i - 1]);
}

TEST_CASE("compute_scale follows the shared-exponent rule") {
    std::vector<float> g1 = {0.5f, 1.0f, 2.0f, 48.0f};
    CHECK(compute_group_scale(g1, ElementFormat::fp4_e2m1) == 3); // scale 8

    std::vector<float> zeros(4, 0.0f);
    CHECK(compute_group_scale(zeros, ElementFormat::fp4_e2m1) ==
          kZeroGroupScale);

    std::vector<float> ones = {1, 1, 1, 1};
    CHECK(compute_group_scale(ones, ElementFormat::fp4_e2m1) == -2); // 0.25

    // fp8 uses its own emax
    CHECK(compute_group_scale(g1, ElementFormat::fp8_e4m3) == 5 - 8);
}

TEST_CASE("element rounding is nearest-even on the code lattice") {
    auto enc4 = [](double v) {
        return decode_element(ElementFormat::fp4_e2m1,
                              encode_element(ElementFormat::fp4_e2m1, v));
    };
    // representable values survive exactly
    CHECK(enc4(6.0) == 6.0f);
    CHECK(enc4(-1.5) == -1.5f);
    CHECK(enc4(0.0) == 0.0f);
    // midpoints: tie goes to the even lattice index
    CHECK(enc4(5.0) == 4.0f);   // between 4 (idx 6) and 6 (idx 7)
    CHECK(enc4(0.25) == 0.0f);  // between 0 (idx 0) and 0.5 (idx 1)
    CHECK(enc4(0.75) == 1.0f);  // between 0.5 (idx 1) and 1 (idx 2)
    CHECK(enc4(1.25) == 1.0f);
    CHECK(enc4(1.75) == 2.0f);
    CHECK(enc4(2.5) == 2.0f);
    CHECK(enc4(3.5) == 4.0f);
    CHECK(enc4(-5.0) == -4.0f); // sign-symmetric
    // saturation
    CHECK(enc4(7.25) == 6.0f);
    CHECK(enc4(-1e9) == -6.0f);

    auto enc8 = [](double v) {
        return decode_element(ElementFormat::fp8_e4m3,
                              encode_element(ElementFormat::fp8_e4m3, v));
    };
    CHECK(enc8(432.0) == 448.0f); // midpoint of 416 (odd mant) / 448 (even)
    CHECK(enc8(1e6) == 448.0f);
    CHECK(enc8(std::ldexp(1.0, -10)) == 0.0f);          // tie -> 0 (even)
    CHECK(enc8(std::ldexp(3.0, -10)) == std::ldexp(1.0f, -8)); // tie -> mant 2
    CHECK(enc8(320.0) == 320.0f); // exactly representable
}

TEST_CASE("exhaustive code round trips") {
    // every valid code decodes, and re-encoding its value returns the same
    // value (signed zeros collapse onto +0)
    for (int code = 0; code < 16; ++code) {
        float v = decode_element(ElementFormat::fp4_e2m1,
                                 static_cast<uint8_t>(code));
        uint8_t re = encode_element(ElementFormat::fp4_e2m1, v);
        CHECK(decode_element(ElementFormat::fp4_e2m1, re) == v);
    }
    for (int code = 0; code < 256; ++code) {
        if ((code & 0x7F) == 0x7F) {
            CHECK_THROWS_AS(decode_element(ElementFormat::fp8_e4m3,
                                           static_cast<uint8_t>(code)),
                            validation_error);
            continue;
        }
        float v = decode_element(ElementFormat::fp8_e4m3,
                                 static_cast<uint8_t>(code));
        uint8_t re = encode_element(ElementFormat::fp8_e4m3, v);
        CHECK(decode_element(ElementFormat::fp8_e4m3, re) == v);
    }
}

TEST_CASE("quantize_group worked examples") {
    SECTION("representable group is exact") {
        std::vector<float> g = {1, 1, 1, 0};
        GroupCodes q = quantize_group(g, ElementFormat::fp4_e2m1);
        CHECK(q.scale == -2);
        auto back = dequantize_group(q.codes, q.scale, ElementFormat::fp4_e2m1);
        CHECK(back == g);
    }
    SECTION("planted outlier crushes small values at direct scale") {
        // scale exp = floor(log2 100) - 2 = 4; 1/16 rounds to 0
        std::vector<float> g = {1, 1, 1, 100};
        GroupCodes q = quantize_group(g, ElementFormat::fp4_e2m1);
        CHECK(q.scale == 4);
        auto back = dequantize_group(q.codes, q.scale, ElementFormat::fp4_e2m1);
        CHECK(back[0] == 0.0f);
        CHECK(back[1] == 0.0f);
        CHECK(back[2] == 0.0f);
        CHECK(back[3] == 96.0f); // 100/16 = 6.25 saturates to 6
    }
    SECTION("dequant of specific codes") {
        CHECK(dequantize_group(std::vector<uint8_t>{0}, 5,
                               ElementFormat::fp4_e2m1)[0] == 0.0f);
        // code for 1.5 with scale 8 -> 12
        uint8_t c = encode_element(ElementFormat::fp4_e2m1, 1.5);
        CHECK(dequantize_group(std::vector<uint8_t>{c}, 3,
                               ElementFormat::fp4_e2m1)[0] == 12.0f);
    }
    SECTION("all-zero group uses the marker") {
        std::vector<float> g(8, 0.0f);
        GroupCodes q = quantize_group(g, ElementFormat::fp4_e2m1);
        CHECK(q.scale == kZeroGroupScale);
        auto back = dequantize_group(q.codes, q.scale, ElementFormat::fp4_e2m1);
        for (float v : back) CHECK(v == 0.0f);
    }
}

namespace {

std::vector<float> random_group(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> mag(-4.0, 4.0);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<float> g(n);
    for (auto& v : g) {
        double m = std::ldexp(mag(rng), static_cast<int>(u(rng) * 12) - 6);
        v = static_cast<float>(m);
    }
    return g;
}

} // namespace

TEST_CASE("codec properties over random groups") {
    std::mt19937_64 rng(0xC0DECull);
    for (ElementFormat fmt :
         {ElementFormat::fp4_e2m1, ElementFormat::fp8_e4m3}) {
        double half_gap = half_max_codebook_gap(fmt);
        double maxn = max_normal(fmt);
        for (int iter = 0; iter < 2000; ++iter) {
            int n = 1 + static_cast<int>(rng() % 32);
            std::vector<float> g = random_group(rng, n);

            GroupCodes q = quantize_group(g, fmt);
            auto back = dequantize_group(q.codes, q.scale, fmt);
            double scale = std::ldexp(1.0, effective_scale_exp(q.scale));

            // round-trip error bound (saturation handled separately)
            for (int i = 0; i < n; ++i) {
                double v = g[i];
                double err = std::fabs(back[i] - v);
                if (std::fabs(v) <= scale * maxn)
                    REQUIRE(err <= scale * half_gap);
                else
                    REQUIRE(back[i] ==
                            (v < 0 ? -maxn * scale : maxn * scale));
            }

            // idempotence: quantize(dequantize(quantize(x))) == quantize(x)
            GroupCodes q2 = quantize_group(back, fmt);
            REQUIRE(q2.scale == q.scale);
            REQUIRE(q2.codes == q.codes);

            // monotone scale: x2 input => exponent + 1, codes unchanged
            std::vector<float> doubled(g);
            for (auto& v : doubled) v *= 2.0f;
            GroupCodes qd = quantize_group(doubled, fmt);
            if (q.scale != kZeroGroupScale) {
                REQUIRE(static_cast<int>(qd.scale) ==
                        static_cast<int>(q.scale) + 1);
                REQUIRE(qd.codes == q.codes);
            } else {
                REQUIRE(qd.scale == kZeroGroupScale);
            }
        }
    }
}

TEST_CASE("code-book-valued tensors reconstruct with zero error") {
    // every group holds exact lattice values at scale 1 (amax 6 -> exp 0)
    std::vector<float> row = {6, 0.5f, -1, 1.5f, -2, 3, -4, 0,
                              6, -0.5f, 1, -1.5f, 2, -3, 4, 0};
    std::vector<float> data;
    for (int s = 0; s < 4; ++s)
        data.insert(data.end(), row.begin(), row.end());
    ActivationTensor x(4, 16, std::move(data));
    QuantizedBlockTensor q = quantize_tensor(
        x, GroupSpec::for_channels(16, 16), ElementFormat::fp4_e2m1);
    CHECK(dequantize(q) == x.data());
}

TEST_CASE("tensor quantization is per-group independent and deterministic") {
    std::mt19937_64 rng(77);
    ActivationTensor x = testutil::random_tie_prone_tensor(rng, 8, 64);
    GroupSpec g = GroupSpec::for_channels(64, 16);

    QuantizedBlockTensor q1 = quantize_tensor(x, g, ElementFormat::fp4_e2m1);
    QuantizedBlockTensor q2 = quantize_tensor(x, g, ElementFormat::fp4_e2m1);
    CHECK(q1 == q2);

    // permuting whole groups permutes outputs identically
    std::vector<int64_t> perm = {2, 0, 3, 1};
    std::vector<float> permuted(x.data().size());
    for (int64_t s = 0; s < 8; ++s)
        for (int64_t k = 0; k < 4; ++k)
            for (int64_t j = 0; j < 16; ++j)
                permuted[s * 64 + k * 16 + j] = x.at(s, perm[k] * 16 + j);
    ActivationTensor xp(8, 64, std::move(permuted));
    QuantizedBlockTensor qp = quantize_tensor(xp, g, ElementFormat::fp4_e2m1);
    for (int64_t s = 0; s < 8; ++s)
        for (int64_t k = 0; k < 4; ++k) {
            REQUIRE(qp.scale_at(s, k) == q1.scale_at(s, perm[k]));
            for (int64_t j = 0; j < 16; ++j)
                REQUIRE(qp.code_at(s * 64 + k * 16 + j) ==
                        q1.code_at(s * 64 + perm[k] * 16 + j));
        }
}

TEST_CASE("fp4 codes pack two per byte, low nibble first") {
    // one token, one group of 16; values chosen to give distinct codes
    std::vector<float> vals = {0,    0.5f, 1,  1.5f, 2,  3,  4,  6,
                               -0.5f, -1,  -2, -6,   0,  1,  0,  -1};
    ActivationTensor x(1, 16, std::vector<float>(vals));
    QuantizedBlockTensor q =
        quantize_tensor(x, GroupSpec::for_channels(16, 16),
                        ElementFormat::fp4_e2m1);
    REQUIRE(q.codes.size() == 8);
    CHECK(q.scale_at(0, 0) == 0); // amax 6 -> exponent 0
    CHECK((q.codes[0] & 0x0F) == encode_element(ElementFormat::fp4_e2m1, 0.0));
    CHECK((q.codes[0] >> 4) == encode_element(ElementFormat::fp4_e2m1, 0.5));
    CHECK((q.codes[3] >> 4) == encode_element(ElementFormat::fp4_e2m1, 6.0));
    CHECK((q.codes[4] & 0x0F) ==
          encode_element(ElementFormat::fp4_e2m1, -0.5));
}

TEST_CASE("OQT1 round trip is byte-identical") {
    std::mt19937_64 rng(123);
    ActivationTensor x = testutil::random_tie_prone_tensor(rng, 5, 32);
    for (ElementFormat fmt :
         {ElementFormat::fp4_e2m1, ElementFormat::fp8_e4m3}) {
        QuantizedBlockTensor q =
            quantize_tensor(x, GroupSpec::for_channels(32, 16), fmt);
        q.meta = "{\"kind\":\"activation_q\"}";
        auto dir = testutil::temp_dir("oqt");
        save_quantized(q, dir / "q.oqt");
        std::string bytes1 = testutil::slurp(dir / "q.oqt");
        QuantizedBlockTensor loaded = load_quantized(dir / "q.oqt");
        CHECK(loaded == q);
        CHECK(loaded.meta == q.meta);
        save_quantized(loaded, dir / "q2.oqt");
        CHECK(testutil::slurp(dir / "q2.oqt") == bytes1);
        std::filesystem::remove_all(dir);
    }
}

TEST_CASE("OQT1 rejects corrupted containers") {
    std::mt19937_64 rng(5);
    ActivationTensor x = testutil::random_tie_prone_tensor(rng, 2, 16);
    QuantizedBlockTensor q =
        quantize_tensor(x, GroupSpec::for_channels(16, 16),
                        ElementFormat::fp8_e4m3);
    auto dir = testutil::temp_dir("oqt_bad");
    save_quantized(q, dir / "q.oqt");
    std::string bytes = testutil::slurp(dir / "q.oqt");

    auto write_raw = [&](std::string b, const char* name) {
        std::ofstream out(dir / name, std::ios::binary);
        out.write(b.data(), static_cast<std::streamsize>(b.size()));
        return dir / name;
    };
    std::string bad_magic = bytes;
    bad_magic[0] = 'X';
    CHECK_THROWS_AS(load_quantized(write_raw(bad_magic, "m.oqt")), io_error);

    std::string truncated = bytes.substr(0, bytes.size() / 2);
    CHECK_THROWS_AS(load_quantized(write_raw(truncated, "t.oqt")), io_error);

    // NaN code in an fp8 payload
    std::string nan_code = bytes;
    nan_code[8 + 16 + 4] = 0x7F;
    CHECK_THROWS_AS(load_quantized(write_raw(nan_code, "n.oqt")), io_error);
    std::filesystem::remove_all(dir);
}
