// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "osc/profiler.hpp"
#include "osc/report.hpp"
#include "support/test_util.hpp"

using namespace osc;

TEST_CASE("PGM container") {
    std::vector<uint8_t> px = {0, 128, 255, 7};
    std::string bytes = encode_pgm(2, 2, px);
    CHECK(bytes.substr(0, 3) == "P5\n");
    CHECK(bytes.find("2 2\n255\n") != std::string::npos);
    CHECK(bytes.size() == bytes.find("255\n") + 4 + 4);
    CHECK_THROWS_AS(encode_pgm(3, 2, px), shape_error);

    auto dir = testutil::temp_dir("pgm");
    write_pgm(dir / "img.pgm", 2, 2, px);
    CHECK(testutil::slurp(dir / "img.pgm") == bytes);
    std::filesystem::remove_all(dir);
}

TEST_CASE("mask image carries exactly the mask bits") {
    ActivationTensor x(2, 3, {1, 100, 2, 50, 3, 4});
    auto mask = outlier_mask(x, 20.0);
    auto px = render_mask(mask);
    REQUIRE(px.size() == mask.size());
    for (size_t i = 0; i < mask.size(); ++i)
        CHECK(px[i] == (mask[i] ? 255 : 0));
}

TEST_CASE("heatmap is a monotone quantile mapping of |x|") {
    ActivationTensor x(1, 6, {0.0f, -8.0f, 2.0f, 2.0f, -1.0f, 16.0f});
    auto px = render_magnitude_heatmap(x);
    REQUIRE(px.size() == 6);
    // ranks over sorted |x| = {0,1,2,2,8,16}: ties share the first index
    CHECK(px[0] == 0);                    // rank 0
    CHECK(px[5] == 255);                  // rank 5 of 5
    CHECK(px[2] == px[3]);                // equal magnitudes, equal pixels
    // monotone in magnitude
    CHECK(px[0] < px[4]);
    CHECK(px[4] < px[2]);
    CHECK(px[2] < px[1]);
    CHECK(px[1] < px[5]);
    // documented mapping: floor(255 * rank / (n - 1))
    CHECK(px[4] == static_cast<uint8_t>(255 * 1 / 5));
    CHECK(px[2] == static_cast<uint8_t>(255 * 2 / 5));
    CHECK(px[1] == static_cast<uint8_t>(255 * 4 / 5));
}
