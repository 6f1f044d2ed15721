// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

namespace osc {

constexpr const char* kToolVersion = "1.0.0";

// On-disk schema versions. Bump only with a format change; the golden-file
// tests pin the byte layout of each version.
constexpr int kOtfVersion = 1;   // raw tensor container "OTF1"
constexpr int kOqtVersion = 1;   // quantized block tensor "OQT1"
constexpr int kTableSchemaVersion = 1; // suppression table JSON

} // namespace osc
