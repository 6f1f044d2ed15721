// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
#pragma once

#include <stdexcept>
#include <string>

namespace osc {

// Base class for everything thrown by this library.
class error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Dimension / grouping mismatches (H not divisible by G, operand shape
// disagreement, ...).
class shape_error : public error {
public:
    using error::error;
};

// Semantic validation failures: out-of-range table entries, bad configs,
// non-finite payloads, unknown enum strings.
class validation_error : public error {
public:
    using error::error;
};

// File I/O and format errors. The code distinguishes the failure so tests
// and callers do not have to parse messages.
class io_error : public error {
public:
    enum class code {
        open_failed,
        bad_magic,
        bad_version,
        bad_dtype,
        bad_header,
        truncated,
        non_finite,
        bad_metadata,
        write_failed,
    };

    io_error(code c, const std::string& msg) : error(msg), code_(c) {}
    code what_code() const noexcept { return code_; }

private:
    code code_;
};

} // namespace osc
