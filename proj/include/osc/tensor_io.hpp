// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// "OTF1" raw tensor container:
//
//   bytes 0..3   magic "OTF1"
//   byte  4      u8 version (1)
//   byte  5      u8 dtype   (0 = float32)
//   byte  6      u8 rank
//   byte  7      padding (0)
//   ...          rank x u64 little-endian dims
//   ...          row-major little-endian payload
//   [optional]   u32 length + UTF-8 JSON metadata block
//
// save(load(p)) is byte-identical: the metadata block is carried verbatim.
#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "osc/errors.hpp"
#include "osc/tensor.hpp"
#include "osc/version.hpp"

static_assert(std::endian::native == std::endian::little,
              "OTF1 reader/writer assumes a little-endian host");

namespace osc {

constexpr uint8_t kDtypeFloat32 = 0;

// Decoded OTF1 file: dims + payload + raw metadata JSON (empty if absent).
struct TensorFile {
    std::vector<uint64_t> dims;
    std::vector<float> data;
    std::string meta; // verbatim JSON block, "" when the file has none

    uint64_t element_count() const {
        uint64_t n = 1;
        for (uint64_t d : dims) n *= d;
        return n;
    }
};

namespace detail {

class FileReader {
public:
    explicit FileReader(const std::filesystem::path& path)
        : path_(path.string()), f_(std::fopen(path_.c_str(), "rb")) {
        if (!f_)
            throw io_error(io_error::code::open_failed,
                           "cannot open '" + path_ + "' for reading");
    }
    ~FileReader() {
        if (f_) std::fclose(f_);
    }
    FileReader(const FileReader&) = delete;
    FileReader& operator=(const FileReader&) = delete;

    void read(void* dst, size_t n, const char* what) {
        if (std::fread(dst, 1, n, f_) != n)
            throw io_error(io_error::code::truncated,
                           path_ + ": truncated while reading " + what);
    }
    bool at_eof() {
        int c = std::fgetc(f_);
        if (c == EOF) return true;
        std::ungetc(c, f_);
        return false;
    }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::FILE* f_;
};

// All writers go through a temp file + rename so interrupted runs never
// leave a half-written artifact behind.
inline void atomic_write(const std::filesystem::path& path,
                         const std::string& bytes) {
    namespace fs = std::filesystem;
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::FILE* f = std::fopen(tmp.string().c_str(), "wb");
        if (!f)
            throw io_error(io_error::code::write_failed,
                           "cannot open '" + tmp.string() + "' for writing");
        size_t written = std::fwrite(bytes.data(), 1, bytes.size(), f);
        int rc = std::fclose(f);
        if (written != bytes.size() || rc != 0) {
            std::remove(tmp.string().c_str());
            throw io_error(io_error::code::write_failed,
                           "short write to '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        std::remove(tmp.string().c_str());
        throw io_error(io_error::code::write_failed,
                       "cannot rename '" + tmp.string() + "' to '" +
                           path.string() + "': " + ec.message());
    }
}

template <typename T>
void append_le(std::string& out, T v) {
    char buf[sizeof(T)];
    std::memcpy(buf, &v, sizeof(T));
    out.append(buf, sizeof(T));
}

} // namespace detail

inline std::string encode_otf(const TensorFile& t) {
    std::string out;
    out.reserve(8 + t.dims.size() * 8 + t.data.size() * 4 + t.meta.size() + 4);
    out.append("OTF1", 4);
    out.push_back(static_cast<char>(kOtfVersion));
    out.push_back(static_cast<char>(kDtypeFloat32));
    out.push_back(static_cast<char>(t.dims.size()));
    out.push_back(0);
    for (uint64_t d : t.dims) detail::append_le(out, d);
    if (t.element_count() != t.data.size())
        throw validation_error("OTF1 payload size does not match dims");
    size_t payload_off = out.size();
    out.resize(payload_off + t.data.size() * 4);
    std::memcpy(out.data() + payload_off, t.data.data(), t.data.size() * 4);
    if (!t.meta.empty()) {
        detail::append_le(out, static_cast<uint32_t>(t.meta.size()));
        out.append(t.meta);
    }
    return out;
}

inline void save_tensor_file(const TensorFile& t,
                             const std::filesystem::path& path) {
    detail::atomic_write(path, encode_otf(t));
}

inline TensorFile load_tensor_file(const std::filesystem::path& path) {
    detail::FileReader r(path);
    char magic[4];
    r.read(magic, 4, "magic");
    if (std::memcmp(magic, "OTF1", 4) != 0)
        throw io_error(io_error::code::bad_magic,
                       r.path() + ": bad magic, not an OTF1 file");
    uint8_t header[4];
    r.read(header, 4, "header");
    if (header[0] != kOtfVersion)
        throw io_error(io_error::code::bad_version,
                       r.path() + ": OTF1 version " + std::to_string(header[0]) +
                           " unsupported (expected " +
                           std::to_string(kOtfVersion) + ")");
    if (header[1] != kDtypeFloat32)
        throw io_error(io_error::code::bad_dtype,
                       r.path() + ": unsupported dtype code " +
                           std::to_string(header[1]));
    uint8_t rank = header[2];
    if (rank == 0 || rank > 8)
        throw io_error(io_error::code::bad_header,
                       r.path() + ": unreasonable rank " + std::to_string(rank));

    TensorFile t;
    t.dims.resize(rank);
    r.read(t.dims.data(), rank * 8, "dims");
    uint64_t n = t.element_count();
    if (n == 0 || n > (uint64_t(1) << 33))
        throw io_error(io_error::code::bad_header,
                       r.path() + ": implausible element count " +
                           std::to_string(n));
    t.data.resize(n);
    r.read(t.data.data(), n * 4, "payload");
    for (uint64_t i = 0; i < n; ++i) {
        if (!std::isfinite(t.data[i]))
            throw io_error(io_error::code::non_finite,
                           r.path() + ": non-finite payload value at flat index " +
                               std::to_string(i));
    }
    if (!r.at_eof()) {
        uint32_t len = 0;
        r.read(&len, 4, "metadata length");
        t.meta.resize(len);
        if (len) r.read(t.meta.data(), len, "metadata");
    }
    return t;
}

namespace detail {

inline nlohmann::json parse_meta(const TensorFile& t, const std::string& path) {
    if (t.meta.empty()) return nlohmann::json::object();
    nlohmann::json j = nlohmann::json::parse(t.meta, nullptr, false);
    if (j.is_discarded())
        throw io_error(io_error::code::bad_metadata,
                       path + ": metadata block is not valid JSON");
    return j;
}

} // namespace detail

// --- typed wrappers -------------------------------------------------------

inline void save_tensor(const ActivationTensor& x,
                        const std::filesystem::path& path) {
    TensorFile t;
    t.dims = {static_cast<uint64_t>(x.tokens()),
              static_cast<uint64_t>(x.channels())};
    t.data = x.data();
    nlohmann::json meta;
    meta["kind"] = "activation";
    meta["position"] = to_string(x.position());
    meta["layer"] = x.layer();
    t.meta = meta.dump();
    save_tensor_file(t, path);
}

inline void save_tensor(const WeightMatrix& w,
                        const std::filesystem::path& path) {
    TensorFile t;
    t.dims = {static_cast<uint64_t>(w.in_channels()),
              static_cast<uint64_t>(w.out_channels())};
    t.data = w.data();
    nlohmann::json meta;
    meta["kind"] = "weight";
    t.meta = meta.dump();
    save_tensor_file(t, path);
}

// "kind" tag from the metadata block ("" when absent).
inline std::string meta_kind(const TensorFile& t) {
    if (t.meta.empty()) return "";
    nlohmann::json j = nlohmann::json::parse(t.meta, nullptr, false);
    if (j.is_discarded() || !j.contains("kind")) return "";
    return j["kind"].get<std::string>();
}

// Rank-2 files load as (S, H); rank-3 files are flattened (B, S, H) -> (B*S, H).
inline ActivationTensor activation_from_file(TensorFile t,
                                             const std::string& origin) {
    int64_t tokens, channels;
    if (t.dims.size() == 2) {
        tokens = static_cast<int64_t>(t.dims[0]);
        channels = static_cast<int64_t>(t.dims[1]);
    } else if (t.dims.size() == 3) {
        tokens = static_cast<int64_t>(t.dims[0] * t.dims[1]);
        channels = static_cast<int64_t>(t.dims[2]);
    } else {
        throw io_error(io_error::code::bad_header,
                       origin + ": activations must be rank 2 or 3, got rank " +
                           std::to_string(t.dims.size()));
    }
    nlohmann::json meta = detail::parse_meta(t, origin);
    PositionId pos = PositionId::attention_in;
    int32_t layer = 0;
    if (meta.contains("position"))
        pos = position_from_string(meta["position"].get<std::string>());
    if (meta.contains("layer")) layer = meta["layer"].get<int32_t>();
    return ActivationTensor(tokens, channels, std::move(t.data), pos, layer);
}

inline ActivationTensor load_activation(const std::filesystem::path& path) {
    return activation_from_file(load_tensor_file(path), path.string());
}

// Dispatches on the metadata kind; untagged rank-2/3 files load as
// activations.
inline std::variant<ActivationTensor, WeightMatrix>
load_tensor(const std::filesystem::path& path) {
    TensorFile t = load_tensor_file(path);
    if (meta_kind(t) == "weight") {
        if (t.dims.size() != 2)
            throw io_error(io_error::code::bad_header,
                           path.string() + ": weights must be rank 2");
        return WeightMatrix(static_cast<int64_t>(t.dims[0]),
                            static_cast<int64_t>(t.dims[1]),
                            std::move(t.data));
    }
    return activation_from_file(std::move(t), path.string());
}

inline WeightMatrix load_weight(const std::filesystem::path& path) {
    TensorFile t = load_tensor_file(path);
    if (t.dims.size() != 2)
        throw io_error(io_error::code::bad_header,
                       path.string() + ": weights must be rank 2, got rank " +
                           std::to_string(t.dims.size()));
    return WeightMatrix(static_cast<int64_t>(t.dims[0]),
                        static_cast<int64_t>(t.dims[1]), std::move(t.data));
}

} // namespace osc
