// Copyright (C) 2026 the osc authors
// SPDX-License-Identifier: Apache-2.0
//
// osc: command-line laboratory for static outlier suppression on
// micro-scaling formats. Subcommands: synth, profile, build-table, quantize,
// matmul, eval-error, perf, report.
//
// Every run resolves its configuration (defaults < --config file < explicit
// flags), writes the resolved JSON beside its outputs, and writes all
// artifacts atomically. Exit codes: 0 ok, 2 usage, 3 validation, 4 I/O.

#include <algorithm>
#include <cinttypes>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "osc/osc.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitValidation = 3;
constexpr int kExitIo = 4;

// missing required flags are usage errors (exit 2), not validation errors
struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", v);
    return buf;
}

void write_text(const fs::path& path, const std::string& text) {
    osc::detail::atomic_write(path, text);
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw osc::io_error(osc::io_error::code::open_failed,
                            "cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

// Resolution order: defaults, then --config file keys (unknown keys
// rejected), then explicit command-line flags.
class ConfigMerger {
public:
    explicit ConfigMerger(std::string subcommand)
        : subcommand_(std::move(subcommand)) {
        resolved_["subcommand"] = subcommand_;
    }

    template <typename T>
    void set_default(const std::string& key, const T& value) {
        resolved_[key] = value;
        known_.insert(key);
    }

    void overlay_file(const fs::path& path) {
        json j = json::parse(read_text(path), nullptr, false);
        if (j.is_discarded())
            throw osc::validation_error("config file '" + path.string() +
                                        "' is not valid JSON");
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (it.key() == "subcommand") {
                if (it.value().get<std::string>() != subcommand_)
                    throw osc::validation_error(
                        "config file was written for subcommand '" +
                        it.value().get<std::string>() + "', not '" +
                        subcommand_ + "'");
                continue;
            }
            if (!known_.count(it.key()))
                throw osc::validation_error("unknown config key '" + it.key() +
                                            "' for subcommand " + subcommand_);
            resolved_[it.key()] = it.value();
        }
    }

    template <typename T>
    void overlay_flag(const CLI::Option* opt, const std::string& key,
                      const T& value) {
        if (opt && opt->count() > 0) resolved_[key] = value;
    }

    const json& resolved() const { return resolved_; }

    void echo_beside(const fs::path& primary_output, bool output_is_dir) const {
        fs::path p = output_is_dir ? primary_output / "run.config.json"
                                   : fs::path(primary_output.string() + ".run.json");
        write_text(p, resolved_.dump(2) + "\n");
    }

private:
    std::string subcommand_;
    json resolved_;
    std::set<std::string> known_;
};

std::vector<int64_t> parse_int_list(const std::string& csv) {
    std::vector<int64_t> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (tok.empty()) continue;
        out.push_back(std::stoll(tok));
    }
    if (out.empty())
        throw osc::validation_error("empty integer list: '" + csv + "'");
    return out;
}

int32_t checked_group_size(int64_t g) {
    if (!osc::GroupSpec::is_hardware_size(static_cast<int32_t>(g)))
        throw osc::validation_error(
            "group size must be one of 16, 32, 64; got " + std::to_string(g));
    return static_cast<int32_t>(g);
}

std::string cell_stem(osc::PositionId pos, int32_t layer) {
    return std::string(osc::to_string(pos)) + "_L" + std::to_string(layer);
}

// Activation tensors in a directory: weight companions (`*.w.otf`) are
// excluded by name, anything tagged with a non-activation kind (gemm
// outputs, outlier buffers) by metadata.
std::vector<osc::ActivationTensor> load_activations(const fs::path& in) {
    std::vector<fs::path> files;
    if (fs::is_directory(in)) {
        for (const auto& e : fs::directory_iterator(in)) {
            if (!e.is_regular_file()) continue;
            fs::path p = e.path();
            if (p.extension() != ".otf") continue;
            if (p.stem().extension() == ".w") continue;
            files.push_back(p);
        }
        std::sort(files.begin(), files.end());
    } else {
        files.push_back(in);
    }
    std::vector<osc::ActivationTensor> out;
    for (const auto& f : files) {
        osc::TensorFile t = osc::load_tensor_file(f);
        std::string kind = osc::meta_kind(t);
        if (!kind.empty() && kind != "activation") continue;
        out.push_back(osc::activation_from_file(std::move(t), f.string()));
    }
    if (out.empty())
        throw osc::validation_error("no activation tensors under '" +
                                    in.string() + "'");
    return out;
}

// --- synth ------------------------------------------------------------------

void write_cell(const fs::path& dir, const std::string& stem,
                const osc::SynthResult& res, const osc::WeightMatrix* w) {
    osc::save_tensor(res.x, dir / (stem + ".otf"));
    osc::save_ground_truth(res.truth, dir / (stem + ".gt.json"));
    if (w) osc::save_tensor(*w, dir / (stem + ".w.otf"));
}

int run_synth(const json& cfg) {
    fs::path out(cfg.at("out").get<std::string>());
    fs::create_directories(out);

    if (cfg.at("grid").get<bool>()) {
        osc::GridSpec grid;
        grid.layers = cfg.at("layers").get<int32_t>();
        grid.tokens = cfg.at("S").get<int64_t>();
        grid.hidden = cfg.at("H").get<int64_t>();
        grid.w2_hidden = cfg.at("w2_hidden").get<int64_t>();
        grid.out_channels = cfg.at("N").get<int64_t>();
        grid.group_size = checked_group_size(cfg.at("G").get<int64_t>());
        grid.master_seed = cfg.at("seed").get<uint64_t>();
        grid.high_persistence = cfg.at("persistence").get<double>();
        grid.low_persistence = cfg.at("p_low").get<double>();
        grid.outlier_rate = cfg.at("rate").get<double>();
        grid.magnitude = cfg.at("mag").get<double>();
        grid.layer_magnitude_growth = cfg.at("layer_growth").get<double>();
        auto cells = osc::generate_grid(grid);
        for (const auto& [key, cell] : cells)
            write_cell(out, cell_stem(key.position, key.layer), cell.synth,
                       &cell.weights);
        std::printf("synth: wrote %zu grid cells to %s\n", cells.size(),
                    out.string().c_str());
        return 0;
    }

    osc::SynthSpec spec;
    spec.tokens = cfg.at("S").get<int64_t>();
    spec.channels = cfg.at("H").get<int64_t>();
    spec.group_size = checked_group_size(cfg.at("G").get<int64_t>());
    spec.seed = cfg.at("seed").get<uint64_t>();
    spec.persistence = cfg.at("persistence").get<double>();
    spec.outlier_rate = cfg.at("rate").get<double>();
    spec.magnitude = cfg.at("mag").get<double>();
    spec.position =
        osc::position_from_string(cfg.at("position").get<std::string>());
    spec.layer = cfg.at("layer").get<int32_t>();
    osc::SynthResult res = osc::generate(spec);
    int64_t n = cfg.at("N").get<int64_t>();
    if (n > 0) {
        osc::WeightMatrix w = osc::generate_weight(
            spec.channels, n, osc::derive_seed(spec.seed, 0xE160ull));
        write_cell(out, "x", res, &w);
    } else {
        write_cell(out, "x", res, nullptr);
    }
    std::printf("synth: wrote %s/x.otf (%" PRId64 " x %" PRId64 ")\n",
                out.string().c_str(), spec.tokens, spec.channels);
    return 0;
}

// --- profile ----------------------------------------------------------------

std::string report_csv(const std::vector<osc::ClusteringReport>& reports) {
    std::string csv =
        "position,layer,group,n_total,n_hit,dominant_index,density,"
        "mean_density,tier,threshold\n";
    for (const auto& rep : reports) {
        for (const auto& rec : rep.records) {
            csv += std::string(osc::to_string(rep.position)) + "," +
                   std::to_string(rep.layer) + "," + std::to_string(rec.group) +
                   "," + std::to_string(rec.n_total) + "," +
                   std::to_string(rec.n_hit) + "," +
                   std::to_string(rec.dominant_index) + ",";
            csv += rec.defined() ? format_double(rec.density()) : "";
            csv += ",,,\n";
        }
        csv += std::string(osc::to_string(rep.position)) + "," +
               std::to_string(rep.layer) + ",-1,,,,,";
        if (rep.mean_density) {
            csv += format_double(*rep.mean_density) + "," +
                   osc::to_string(*rep.tier);
        } else {
            csv += ",no_outliers";
        }
        csv += "," + format_double(rep.threshold) + "\n";
    }
    return csv;
}

void emit_cell_images(const fs::path& dir, const osc::ActivationTensor& x,
                      double threshold) {
    std::string stem = cell_stem(x.position(), x.layer());
    auto mask = osc::outlier_mask(x, threshold);
    osc::write_pgm(dir / (stem + ".mask.pgm"), x.channels(), x.tokens(),
                   osc::render_mask(mask));
    osc::write_pgm(dir / (stem + ".heat.pgm"), x.channels(), x.tokens(),
                   osc::render_magnitude_heatmap(x));
}

int run_profile(const json& cfg) {
    fs::path in(cfg.at("in").get<std::string>());
    int32_t g = checked_group_size(cfg.at("G").get<int64_t>());
    double alpha = cfg.at("alpha").get<double>();
    fs::path out(cfg.at("out").get<std::string>());

    // group-size divisibility can differ across positions; profile each cell
    // against its own hidden dim
    std::map<osc::CalibrationKey, std::vector<osc::ActivationTensor>> by_key;
    for (auto& t : load_activations(in))
        by_key[{t.position(), t.layer()}].push_back(std::move(t));
    std::vector<osc::ClusteringReport> reports;
    std::vector<osc::ActivationTensor> merged;
    osc::ThresholdConfig tc{alpha};
    for (auto& [key, seqs] : by_key) {
        osc::ActivationTensor x = osc::concat_tokens(seqs);
        double t = osc::compute_threshold(x, tc);
        reports.push_back(osc::clustering_density(
            x, osc::GroupSpec::for_channels(x.channels(), g), t));
        merged.push_back(std::move(x));
    }
    write_text(out, report_csv(reports));

    if (!cfg.at("emit_masks").get<std::string>().empty()) {
        fs::path mask_dir(cfg.at("emit_masks").get<std::string>());
        fs::create_directories(mask_dir);
        for (size_t i = 0; i < merged.size(); ++i)
            emit_cell_images(mask_dir, merged[i], reports[i].threshold);
    }
    std::printf("profile: %zu (position, layer) cells -> %s\n", reports.size(),
                out.string().c_str());
    return 0;
}

// --- build-table ------------------------------------------------------------

int run_build_table(const json& cfg) {
    fs::path calib(cfg.at("calib").get<std::string>());
    int32_t g = checked_group_size(cfg.at("G").get<int64_t>());
    double alpha = cfg.at("alpha").get<double>();
    fs::path out(cfg.at("out").get<std::string>());

    osc::CalibrationSet set;
    for (auto& t : load_activations(calib)) set.add(std::move(t));
    osc::SuppressionTable table = osc::build_table(set, g, {alpha});
    if (cfg.at("stamp").get<bool>()) {
        std::time_t now = std::time(nullptr);
        char buf[32];
        std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ",
                      std::gmtime(&now));
        table.provenance.created_at = buf;
    }
    osc::save_table(table, out);
    std::string packed = cfg.at("packed").get<std::string>();
    if (!packed.empty()) osc::export_packed_table(table, packed);
    std::printf("build-table: %zu positions x %d layers -> %s\n",
                table.positions.size(), table.layer_count(),
                out.string().c_str());
    return 0;
}

// --- quantize ----------------------------------------------------------------

int run_quantize(const json& cfg) {
    osc::ActivationTensor x =
        osc::load_activation(cfg.at("in").get<std::string>());
    int32_t g = checked_group_size(cfg.at("G").get<int64_t>());
    osc::ElementFormat fmt =
        osc::element_format_from_string(cfg.at("fmt").get<std::string>());
    osc::GroupSpec spec = osc::GroupSpec::for_channels(x.channels(), g);
    fs::path out(cfg.at("out").get<std::string>());

    json meta;
    meta["kind"] = "activation_q";
    meta["position"] = osc::to_string(x.position());
    meta["layer"] = x.layer();

    std::string table_path = cfg.at("table").get<std::string>();
    std::vector<int8_t> indices(static_cast<size_t>(spec.group_count), -1);
    if (!table_path.empty()) {
        osc::SuppressionTable table = osc::load_table(table_path);
        if (table.group_size != g)
            throw osc::validation_error(
                "table group size " + std::to_string(table.group_size) +
                " does not match --group-size " + std::to_string(g));
        const std::vector<int8_t>* slice = table.slice(x.position(), x.layer());
        if (!slice)
            throw osc::validation_error(
                std::string("table has no slice for ") +
                osc::to_string(x.position()) + " layer " +
                std::to_string(x.layer()));
        indices = *slice;
    }

    osc::OscQuantizeResult res = osc::osc_quantize(x, indices, spec, fmt);
    res.base.meta = meta.dump();
    osc::save_quantized(res.base, out);

    std::string outliers_path = cfg.at("outliers").get<std::string>();
    if (!outliers_path.empty()) {
        osc::TensorFile b;
        b.dims = {static_cast<uint64_t>(res.outliers.tokens),
                  static_cast<uint64_t>(res.outliers.groups)};
        b.data = res.outliers.values;
        json bmeta;
        bmeta["kind"] = "outlier_buffer";
        bmeta["position"] = osc::to_string(x.position());
        bmeta["layer"] = x.layer();
        bmeta["group_size"] = g;
        b.meta = bmeta.dump();
        osc::save_tensor_file(b, outliers_path);
    }
    std::printf("quantize: %s -> %s (%s, G=%d)\n",
                cfg.at("in").get<std::string>().c_str(), out.string().c_str(),
                osc::to_string(fmt), g);
    return 0;
}

// --- matmul -------------------------------------------------------------------

int run_matmul(const json& cfg) {
    osc::QuantizedBlockTensor qx =
        osc::load_quantized(cfg.at("x").get<std::string>());
    osc::WeightMatrix w = osc::load_weight(cfg.at("w").get<std::string>());
    if (w.in_channels() != qx.cols)
        throw osc::shape_error("weight rows do not match quantized activation "
                               "channels");
    osc::GroupSpec spec = osc::GroupSpec::for_channels(qx.cols, qx.group_size);
    osc::QuantizedBlockTensor qw = osc::quantize_weight(w, spec, qx.format);

    json xmeta = qx.meta.empty() ? json::object() : json::parse(qx.meta);
    osc::PositionId pos =
        xmeta.contains("position")
            ? osc::position_from_string(xmeta["position"].get<std::string>())
            : osc::PositionId::attention_in;
    int32_t layer = xmeta.contains("layer") ? xmeta["layer"].get<int32_t>() : 0;

    osc::OutlierBuffer buffer;
    buffer.tokens = qx.rows;
    buffer.groups = spec.group_count;
    buffer.values.assign(static_cast<size_t>(qx.rows * spec.group_count), 0.0f);
    buffer.indices.assign(static_cast<size_t>(spec.group_count), -1);

    std::string outliers_path = cfg.at("outliers").get<std::string>();
    if (!outliers_path.empty()) {
        osc::TensorFile b = osc::load_tensor_file(outliers_path);
        if (b.dims.size() != 2 ||
            static_cast<int64_t>(b.dims[0]) != qx.rows ||
            static_cast<int64_t>(b.dims[1]) != spec.group_count)
            throw osc::shape_error("outlier buffer dims do not match Q_X");
        buffer.values = std::move(b.data);
    }
    std::string table_path = cfg.at("table").get<std::string>();
    if (!table_path.empty()) {
        osc::SuppressionTable table = osc::load_table(table_path);
        if (table.group_size != qx.group_size)
            throw osc::validation_error(
                "table group size " + std::to_string(table.group_size) +
                " does not match the quantized activations");
        const std::vector<int8_t>* slice = table.slice(pos, layer);
        if (!slice)
            throw osc::validation_error(std::string("table has no slice for ") +
                                        osc::to_string(pos) + " layer " +
                                        std::to_string(layer));
        buffer.indices = *slice;
    } else if (!outliers_path.empty()) {
        throw osc::validation_error(
            "--outliers was given without --table; the bypass needs the "
            "gather indices");
    }

    osc::GatheredWeights wl = osc::gather_weight_rows(w, buffer.indices, spec);
    std::vector<float> y = osc::dual_path_gemm(qx, buffer, qw, wl);

    osc::TensorFile out;
    out.dims = {static_cast<uint64_t>(qx.rows),
                static_cast<uint64_t>(w.out_channels())};
    out.data = y;
    json ymeta;
    ymeta["kind"] = "gemm_output";
    ymeta["position"] = osc::to_string(pos);
    ymeta["layer"] = layer;
    out.meta = ymeta.dump();
    osc::save_tensor_file(out, cfg.at("out").get<std::string>());

    std::string ref_path = cfg.at("ref").get<std::string>();
    std::string report_path = cfg.at("report").get<std::string>();
    if (!report_path.empty()) {
        if (ref_path.empty())
            throw osc::validation_error("--report requires --ref to compute "
                                        "the full-precision reference");
        osc::ActivationTensor ref_x = osc::load_activation(ref_path);
        std::vector<float> ref = osc::reference_gemm(ref_x, w);
        double err = osc::relative_frobenius_error(y, ref);
        write_text(report_path,
                   "position,layer,scheme,rel_error\n" +
                       std::string(osc::to_string(pos)) + "," +
                       std::to_string(layer) + ",dual_path," +
                       format_double(err) + "\n");
    }
    std::printf("matmul: y = dual-path GEMM (%" PRId64 " x %" PRId64 ")\n",
                qx.rows, w.out_channels());
    return 0;
}

// --- eval-error ----------------------------------------------------------------

int run_eval_error(const json& cfg) {
    fs::path in(cfg.at("in").get<std::string>());
    int32_t g = checked_group_size(cfg.at("G").get<int64_t>());
    std::string policy_name = cfg.at("policy").get<std::string>();
    fs::path out(cfg.at("out").get<std::string>());

    std::map<osc::CalibrationKey, osc::PositionInput> inputs;
    for (auto& x : load_activations(in)) {
        fs::path wpath =
            in / (cell_stem(x.position(), x.layer()) + ".w.otf");
        if (!fs::exists(wpath))
            throw osc::validation_error("missing weight companion '" +
                                        wpath.string() + "'");
        osc::WeightMatrix w = osc::load_weight(wpath);
        osc::CalibrationKey key{x.position(), x.layer()};
        inputs.emplace(key,
                       osc::PositionInput{std::move(x), std::move(w)});
    }

    std::string csv = "position,layer,treatment,rel_error\n";
    double err_sum = 0.0;
    int64_t cells = 0;

    if (policy_name == "dynamic") {
        for (const auto& [key, input] : inputs) {
            osc::GroupSpec spec =
                osc::GroupSpec::for_channels(input.x.channels(), g);
            std::vector<float> y = osc::dynamic_quant_gemm(
                input.x, input.w, spec, osc::ElementFormat::fp4_e2m1);
            std::vector<float> ref = osc::reference_gemm(input.x, input.w);
            double err = osc::relative_frobenius_error(y, ref);
            csv += std::string(osc::to_string(key.position)) + "," +
                   std::to_string(key.layer) + ",dynamic_fp4," +
                   format_double(err) + "\n";
            err_sum += err;
            ++cells;
        }
    } else {
        osc::PrecisionPolicy policy;
        bool needs_table = false;
        if (policy_name == "default") {
            policy = osc::PrecisionPolicy::default_policy();
            needs_table = true;
        } else if (policy_name == "direct") {
            policy = osc::PrecisionPolicy::uniform(osc::Treatment::direct_fp4);
        } else if (policy_name == "w2fp8") {
            policy = osc::PrecisionPolicy::uniform(osc::Treatment::direct_fp4);
            policy.at(osc::PositionId::w2_in) = osc::Treatment::fp8_fallback;
        } else if (policy_name == "full") {
            policy =
                osc::PrecisionPolicy::uniform(osc::Treatment::full_precision);
        } else {
            throw osc::validation_error(
                "unknown policy '" + policy_name +
                "' (expected default|direct|dynamic|w2fp8|full)");
        }

        osc::SuppressionTable table;
        std::string table_path = cfg.at("table").get<std::string>();
        if (!table_path.empty()) table = osc::load_table(table_path);
        if (needs_table && table_path.empty())
            throw osc::validation_error(
                "policy 'default' requires --table");

        auto results = osc::apply_policy(
            inputs, policy, table_path.empty() ? nullptr : &table, g);
        for (const auto& [key, res] : results) {
            csv += std::string(osc::to_string(key.position)) + "," +
                   std::to_string(key.layer) + "," +
                   osc::to_string(res.treatment) + "," +
                   format_double(res.rel_error) + "\n";
            err_sum += res.rel_error;
            ++cells;
        }
    }

    double mean = cells ? err_sum / static_cast<double>(cells) : 0.0;
    csv += "all,,mean," + format_double(mean) + "\n";
    write_text(out, csv);
    std::printf("eval-error: policy=%s mean rel error %.6f over %" PRId64
                " cells -> %s\n",
                policy_name.c_str(), mean, cells, out.string().c_str());
    return 0;
}

// --- perf -----------------------------------------------------------------------

int run_perf(const json& cfg) {
    osc::HardwareProfile hw;
    hw.fp16_macs_per_cycle = cfg.at("fp16_rate").get<double>();
    hw.fp8_macs_per_cycle = cfg.at("fp8_rate").get<double>();
    hw.fp4_macs_per_cycle = cfg.at("fp4_rate").get<double>();
    hw.bytes_per_cycle = cfg.at("bandwidth").get<double>();
    hw.validate();

    std::vector<int64_t> ms = parse_int_list(cfg.at("M").get<std::string>());
    std::vector<int64_t> gs64 = parse_int_list(cfg.at("G").get<std::string>());
    std::vector<int32_t> gs;
    for (int64_t g : gs64) gs.push_back(checked_group_size(g));

    std::vector<int64_t> dims;
    std::string dims_str = cfg.at("dims").get<std::string>();
    if (dims_str == "classic")
        dims = osc::classic_dims();
    else
        dims = parse_int_list(dims_str);

    // Table-2-style summary: closed-form compute-bound column
    for (int32_t g : gs) {
        double s = osc::compute_bound_speedup_vs_w8a8(g, hw);
        double ov = osc::path_b_overhead_fraction(g, hw);
        std::printf("G=%-3d compute-bound speedup vs W8A8: %.2fx   "
                    "path-B overhead: %.2f%%\n",
                    g, s, 100.0 * ov);
    }

    std::string out_path = cfg.at("out").get<std::string>();
    if (!out_path.empty()) {
        auto rows = osc::sweep_table(ms, dims, dims, gs, hw);
        std::string csv =
            "M,K,N,G,scheme,compute_cycles,memory_cycles,cycles,regime,"
            "speedup_vs_w8a8\n";
        for (const auto& r : rows) {
            csv += std::to_string(r.m) + "," + std::to_string(r.kdim) + "," +
                   std::to_string(r.n) + "," + std::to_string(r.group_size) +
                   "," + osc::to_string(r.scheme) + "," +
                   format_double(r.estimate.compute_cycles) + "," +
                   format_double(r.estimate.memory_cycles) + "," +
                   format_double(r.estimate.cycles()) + "," +
                   r.estimate.regime() + "," +
                   format_double(r.speedup_vs_w8a8) + "\n";
        }
        write_text(out_path, csv);
        std::printf("perf: sweep (%zu rows) -> %s\n",
                    static_cast<size_t>(ms.size() * dims.size() * dims.size() *
                                        gs.size() * 3),
                    out_path.c_str());
    }
    return 0;
}

// --- report ----------------------------------------------------------------------

struct SummaryRow {
    std::string position;
    int32_t layer = 0;
    std::string mean_density; // may be empty
    std::string tier;
    double threshold = 0.0;
};

int run_report(const json& cfg) {
    fs::path profile_csv(cfg.at("profile").get<std::string>());
    fs::path out(cfg.at("out").get<std::string>());
    fs::create_directories(out);

    std::string text = read_text(profile_csv);
    std::vector<SummaryRow> summaries;
    std::istringstream lines(text);
    std::string line;
    bool first = true;
    while (std::getline(lines, line)) {
        if (line.empty()) continue;
        if (first) {
            first = false;
            if (line.rfind("position,layer,group", 0) != 0)
                throw osc::validation_error(
                    "profile CSV header not recognized");
            continue;
        }
        std::vector<std::string> fields;
        std::stringstream fs_(line);
        std::string f;
        while (std::getline(fs_, f, ',')) fields.push_back(f);
        while (fields.size() < 10) fields.push_back("");
        if (fields.size() != 10)
            throw osc::validation_error("profile CSV row has " +
                                        std::to_string(fields.size()) +
                                        " fields, expected 10");
        if (fields[2] != "-1") continue; // only summary rows
        SummaryRow row;
        row.position = fields[0];
        row.layer = static_cast<int32_t>(std::stol(fields[1]));
        row.mean_density = fields[7];
        row.tier = fields[8];
        row.threshold = fields[9].empty() ? 0.0 : std::stod(fields[9]);
        summaries.push_back(std::move(row));
    }

    // density-by-layer CSV (one line per position/layer)
    std::string density_csv = "position,layer,mean_density,tier\n";
    for (const auto& s : summaries)
        density_csv += s.position + "," + std::to_string(s.layer) + "," +
                       s.mean_density + "," + s.tier + "\n";
    write_text(out / "density_by_layer.csv", density_csv);

    // optional images
    std::string tensors = cfg.at("tensors").get<std::string>();
    int images = 0;
    if (!tensors.empty()) {
        for (const auto& s : summaries) {
            fs::path tpath = fs::path(tensors) /
                             (s.position + "_L" + std::to_string(s.layer) + ".otf");
            if (!fs::exists(tpath)) continue;
            osc::ActivationTensor x = osc::load_activation(tpath);
            emit_cell_images(out, x, s.threshold);
            ++images;
        }
    }

    std::string md = "# Outlier profiling summary\n\n";
    if (summaries.empty()) {
        md += "No profiled cells.\n";
    } else {
        md += "| position | layer | mean density | tier |\n";
        md += "|---|---|---|---|\n";
        for (const auto& s : summaries)
            md += "| " + s.position + " | " + std::to_string(s.layer) + " | " +
                  (s.mean_density.empty() ? "-" : s.mean_density) + " | " +
                  s.tier + " |\n";
        md += "\nPixel values in `*.heat.pgm` are the empirical CDF of |x| "
              "scaled to 0..255 (monotone in |x|); `*.mask.pgm` is white where "
              "|x| exceeds the layer threshold.\n";
    }
    write_text(out / "summary.md", md);
    std::printf("report: %zu cells, %d image pairs -> %s\n", summaries.size(),
                images, out.string().c_str());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"osc: static outlier suppression laboratory for "
                 "micro-scaling quantization"};
    app.require_subcommand(0, 1);
    std::string version_text =
        std::string("osc ") + osc::kToolVersion + " (formats: OTF" +
        std::to_string(osc::kOtfVersion) + ", OQT" +
        std::to_string(osc::kOqtVersion) + ", table-schema v" +
        std::to_string(osc::kTableSchemaVersion) + ")";
    app.set_version_flag("--version", version_text);

    // ------- synth
    auto* synth = app.add_subcommand("synth", "generate synthetic activations");
    int64_t sy_s = 1024, sy_h = 1024, sy_g = 32, sy_n = 0, sy_layers = 4,
            sy_w2h = 2048;
    double sy_p = 0.7, sy_rate = 0.2, sy_mag = 20.0, sy_plow = 0.3,
           sy_growth = 1.0;
    uint64_t sy_seed = 7;
    std::string sy_out, sy_pos = "attention_in", sy_cfg;
    int64_t sy_layer = 0;
    bool sy_grid = false;
    auto* o_sy_s = synth->add_option("--S", sy_s, "tokens");
    auto* o_sy_h = synth->add_option("--H", sy_h, "channels");
    auto* o_sy_g = synth->add_option("--G", sy_g, "group size");
    auto* o_sy_p = synth->add_option("--persistence", sy_p, "");
    auto* o_sy_r = synth->add_option("--rate", sy_rate, "outlier token rate");
    auto* o_sy_m = synth->add_option("--mag", sy_mag, "outlier magnitude");
    auto* o_sy_seed = synth->add_option("--seed", sy_seed, "");
    auto* o_sy_out = synth->add_option("--out", sy_out, "output directory");
    auto* o_sy_posn = synth->add_option("--position", sy_pos, "");
    auto* o_sy_layer = synth->add_option("--layer", sy_layer, "");
    auto* o_sy_n = synth->add_option("--N", sy_n, "emit weights with N outputs");
    auto* o_sy_grid = synth->add_flag("--grid", sy_grid, "full position/layer grid");
    auto* o_sy_layers = synth->add_option("--layers", sy_layers, "grid layers");
    auto* o_sy_w2h = synth->add_option("--w2-hidden", sy_w2h, "");
    auto* o_sy_plow = synth->add_option("--p-low", sy_plow, "w2 persistence");
    auto* o_sy_growth = synth->add_option("--layer-growth", sy_growth, "");
    synth->add_option("--config", sy_cfg, "JSON config file");

    // ------- profile
    auto* profile = app.add_subcommand("profile", "clustering-density report");
    std::string pf_in, pf_out, pf_masks, pf_cfg;
    int64_t pf_g = 32;
    double pf_alpha = 5.0;
    auto* o_pf_in = profile->add_option("--in", pf_in, "dir or .otf file");
    auto* o_pf_g = profile->add_option("--group-size", pf_g, "");
    auto* o_pf_a = profile->add_option("--alpha", pf_alpha, "");
    auto* o_pf_out = profile->add_option("--out", pf_out, "report CSV");
    auto* o_pf_masks = profile->add_option("--emit-masks", pf_masks, "PGM dir");
    profile->add_option("--config", pf_cfg, "JSON config file");

    // ------- build-table
    auto* bt = app.add_subcommand("build-table", "offline suppression table");
    std::string bt_calib, bt_out, bt_cfg;
    int64_t bt_g = 32;
    double bt_alpha = 5.0;
    bool bt_stamp = false;
    auto* o_bt_in = bt->add_option("--calib", bt_calib, "calibration dir");
    auto* o_bt_g = bt->add_option("--group-size", bt_g, "");
    auto* o_bt_a = bt->add_option("--alpha", bt_alpha, "");
    auto* o_bt_out = bt->add_option("--out", bt_out, "table JSON path");
    auto* o_bt_stamp = bt->add_flag("--stamp", bt_stamp,
                                    "record creation time in provenance");
    std::string bt_packed;
    auto* o_bt_packed =
        bt->add_option("--packed", bt_packed, "also export the dense binary table");
    bt->add_option("--config", bt_cfg, "JSON config file");

    // ------- quantize
    auto* qz = app.add_subcommand("quantize", "OSC-enhanced quantization");
    std::string qz_in, qz_table, qz_fmt = "fp4", qz_out, qz_outliers, qz_cfg;
    int64_t qz_g = 32;
    auto* o_qz_in = qz->add_option("--in", qz_in, "activation .otf");
    auto* o_qz_table = qz->add_option("--table", qz_table, "suppression table");
    auto* o_qz_g = qz->add_option("--group-size", qz_g, "");
    auto* o_qz_fmt = qz->add_option("--fmt", qz_fmt, "fp4|fp8");
    auto* o_qz_out = qz->add_option("--out", qz_out, "quantized .oqt");
    auto* o_qz_b = qz->add_option("--outliers", qz_outliers, "buffer .otf");
    qz->add_option("--config", qz_cfg, "JSON config file");

    // ------- matmul
    auto* mm = app.add_subcommand("matmul", "dual-path GEMM");
    std::string mm_x, mm_b, mm_w, mm_table, mm_out, mm_ref, mm_report, mm_cfg;
    auto* o_mm_x = mm->add_option("--x", mm_x, "quantized activations .oqt");
    auto* o_mm_b = mm->add_option("--outliers", mm_b, "outlier buffer .otf");
    auto* o_mm_w = mm->add_option("--w", mm_w, "weights .otf");
    auto* o_mm_t = mm->add_option("--table", mm_table, "suppression table");
    auto* o_mm_out = mm->add_option("--out", mm_out, "output .otf");
    auto* o_mm_ref = mm->add_option("--ref", mm_ref, "fp32 activations .otf");
    auto* o_mm_rep = mm->add_option("--report", mm_report, "error CSV");
    mm->add_option("--config", mm_cfg, "JSON config file");

    // ------- eval-error
    auto* ev = app.add_subcommand("eval-error", "per-position error metrics");
    std::string ev_in, ev_table, ev_policy = "default", ev_out, ev_cfg;
    int64_t ev_g = 32;
    auto* o_ev_in = ev->add_option("--in", ev_in, "grid dir");
    auto* o_ev_t = ev->add_option("--table", ev_table, "suppression table");
    auto* o_ev_g = ev->add_option("--group-size", ev_g, "");
    auto* o_ev_p = ev->add_option("--policy", ev_policy,
                                  "default|direct|dynamic|w2fp8|full");
    auto* o_ev_out = ev->add_option("--out", ev_out, "error CSV");
    ev->add_option("--config", ev_cfg, "JSON config file");

    // ------- perf
    auto* pf2 = app.add_subcommand("perf", "analytic roofline model");
    std::string pe_m = "16,32,64,128,256", pe_g = "16,32,64",
                pe_dims = "classic", pe_out, pe_cfg, pe_hw = "default";
    double pe_r16 = 256.0, pe_r8 = 512.0, pe_r4 = 1024.0, pe_bw = 10.0;
    auto* o_pe_hw = pf2->add_option("--hw", pe_hw, "profile name (default)");
    auto* o_pe_m = pf2->add_option("--M", pe_m, "token-dim list");
    auto* o_pe_g = pf2->add_option("--G", pe_g, "group-size list");
    auto* o_pe_dims = pf2->add_option("--dims", pe_dims,
                                      "classic or K/N value list");
    auto* o_pe_out = pf2->add_option("--out", pe_out, "sweep CSV");
    auto* o_pe_r16 = pf2->add_option("--fp16-rate", pe_r16, "MACs/cycle");
    auto* o_pe_r8 = pf2->add_option("--fp8-rate", pe_r8, "MACs/cycle");
    auto* o_pe_r4 = pf2->add_option("--fp4-rate", pe_r4, "MACs/cycle");
    auto* o_pe_bw = pf2->add_option("--bandwidth", pe_bw, "bytes/cycle");
    pf2->add_option("--config", pe_cfg, "JSON config file");

    // ------- report
    auto* rp = app.add_subcommand("report", "summarize profiling artifacts");
    std::string rp_profile, rp_tensors, rp_out, rp_cfg;
    auto* o_rp_p = rp->add_option("--profile", rp_profile, "profile CSV");
    auto* o_rp_t = rp->add_option("--tensors", rp_tensors, "activation dir");
    auto* o_rp_o = rp->add_option("--out", rp_out, "output directory");
    rp->add_option("--config", rp_cfg, "JSON config file");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForVersion& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (synth->parsed()) {
            ConfigMerger m("synth");
            m.set_default("S", sy_s);
            m.set_default("H", sy_h);
            m.set_default("G", sy_g);
            m.set_default("persistence", sy_p);
            m.set_default("rate", sy_rate);
            m.set_default("mag", sy_mag);
            m.set_default("seed", sy_seed);
            m.set_default("out", sy_out);
            m.set_default("position", sy_pos);
            m.set_default("layer", sy_layer);
            m.set_default("N", sy_n);
            m.set_default("grid", sy_grid);
            m.set_default("layers", sy_layers);
            m.set_default("w2_hidden", sy_w2h);
            m.set_default("p_low", sy_plow);
            m.set_default("layer_growth", sy_growth);
            if (!sy_cfg.empty()) m.overlay_file(sy_cfg);
            m.overlay_flag(o_sy_s, "S", sy_s);
            m.overlay_flag(o_sy_h, "H", sy_h);
            m.overlay_flag(o_sy_g, "G", sy_g);
            m.overlay_flag(o_sy_p, "persistence", sy_p);
            m.overlay_flag(o_sy_r, "rate", sy_rate);
            m.overlay_flag(o_sy_m, "mag", sy_mag);
            m.overlay_flag(o_sy_seed, "seed", sy_seed);
            m.overlay_flag(o_sy_out, "out", sy_out);
            m.overlay_flag(o_sy_posn, "position", sy_pos);
            m.overlay_flag(o_sy_layer, "layer", sy_layer);
            m.overlay_flag(o_sy_n, "N", sy_n);
            m.overlay_flag(o_sy_grid, "grid", sy_grid);
            m.overlay_flag(o_sy_layers, "layers", sy_layers);
            m.overlay_flag(o_sy_w2h, "w2_hidden", sy_w2h);
            m.overlay_flag(o_sy_plow, "p_low", sy_plow);
            m.overlay_flag(o_sy_growth, "layer_growth", sy_growth);
            if (m.resolved().at("out").get<std::string>().empty())
                throw usage_error("synth requires --out");
            fs::create_directories(m.resolved().at("out").get<std::string>());
            int rc = run_synth(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), true);
            return rc;
        }
        if (profile->parsed()) {
            ConfigMerger m("profile");
            m.set_default("in", pf_in);
            m.set_default("G", pf_g);
            m.set_default("alpha", pf_alpha);
            m.set_default("out", pf_out);
            m.set_default("emit_masks", pf_masks);
            if (!pf_cfg.empty()) m.overlay_file(pf_cfg);
            m.overlay_flag(o_pf_in, "in", pf_in);
            m.overlay_flag(o_pf_g, "G", pf_g);
            m.overlay_flag(o_pf_a, "alpha", pf_alpha);
            m.overlay_flag(o_pf_out, "out", pf_out);
            m.overlay_flag(o_pf_masks, "emit_masks", pf_masks);
            if (m.resolved().at("in").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("profile requires --in and --out");
            int rc = run_profile(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), false);
            return rc;
        }
        if (bt->parsed()) {
            ConfigMerger m("build-table");
            m.set_default("calib", bt_calib);
            m.set_default("G", bt_g);
            m.set_default("alpha", bt_alpha);
            m.set_default("out", bt_out);
            m.set_default("stamp", bt_stamp);
            m.set_default("packed", bt_packed);
            if (!bt_cfg.empty()) m.overlay_file(bt_cfg);
            m.overlay_flag(o_bt_in, "calib", bt_calib);
            m.overlay_flag(o_bt_g, "G", bt_g);
            m.overlay_flag(o_bt_a, "alpha", bt_alpha);
            m.overlay_flag(o_bt_out, "out", bt_out);
            m.overlay_flag(o_bt_stamp, "stamp", bt_stamp);
            m.overlay_flag(o_bt_packed, "packed", bt_packed);
            if (m.resolved().at("calib").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("build-table requires --calib and --out");
            int rc = run_build_table(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), false);
            return rc;
        }
        if (qz->parsed()) {
            ConfigMerger m("quantize");
            m.set_default("in", qz_in);
            m.set_default("table", qz_table);
            m.set_default("G", qz_g);
            m.set_default("fmt", qz_fmt);
            m.set_default("out", qz_out);
            m.set_default("outliers", qz_outliers);
            if (!qz_cfg.empty()) m.overlay_file(qz_cfg);
            m.overlay_flag(o_qz_in, "in", qz_in);
            m.overlay_flag(o_qz_table, "table", qz_table);
            m.overlay_flag(o_qz_g, "G", qz_g);
            m.overlay_flag(o_qz_fmt, "fmt", qz_fmt);
            m.overlay_flag(o_qz_out, "out", qz_out);
            m.overlay_flag(o_qz_b, "outliers", qz_outliers);
            if (m.resolved().at("in").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("quantize requires --in and --out");
            int rc = run_quantize(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), false);
            return rc;
        }
        if (mm->parsed()) {
            ConfigMerger m("matmul");
            m.set_default("x", mm_x);
            m.set_default("outliers", mm_b);
            m.set_default("w", mm_w);
            m.set_default("table", mm_table);
            m.set_default("out", mm_out);
            m.set_default("ref", mm_ref);
            m.set_default("report", mm_report);
            if (!mm_cfg.empty()) m.overlay_file(mm_cfg);
            m.overlay_flag(o_mm_x, "x", mm_x);
            m.overlay_flag(o_mm_b, "outliers", mm_b);
            m.overlay_flag(o_mm_w, "w", mm_w);
            m.overlay_flag(o_mm_t, "table", mm_table);
            m.overlay_flag(o_mm_out, "out", mm_out);
            m.overlay_flag(o_mm_ref, "ref", mm_ref);
            m.overlay_flag(o_mm_rep, "report", mm_report);
            if (m.resolved().at("x").get<std::string>().empty() ||
                m.resolved().at("w").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("matmul requires --x, --w and --out");
            int rc = run_matmul(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), false);
            return rc;
        }
        if (ev->parsed()) {
            ConfigMerger m("eval-error");
            m.set_default("in", ev_in);
            m.set_default("table", ev_table);
            m.set_default("G", ev_g);
            m.set_default("policy", ev_policy);
            m.set_default("out", ev_out);
            if (!ev_cfg.empty()) m.overlay_file(ev_cfg);
            m.overlay_flag(o_ev_in, "in", ev_in);
            m.overlay_flag(o_ev_t, "table", ev_table);
            m.overlay_flag(o_ev_g, "G", ev_g);
            m.overlay_flag(o_ev_p, "policy", ev_policy);
            m.overlay_flag(o_ev_out, "out", ev_out);
            if (m.resolved().at("in").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("eval-error requires --in and --out");
            int rc = run_eval_error(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), false);
            return rc;
        }
        if (pf2->parsed()) {
            ConfigMerger m("perf");
            m.set_default("hw", pe_hw);
            m.set_default("M", pe_m);
            m.set_default("G", pe_g);
            m.set_default("dims", pe_dims);
            m.set_default("out", pe_out);
            m.set_default("fp16_rate", pe_r16);
            m.set_default("fp8_rate", pe_r8);
            m.set_default("fp4_rate", pe_r4);
            m.set_default("bandwidth", pe_bw);
            if (!pe_cfg.empty()) m.overlay_file(pe_cfg);
            m.overlay_flag(o_pe_hw, "hw", pe_hw);
            m.overlay_flag(o_pe_m, "M", pe_m);
            m.overlay_flag(o_pe_g, "G", pe_g);
            m.overlay_flag(o_pe_dims, "dims", pe_dims);
            m.overlay_flag(o_pe_out, "out", pe_out);
            m.overlay_flag(o_pe_r16, "fp16_rate", pe_r16);
            m.overlay_flag(o_pe_r8, "fp8_rate", pe_r8);
            m.overlay_flag(o_pe_r4, "fp4_rate", pe_r4);
            m.overlay_flag(o_pe_bw, "bandwidth", pe_bw);
            if (m.resolved().at("hw").get<std::string>() != "default")
                throw osc::validation_error(
                    "unknown hardware profile '" +
                    m.resolved().at("hw").get<std::string>() +
                    "' (only 'default'; tune via --fp16-rate etc.)");
            int rc = run_perf(m.resolved());
            std::string op = m.resolved().at("out").get<std::string>();
            if (!op.empty()) m.echo_beside(op, false);
            return rc;
        }
        if (rp->parsed()) {
            ConfigMerger m("report");
            m.set_default("profile", rp_profile);
            m.set_default("tensors", rp_tensors);
            m.set_default("out", rp_out);
            if (!rp_cfg.empty()) m.overlay_file(rp_cfg);
            m.overlay_flag(o_rp_p, "profile", rp_profile);
            m.overlay_flag(o_rp_t, "tensors", rp_tensors);
            m.overlay_flag(o_rp_o, "out", rp_out);
            if (m.resolved().at("profile").get<std::string>().empty() ||
                m.resolved().at("out").get<std::string>().empty())
                throw usage_error("report requires --profile and --out");
            fs::create_directories(m.resolved().at("out").get<std::string>());
            int rc = run_report(m.resolved());
            m.echo_beside(m.resolved().at("out").get<std::string>(), true);
            return rc;
        }
        std::fprintf(stderr, "%s\n", app.help().c_str());
        return kExitUsage;
    } catch (const usage_error& e) {
        std::fprintf(stderr, "osc: usage error: %s (see --help)\n", e.what());
        return kExitUsage;
    } catch (const osc::io_error& e) {
        std::fprintf(stderr, "osc: I/O error: %s\n", e.what());
        return kExitIo;
    } catch (const fs::filesystem_error& e) {
        std::fprintf(stderr, "osc: I/O error: %s\n", e.what());
        return kExitIo;
    } catch (const osc::error& e) {
        std::fprintf(stderr, "osc: %s\n", e.what());
        return kExitValidation;
    } catch (const json::exception& e) {
        std::fprintf(stderr, "osc: %s\n", e.what());
        return kExitValidation;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "osc: %s\n", e.what());
        return kExitValidation;
    }
}
