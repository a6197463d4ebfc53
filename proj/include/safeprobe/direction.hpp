#pragma once

// Difference-of-means safety directions, the paired image-tool vector, and
// readout-layer selection.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "safeprobe/error.hpp"
#include "safeprobe/format.hpp"
#include "safeprobe/linalg.hpp"
#include "safeprobe/paradigm.hpp"
#include "safeprobe/scores.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

/// Unit readout direction at one layer; norm_prefit keeps ||mean(safe) - mean(unsafe)||.
struct SafetyDirection {
    std::size_t layer = 0;
    Vec vector;
    double norm_prefit = 0.0;
    Paradigm mode = Paradigm::direct;
    std::string variant;
    std::size_t n_safe = 0;
    std::size_t n_unsafe = 0;

    std::size_t dim() const noexcept { return vector.size(); }
};

/// Mean paired residual difference tool - direct. Not normalized.
struct ToolVector {
    std::size_t layer = 0;
    Vec vector;
    std::size_t n_pairs = 0;
};

/// Fits on the listed record indices only.
inline SafetyDirection fit_safety_direction(const TraceSet& traces, std::size_t layer,
                                            std::span<const std::size_t> items) {
    using detail::require;
    require(layer < traces.n_layers(), "layer",
            "layer " + std::to_string(layer) + " out of range for " +
                std::to_string(traces.n_layers()) + " layers");
    const std::size_t d = traces.d_model();
    Vec safe_sum(d, 0.0), unsafe_sum(d, 0.0);
    std::size_t n_safe = 0, n_unsafe = 0;
    for (std::size_t i : items) {
        const auto& r = traces.records.at(i);
        if (r.label == SafetyLabel::unlabeled) continue;
        Vec& acc = r.label == SafetyLabel::safe ? safe_sum : unsafe_sum;
        (r.label == SafetyLabel::safe ? n_safe : n_unsafe) += 1;
        const auto h = r.layer_state(layer, d);
        for (std::size_t k = 0; k < d; ++k) acc[k] += h[k];
    }
    require(n_safe >= 1, "labels", "no safe records to fit a direction");
    require(n_unsafe >= 1, "labels", "no unsafe records to fit a direction");

    Vec raw(d);
    for (std::size_t k = 0; k < d; ++k)
        raw[k] = safe_sum[k] / static_cast<double>(n_safe) - unsafe_sum[k] / static_cast<double>(n_unsafe);
    const double n = norm(raw);
    require(n > 0.0, "direction", "class means are identical; the direction cannot be normalized");

    SafetyDirection out;
    out.layer = layer;
    out.norm_prefit = n;
    for (double& x : raw) x /= n;
    out.vector = std::move(raw);
    out.mode = traces.manifest.paradigm;
    out.variant = traces.manifest.variant;
    out.n_safe = n_safe;
    out.n_unsafe = n_unsafe;
    return out;
}

inline SafetyDirection fit_safety_direction(const TraceSet& traces, std::size_t layer) {
    std::vector<std::size_t> all(traces.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return fit_safety_direction(traces, layer, all);
}

inline ToolVector fit_tool_vector(const Pairing& pairing, std::size_t layer) {
    using detail::require;
    require(!pairing.pairs.empty(), "pairs", "empty pairing");
    require(layer < pairing.n_layers, "layer", "layer " + std::to_string(layer) + " out of range");
    const std::size_t d = pairing.d_model;
    Vec sum(d, 0.0);
    for (const auto& p : pairing.pairs) {
        const auto direct = p.first->layer_state(layer, d);
        const auto tool = p.second->layer_state(layer, d);
        for (std::size_t k = 0; k < d; ++k)
            sum[k] += static_cast<double>(tool[k]) - static_cast<double>(direct[k]);
    }
    ToolVector out;
    out.layer = layer;
    out.n_pairs = pairing.pairs.size();
    for (double& x : sum) x /= static_cast<double>(out.n_pairs);
    out.vector = std::move(sum);
    for (double x : out.vector) require(std::isfinite(x), "vector", "non-finite tool vector");
    return out;
}

/// Scores of the listed records at the direction's layer.
inline ScoreSet project_scores(const TraceSet& traces, const SafetyDirection& dir,
                               std::span<const std::size_t> items) {
    using detail::require;
    require(dir.dim() == traces.d_model(), "d_model",
            "direction has dimension " + std::to_string(dir.dim()) + ", traces have " +
                std::to_string(traces.d_model()));
    require(dir.layer < traces.n_layers(), "layer", "direction layer not present in traces");
    ScoreSet out;
    for (std::size_t i : items) {
        const auto& r = traces.records.at(i);
        out.push_back(r.item_id, dot(r.layer_state(dir.layer, traces.d_model()), std::span<const double>(dir.vector)),
                      r.label);
    }
    return out;
}

/// S(z) = u^T h(z) for every record.
inline ScoreSet project_scores(const TraceSet& traces, const SafetyDirection& dir) {
    std::vector<std::size_t> all(traces.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return project_scores(traces, dir, all);
}

/// Fit on the even-hash half, AUC on the odd-hash half.
inline double held_out_auc(const TraceSet& traces, std::size_t layer, SafetyDirection* fitted = nullptr) {
    const auto split = held_out_split(traces);
    auto dir = fit_safety_direction(traces, layer, split.fit);
    const double auc = roc_auc(project_scores(traces, dir, split.eval));
    if (fitted) *fitted = std::move(dir);
    return auc;
}

enum class CutoffSide { at_most, at_least };

inline CutoffSide parse_cutoff_side(std::string_view s) {
    if (s == "at_most") return CutoffSide::at_most;
    if (s == "at_least") return CutoffSide::at_least;
    detail::fail("cutoff_side", "expected at_most or at_least, got '" + std::string(s) + "'");
}

constexpr std::string_view to_string(CutoffSide s) noexcept {
    return s == CutoffSide::at_most ? "at_most" : "at_least";
}

inline bool layer_eligible(std::size_t layer, std::size_t n_layers, double cutoff_fraction, CutoffSide side) {
    const double bound = cutoff_fraction * static_cast<double>(n_layers);
    const double l = static_cast<double>(layer);
    return side == CutoffSide::at_most ? l <= bound : l >= bound;
}

struct LayerChoice {
    std::size_t layer = 0;
    double auc = 0.0;
};

/// Highest held-out AUC among eligible layers; ties go to the smaller index.
inline LayerChoice select_readout_layer(const TraceSet& traces, double cutoff_fraction = 0.8,
                                        CutoffSide side = CutoffSide::at_most) {
    detail::require(cutoff_fraction > 0.0 && cutoff_fraction <= 1.0, "cutoff",
                    "cutoff fraction must lie in (0, 1]");
    std::optional<LayerChoice> best;
    for (std::size_t l = 0; l < traces.n_layers(); ++l) {
        if (!layer_eligible(l, traces.n_layers(), cutoff_fraction, side)) continue;
        const double auc = held_out_auc(traces, l);
        if (!best || auc > best->auc) best = LayerChoice{l, auc};
    }
    detail::require(best.has_value(), "cutoff", "no layer satisfies the cutoff");
    return *best;
}

inline constexpr std::string_view kDirectionMagic = "# safeprobe direction v1";

/// Text format: magic line, "key value" header lines, then one component per line.
inline std::string serialize_direction(const SafetyDirection& d) {
    std::string out(kDirectionMagic);
    out += "\nlayer " + std::to_string(d.layer);
    out += "\nmode " + std::string(to_string(d.mode));
    out += "\nvariant " + d.variant;
    out += "\nn_safe " + std::to_string(d.n_safe);
    out += "\nn_unsafe " + std::to_string(d.n_unsafe);
    out += "\nnorm_prefit " + detail::format_double(d.norm_prefit);
    out += "\nd_model " + std::to_string(d.dim());
    out += '\n';
    for (double x : d.vector) out += detail::format_double(x) + '\n';
    return out;
}

inline SafetyDirection parse_direction(std::string_view text) {
    using detail::require;
    std::istringstream in{std::string(text)};
    std::string line;
    require(std::getline(in, line) && line == kDirectionMagic, "direction", "missing direction header");
    SafetyDirection d;
    std::size_t dim = 0;
    const auto header = [&](const char* key) {
        require(static_cast<bool>(std::getline(in, line)), key, "missing header line");
        const std::string prefix = std::string(key) + " ";
        require(line.rfind(prefix, 0) == 0, key, "expected '" + prefix + "...', got '" + line + "'");
        return line.substr(prefix.size());
    };
    const auto count = [&](const char* key) {
        return static_cast<std::size_t>(detail::parse_double(header(key), key));
    };
    d.layer = count("layer");
    d.mode = parse_paradigm(header("mode"));
    d.variant = header("variant");
    d.n_safe = count("n_safe");
    d.n_unsafe = count("n_unsafe");
    d.norm_prefit = detail::parse_double(header("norm_prefit"), "norm_prefit");
    dim = count("d_model");
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        d.vector.push_back(detail::parse_double(line, "vector"));
    }
    require(d.vector.size() == dim, "d_model",
            "header declares " + std::to_string(dim) + " components, file has " + std::to_string(d.vector.size()));
    require(is_unit(d.vector), "vector", "stored direction is not unit-norm");
    return d;
}

inline void write_direction(const std::filesystem::path& path, const SafetyDirection& d) {
    detail::write_file(path, serialize_direction(d));
}

inline SafetyDirection read_direction(const std::filesystem::path& path) {
    return parse_direction(detail::read_file(path));
}

inline constexpr std::string_view kToolVectorMagic = "# safeprobe tool-vector v1";

inline std::string serialize_tool_vector(const ToolVector& v) {
    std::string out(kToolVectorMagic);
    out += "\nlayer " + std::to_string(v.layer);
    out += "\nn_pairs " + std::to_string(v.n_pairs);
    out += "\nd_model " + std::to_string(v.vector.size());
    out += '\n';
    for (double x : v.vector) out += detail::format_double(x) + '\n';
    return out;
}

inline ToolVector parse_tool_vector(std::string_view text) {
    using detail::require;
    std::istringstream in{std::string(text)};
    std::string line;
    require(std::getline(in, line) && line == kToolVectorMagic, "tool_vector", "missing tool-vector header");
    const auto header = [&](const char* key) {
        require(static_cast<bool>(std::getline(in, line)), key, "missing header line");
        const std::string prefix = std::string(key) + " ";
        require(line.rfind(prefix, 0) == 0, key, "expected '" + prefix + "...', got '" + line + "'");
        return static_cast<std::size_t>(detail::parse_double(line.substr(prefix.size()), key));
    };
    ToolVector v;
    v.layer = header("layer");
    v.n_pairs = header("n_pairs");
    const std::size_t dim = header("d_model");
    while (std::getline(in, line))
        if (!line.empty()) v.vector.push_back(detail::parse_double(line, "vector"));
    require(v.vector.size() == dim, "d_model", "component count does not match header");
    require(v.n_pairs >= 1, "n_pairs", "must be >= 1");
    return v;
}

}  // namespace safeprobe
