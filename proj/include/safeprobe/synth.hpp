#pragma once

// Synthetic trace sets with planted safety geometry.
//
// For item i at layer l, with s = +1 for safe and -1 for unsafe items:
//
//   direct:  h = s * (class_gap / 2) * u_l + noise_sigma * z
//   tool:    h = direct + tool_shift_alpha * v_l
//
// z is standard normal and depends only on (seed, i, l), so direct and tool
// sets built from one config are paired item by item.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "safeprobe/error.hpp"
#include "safeprobe/linalg.hpp"
#include "safeprobe/paradigm.hpp"
#include "safeprobe/rng.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

struct SynthConfig {
    std::uint64_t seed = 0;
    std::size_t d_model = 0;
    std::size_t n_layers = 0;
    std::size_t n_items = 0;
    std::vector<Vec> planted_directions;    // u per layer
    double class_gap = 0.0;
    double noise_sigma = 0.0;
    double tool_shift_alpha = 0.0;
    std::vector<Vec> tool_shift_direction;  // v_tool per layer
    double unsafe_fraction = 0.5;
    /// Layers that carry class separation; empty means every layer.
    std::vector<std::size_t> planted_layers;
    std::string variant = "normal";
    std::string model_id = "synthetic";

    bool is_planted(std::size_t layer) const {
        return planted_layers.empty() ||
               std::find(planted_layers.begin(), planted_layers.end(), layer) != planted_layers.end();
    }
};

inline std::vector<Vec> axis_directions(std::size_t n_layers, std::size_t d_model, std::size_t axis) {
    return std::vector<Vec>(n_layers, unit_axis(d_model, axis));
}

/// Independent random unit vector per layer.
inline std::vector<Vec> random_directions(std::uint64_t seed, std::size_t n_layers, std::size_t d_model) {
    std::vector<Vec> out;
    for (std::size_t l = 0; l < n_layers; ++l) {
        CounterRng rng(derive_seed(seed, "direction"), l);
        Vec v(d_model);
        for (double& x : v) x = rng.normal();
        out.push_back(normalized(std::move(v)));
    }
    return out;
}

inline void validate(const SynthConfig& c) {
    using detail::require;
    require(c.d_model >= 1, "d_model", "must be >= 1");
    require(c.n_layers >= 1, "n_layers", "must be >= 1");
    require(c.n_items >= 1, "n_items", "must be >= 1");
    require(c.class_gap >= 0.0 && std::isfinite(c.class_gap), "class_gap", "must be finite and >= 0");
    require(c.noise_sigma >= 0.0 && std::isfinite(c.noise_sigma), "noise_sigma",
            "must be finite and >= 0");
    require(c.tool_shift_alpha >= 0.0 && std::isfinite(c.tool_shift_alpha), "tool_shift_alpha",
            "must be finite and >= 0");
    require(c.unsafe_fraction >= 0.0 && c.unsafe_fraction <= 1.0, "unsafe_fraction",
            "must lie in [0, 1]");
    const auto check_dirs = [&](const std::vector<Vec>& dirs, const char* field) {
        require(dirs.size() == c.n_layers, field,
                "expected " + std::to_string(c.n_layers) + " per-layer vectors, got " +
                    std::to_string(dirs.size()));
        for (std::size_t l = 0; l < dirs.size(); ++l) {
            require(dirs[l].size() == c.d_model, field,
                    "layer " + std::to_string(l) + " vector has wrong dimension");
            require(is_unit(dirs[l]), field, "layer " + std::to_string(l) + " vector is not unit-norm");
        }
    };
    check_dirs(c.planted_directions, "planted_directions");
    check_dirs(c.tool_shift_direction, "tool_shift_direction");
    for (std::size_t l : c.planted_layers)
        require(l < c.n_layers, "planted_layers", "layer " + std::to_string(l) + " out of range");
}

/// round-half-up(unsafe_fraction * n_items) unsafe items, chosen by a seeded shuffle.
inline std::vector<SafetyLabel> synth_labels(const SynthConfig& c) {
    const auto n_unsafe =
        static_cast<std::size_t>(std::floor(c.unsafe_fraction * static_cast<double>(c.n_items) + 0.5));
    std::vector<std::size_t> order(c.n_items);
    std::iota(order.begin(), order.end(), std::size_t{0});
    CounterRng rng(derive_seed(c.seed, "labels"), 0);
    for (std::size_t i = c.n_items; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    std::vector<SafetyLabel> labels(c.n_items, SafetyLabel::safe);
    for (std::size_t k = 0; k < n_unsafe; ++k) labels[order[k]] = SafetyLabel::unsafe;
    return labels;
}

inline std::string synth_item_id(std::size_t i) {
    std::string digits = std::to_string(i);
    return "item_" + std::string(digits.size() < 6 ? 6 - digits.size() : 0, '0') + digits;
}

inline TraceSet generate_synthetic_traces(const SynthConfig& c, Paradigm paradigm) {
    validate(c);
    const bool shifted = is_tool_paradigm(paradigm);
    const auto labels = synth_labels(c);
    const std::uint64_t noise_seed = derive_seed(c.seed, "noise");

    TraceSet set;
    set.manifest.model_id = c.model_id;
    set.manifest.d_model = c.d_model;
    set.manifest.n_layers = c.n_layers;
    set.manifest.n_items = c.n_items;
    set.manifest.paradigm = paradigm;
    set.manifest.variant = c.variant;
    set.manifest.token_position = "synthetic";
    set.records.reserve(c.n_items);

    for (std::size_t i = 0; i < c.n_items; ++i) {
        ActivationRecord r;
        r.item_id = synth_item_id(i);
        r.category_id = static_cast<int>(i % kMaxCategory) + kMinCategory;
        r.label = labels[i];
        r.states.resize(c.n_layers * c.d_model);
        const double sign = labels[i] == SafetyLabel::safe ? 1.0 : -1.0;
        for (std::size_t l = 0; l < c.n_layers; ++l) {
            const double half_gap = c.is_planted(l) ? 0.5 * c.class_gap : 0.0;
            CounterRng rng(noise_seed, i * c.n_layers + l);
            auto out = r.layer_state(l, c.d_model);
            for (std::size_t k = 0; k < c.d_model; ++k) {
                // Accumulate from +0.0 so no component is ever -0.0; this keeps the
                // alpha = 0 tool set bit-identical to the direct set.
                double x = 0.0;
                x += sign * half_gap * c.planted_directions[l][k];
                x += c.noise_sigma * rng.normal();
                if (shifted) x += c.tool_shift_alpha * c.tool_shift_direction[l][k];
                out[k] = static_cast<float>(x);
            }
        }
        set.records.push_back(std::move(r));
    }
    return set;
}

/// Ground truth planted by a config, for tests and the risk oracle.
struct PlantedOracle {
    std::vector<Vec> directions;
    std::vector<Vec> tool_directions;
    double alpha = 0.0;
    std::vector<std::size_t> planted_layers;
    /// Direct-mode safety score S = u^T h at a planted layer is Gaussian with
    /// these parameters per class.
    double safe_score_mean = 0.0;
    double unsafe_score_mean = 0.0;
    double score_std = 0.0;

    /// delta = u^T v_tool at a layer.
    double delta(std::size_t layer) const { return dot(directions.at(layer), tool_directions.at(layer)); }
};

inline PlantedOracle planted_ground_truth(const SynthConfig& c) {
    validate(c);
    PlantedOracle o;
    o.directions = c.planted_directions;
    o.tool_directions = c.tool_shift_direction;
    o.alpha = c.tool_shift_alpha;
    o.planted_layers = c.planted_layers;
    if (o.planted_layers.empty()) {
        o.planted_layers.resize(c.n_layers);
        std::iota(o.planted_layers.begin(), o.planted_layers.end(), std::size_t{0});
    }
    // Directions are unit, so ||u||^2 = 1 and Var(u^T z) = sigma^2.
    o.safe_score_mean = 0.5 * c.class_gap;
    o.unsafe_score_mean = -0.5 * c.class_gap;
    o.score_std = c.noise_sigma;
    return o;
}

namespace detail {

/// Accepts an explicit per-layer list, one shared vector, {"axis": k},
/// {"random_seed": s} or {"blend_axis": k, "weight": w, "random_seed": s}.
inline std::vector<Vec> directions_from_json(const nlohmann::json& j, std::size_t n_layers,
                                             std::size_t d_model, const char* field) {
    try {
        if (j.is_object() && j.contains("axis")) {
            const auto axis = j.at("axis").get<std::size_t>();
            require(axis < d_model, field, "axis out of range");
            return axis_directions(n_layers, d_model, axis);
        }
        if (j.is_object() && j.contains("blend_axis")) {
            // normalize(w * e_axis + (1 - w) * random unit), per layer
            const auto axis = j.at("blend_axis").get<std::size_t>();
            require(axis < d_model, field, "blend_axis out of range");
            const double w = j.value("weight", 0.5);
            auto dirs = random_directions(j.value("random_seed", std::uint64_t{0}), n_layers, d_model);
            for (auto& v : dirs) {
                for (double& x : v) x *= 1.0 - w;
                v[axis] += w;
                v = normalized(std::move(v));
            }
            return dirs;
        }
        if (j.is_object() && j.contains("random_seed"))
            return random_directions(j.at("random_seed").get<std::uint64_t>(), n_layers, d_model);
        if (j.is_array() && !j.empty() && j.front().is_number())
            return std::vector<Vec>(n_layers, j.get<Vec>());
        if (j.is_array()) return j.get<std::vector<Vec>>();
    } catch (const nlohmann::json::exception& e) {
        fail(field, e.what());
    }
    fail(field, "expected a vector list, {\"axis\": k} or {\"random_seed\": s}");
}

}  // namespace detail

/// Reads a config object whose keys match SynthConfig field names.
inline SynthConfig synth_config_from_json(const nlohmann::json& j) {
    using detail::require;
    require(j.is_object(), "synth", "config must be a JSON object");
    SynthConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.d_model = j.at("d_model").get<std::size_t>();
        c.n_layers = j.at("n_layers").get<std::size_t>();
        c.n_items = j.at("n_items").get<std::size_t>();
        c.class_gap = j.at("class_gap").get<double>();
        c.noise_sigma = j.at("noise_sigma").get<double>();
        c.tool_shift_alpha = j.value("tool_shift_alpha", 0.0);
        c.unsafe_fraction = j.value("unsafe_fraction", 0.5);
        c.planted_layers = j.value("planted_layers", std::vector<std::size_t>{});
        c.variant = j.value("variant", std::string("normal"));
        c.model_id = j.value("model_id", std::string("synthetic"));
    } catch (const nlohmann::json::exception& e) {
        detail::fail("synth", e.what());
    }
    require(c.d_model >= 1, "d_model", "must be >= 1");
    require(c.n_layers >= 1, "n_layers", "must be >= 1");
    require(c.n_items >= 1, "n_items", "must be >= 1");
    c.planted_directions = detail::directions_from_json(
        j.value("planted_directions", nlohmann::json{{"axis", 0}}), c.n_layers, c.d_model,
        "planted_directions");
    c.tool_shift_direction = detail::directions_from_json(
        j.value("tool_shift_direction", nlohmann::json{{"axis", 0}}), c.n_layers, c.d_model,
        "tool_shift_direction");
    validate(c);
    return c;
}

}  // namespace safeprobe
