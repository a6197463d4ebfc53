#pragma once

// Residual-stream offsets  dh = lambda * u_direct + mu * u_tool  applied inside
// a small deterministic residual stack, and dose-response sweeps reported
// against a zero-injection baseline from the same batch.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safeprobe/direction.hpp"
#include "safeprobe/error.hpp"
#include "safeprobe/linalg.hpp"
#include "safeprobe/rng.hpp"
#include "safeprobe/table.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

struct InterventionSpec {
    std::size_t layer = 0;
    double lambda = 0.0;  // coefficient on the direct-mode direction
    double mu = 0.0;      // coefficient on the tool-mode direction
    SafetyDirection dir_direct;
    SafetyDirection dir_tool;
};

inline void validate(const InterventionSpec& s) {
    using detail::require;
    require(is_unit(s.dir_direct.vector), "dir_direct", "direction is not unit-norm");
    require(is_unit(s.dir_tool.vector), "dir_tool", "direction is not unit-norm");
    require(s.dir_direct.dim() == s.dir_tool.dim(), "dir_tool", "directions differ in dimension");
    require(std::isfinite(s.lambda) && std::isfinite(s.mu), "coefficients", "non-finite coefficient");
}

/// state + lambda * dir_direct + mu * dir_tool. Components whose offset is
/// exactly zero are copied untouched, so a (0, 0) spec is a bitwise no-op.
inline Vec apply_residual_offset(std::span<const double> state, const InterventionSpec& spec) {
    validate(spec);
    detail::require(state.size() == spec.dir_direct.dim(), "d_model",
                    "state has dimension " + std::to_string(state.size()) + ", directions have " +
                        std::to_string(spec.dir_direct.dim()));
    Vec out(state.begin(), state.end());
    for (std::size_t k = 0; k < out.size(); ++k) {
        const double offset = spec.lambda * spec.dir_direct.vector[k] + spec.mu * spec.dir_tool.vector[k];
        if (offset != 0.0) out[k] += offset;
    }
    return out;
}

struct ToyStackConfig {
    std::uint64_t seed = 0;
    std::size_t n_layers = 0;
    std::size_t d_model = 0;
    /// Spectral norm of every block's weight matrix; < 1 keeps passes stable.
    double gain = 0.5;
    /// tanh inside each block; false makes the whole stack linear.
    bool squashing = true;
    /// Unit readout at the final layer; random from the seed when empty.
    std::optional<Vec> readout;
    double judge_threshold = 0.0;
};

struct ForwardResult {
    Vec final_state;
    double score = 0.0;
    bool unsafe = false;
};

/// Frozen random residual stack: h <- h + W_k f(h) for k = 0..L-1, with f
/// tanh or identity. Weights depend only on (seed, d_model, layer index).
class ToyStack {
public:
    explicit ToyStack(ToyStackConfig cfg) : cfg_(std::move(cfg)) {
        using detail::require;
        require(cfg_.d_model >= 1, "d_model", "must be >= 1");
        require(cfg_.gain >= 0.0 && cfg_.gain < 1.0, "gain", "spectral gain must lie in [0, 1)");
        const std::size_t d = cfg_.d_model;
        if (cfg_.readout) {
            require(cfg_.readout->size() == d, "readout", "readout dimension mismatch");
            require(is_unit(*cfg_.readout), "readout", "readout is not unit-norm");
            readout_ = *cfg_.readout;
        } else {
            CounterRng rng(derive_seed(cfg_.seed, "readout"), 0);
            Vec r(d);
            for (double& x : r) x = rng.normal();
            readout_ = normalized(std::move(r));
        }
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) weights_.push_back(make_weights(l));
    }

    std::size_t n_layers() const noexcept { return cfg_.n_layers; }
    std::size_t d_model() const noexcept { return cfg_.d_model; }
    const Vec& readout() const noexcept { return readout_; }
    double judge_threshold() const noexcept { return cfg_.judge_threshold; }
    const ToyStackConfig& config() const noexcept { return cfg_; }

    /// One block applied to h.
    Vec block(std::size_t layer, std::span<const double> h) const {
        const std::size_t d = cfg_.d_model;
        const auto& w = weights_.at(layer);
        Vec f(h.begin(), h.end());
        if (cfg_.squashing)
            for (double& x : f) x = std::tanh(x);
        Vec out(h.begin(), h.end());
        for (std::size_t i = 0; i < d; ++i) {
            double acc = 0.0;
            for (std::size_t j = 0; j < d; ++j) acc += w[i * d + j] * f[j];
            out[i] += acc;
        }
        return out;
    }

    /// Runs every block; with a spec, the offset is added to block `layer`'s
    /// output before the remaining blocks.
    ForwardResult forward(std::span<const double> input, const InterventionSpec* spec = nullptr) const {
        using detail::require;
        require(input.size() == cfg_.d_model, "d_model", "input dimension mismatch");
        if (spec)
            require(spec->layer < cfg_.n_layers, "layer",
                    "intervention layer " + std::to_string(spec->layer) + " out of range for " +
                        std::to_string(cfg_.n_layers) + " layers");
        Vec h(input.begin(), input.end());
        for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
            h = block(l, h);
            if (spec && spec->layer == l) h = apply_residual_offset(h, *spec);
        }
        ForwardResult r;
        r.score = dot(h, readout_);
        r.unsafe = r.score < cfg_.judge_threshold;
        r.final_state = std::move(h);
        return r;
    }

    /// For a linear stack: the final-state change caused by adding `v` after
    /// block `layer`, i.e. the product of the remaining blocks applied to v.
    Vec push_forward(std::size_t layer, std::span<const double> v) const {
        detail::require(!cfg_.squashing, "squashing", "push_forward is only defined for a linear stack");
        detail::require(layer < cfg_.n_layers, "layer", "layer out of range");
        Vec h(v.begin(), v.end());
        for (std::size_t l = layer + 1; l < cfg_.n_layers; ++l) h = block(l, h);
        return h;
    }

private:
    std::vector<double> make_weights(std::size_t layer) const {
        const std::size_t d = cfg_.d_model;
        CounterRng rng(derive_seed(cfg_.seed, "block"), layer);
        std::vector<double> w(d * d);
        for (double& x : w) x = rng.normal();
        // Rescale to the target spectral norm, estimated by power iteration on W^T W.
        Vec v(d, 1.0 / std::sqrt(static_cast<double>(d)));
        double sigma = 0.0;
        for (int it = 0; it < 200; ++it) {
            Vec wv(d, 0.0), wtwv(d, 0.0);
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) wv[i] += w[i * d + j] * v[j];
            for (std::size_t i = 0; i < d; ++i)
                for (std::size_t j = 0; j < d; ++j) wtwv[j] += w[i * d + j] * wv[i];
            const double n = norm(wtwv);
            if (n == 0.0) break;
            sigma = std::sqrt(n);
            for (std::size_t j = 0; j < d; ++j) v[j] = wtwv[j] / n;
        }
        if (sigma > 0.0)
            for (double& x : w) x *= cfg_.gain / sigma;
        return w;
    }

    ToyStackConfig cfg_;
    Vec readout_;
    std::vector<std::vector<double>> weights_;
};

/// Layer states of every record, widened to double.
inline std::vector<Vec> batch_from_traces(const TraceSet& traces, std::size_t layer) {
    detail::require(layer < traces.n_layers(), "layer", "layer out of range");
    std::vector<Vec> batch;
    batch.reserve(traces.size());
    for (std::size_t i = 0; i < traces.size(); ++i) {
        const auto h = traces.state(i, layer);
        batch.emplace_back(h.begin(), h.end());
    }
    return batch;
}

enum class SweepAxis { lambda, mu };

inline SweepAxis parse_sweep_axis(std::string_view s) {
    if (s == "lambda") return SweepAxis::lambda;
    if (s == "mu") return SweepAxis::mu;
    detail::fail("sweep_axis", "expected lambda or mu, got '" + std::string(s) + "'");
}

constexpr std::string_view to_string(SweepAxis a) noexcept { return a == SweepAxis::lambda ? "lambda" : "mu"; }

struct SweepSpec {
    std::string name = "sweep";
    std::string mode = "direct";  // label for the batch's inference mode
    std::size_t layer = 0;
    SafetyDirection dir_direct;
    SafetyDirection dir_tool;
    SweepAxis axis = SweepAxis::mu;
    /// Coefficient held on the non-swept direction.
    double fixed_offset = 0.0;
    std::vector<double> grid;

    /// Same sweep with the two directions exchanged.
    SweepSpec swapped() const {
        SweepSpec s = *this;
        std::swap(s.dir_direct, s.dir_tool);
        s.name += "_swapped";
        return s;
    }
};

struct SweepRow {
    double coefficient = 0.0;
    std::size_t unsafe = 0;
    double asr = 0.0;
    double delta = 0.0;  // asr - baseline_asr, percentage points
};

struct SweepResult {
    std::string name;
    std::string mode;
    std::size_t n = 0;
    std::size_t baseline_unsafe = 0;
    double baseline_asr = 0.0;
    std::vector<SweepRow> rows;  // grid order
    std::string shape;
};

/// Slope-sign label over the rows ordered by coefficient.
inline std::string sweep_shape(std::vector<SweepRow> rows) {
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) { return a.coefficient < b.coefficient; });
    std::vector<int> signs;
    for (std::size_t i = 1; i < rows.size(); ++i) {
        const auto a = rows[i - 1].unsafe, b = rows[i].unsafe;
        if (a != b) signs.push_back(b > a ? 1 : -1);
    }
    if (signs.empty()) return "flat";
    if (std::all_of(signs.begin(), signs.end(), [](int s) { return s > 0; })) return "monotone_up";
    if (std::all_of(signs.begin(), signs.end(), [](int s) { return s < 0; })) return "monotone_down";
    const auto turn = std::find(signs.begin(), signs.end(), 1);
    if (signs.front() < 0 && std::all_of(turn, signs.end(), [](int s) { return s > 0; })) return "u_shaped";
    return "non_monotone";
}

inline double percent(std::size_t unsafe, std::size_t n) {
    return 100.0 * static_cast<double>(unsafe) / static_cast<double>(n);
}

/// Runs the batch at every grid value and at zero injection (lambda = mu = 0).
/// Counting is exact integer arithmetic, so results do not depend on order.
inline SweepResult dose_response_sweep(const ToyStack& stack, std::span<const Vec> batch, const SweepSpec& spec) {
    using detail::require;
    require(!batch.empty(), "batch", "empty batch");
    require(!spec.grid.empty(), "grid", "empty grid");

    const auto count_unsafe = [&](const InterventionSpec* iv) {
        std::size_t k = 0;
        for (const auto& x : batch) k += stack.forward(x, iv).unsafe ? 1 : 0;
        return k;
    };

    InterventionSpec iv{spec.layer, 0.0, 0.0, spec.dir_direct, spec.dir_tool};
    SweepResult out;
    out.name = spec.name;
    out.mode = spec.mode;
    out.n = batch.size();
    out.baseline_unsafe = count_unsafe(&iv);
    out.baseline_asr = percent(out.baseline_unsafe, out.n);

    for (double c : spec.grid) {
        iv.lambda = spec.axis == SweepAxis::lambda ? c : spec.fixed_offset;
        iv.mu = spec.axis == SweepAxis::mu ? c : spec.fixed_offset;
        SweepRow row;
        row.coefficient = c;
        row.unsafe = count_unsafe(&iv);
        row.asr = percent(row.unsafe, out.n);
        row.delta = row.asr - out.baseline_asr;
        out.rows.push_back(row);
    }
    out.shape = sweep_shape(out.rows);
    return out;
}

/// Grid values inside the non-degenerate dose range |c| <= 2 * class_gap.
inline std::vector<double> non_degenerate(std::span<const double> grid, double class_gap) {
    std::vector<double> out;
    for (double c : grid)
        if (std::abs(c) <= 2.0 * class_gap) out.push_back(c);
    return out;
}

inline Table sweep_table(std::span<const SweepResult> sweeps) {
    Table t({"sweep", "mode", "coefficient", "baseline_asr", "asr", "delta", "shape"});
    for (const auto& s : sweeps)
        for (const auto& r : s.rows)
            t.row({s.name, s.mode, cell(r.coefficient), fixed(s.baseline_asr, 4), fixed(r.asr, 4),
                   fixed(r.delta, 4), s.shape});
    return t;
}

}  // namespace safeprobe
