// Acceptance checks 1-11. One PASS/FAIL line per criterion; exit status is
// nonzero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <sstream>

#include "safeprobe/pipeline.hpp"
#include "support.hpp"

using namespace safeprobe;
using testing_support::TempDir;

namespace {

struct Outcome {
    bool pass = true;
    std::string detail;
};

/// Records the first failed check and keeps going.
struct Checker {
    Outcome o;
    void check(bool ok, const std::string& what) {
        if (!ok && o.pass) {
            o.pass = false;
            o.detail = what;
        }
    }
};

std::string fmt(const char* f, double a, double b = 0, double c = 0) {
    char buf[256];
    std::snprintf(buf, sizeof buf, f, a, b, c);
    return buf;
}

// 1
Outcome stratified_table() {
    const std::vector<std::size_t> sizes{97, 163, 44, 144, 122, 154, 109, 153, 139, 130, 167, 109, 149};
    const std::vector<std::size_t> want{12, 20, 5, 17, 15, 18, 13, 18, 17, 16, 20, 13, 18};
    std::map<int, std::size_t> m;
    for (std::size_t i = 0; i < sizes.size(); ++i) m[int(i) + 1] = sizes[i];
    const auto s = stratified_sample(m, 0.12);
    Checker c;
    for (std::size_t i = 0; i < want.size(); ++i)
        c.check(s.counts.at(int(i) + 1) == want[i], "category " + std::to_string(i + 1) + " count " +
                                                         std::to_string(s.counts.at(int(i) + 1)));
    c.check(s.total == 202, "total " + std::to_string(s.total));
    if (c.o.pass) c.o.detail = "13 counts match, total 202";
    return c.o;
}

// 2
Outcome drift_table() {
    const auto s = run_drift_stats(std::vector<double>{17.33, 17.82, 21.78, 24.75, 19.80});
    Checker c;
    c.check(fixed(s.mean, 2) == "20.30", "mean " + fixed(s.mean, 2));
    c.check(s.std && fixed(*s.std, 2) == "3.05", "std " + fixed(s.std.value_or(0), 2));
    c.check(fixed(s.spread, 2) == "7.42", "spread " + fixed(s.spread, 2));
    if (c.o.pass) c.o.detail = "mean 20.30, std 3.05, spread 7.42";
    return c.o;
}

// 3
Outcome asr_display() {
    std::vector<EvalRecord> r(202);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i].item.item_id = "i" + std::to_string(i);
        r[i].unsafe = i < 73;
    }
    const auto a = compute_asr(r);
    return {a.display() == "36.1", "73/202 -> " + a.display() + "%"};
}

// 4
Outcome threshold_monotonicity() {
    Checker c;
    std::size_t comparisons = 0;
    for (std::uint64_t t = 0; t < 200 && c.o.pass; ++t) {
        CounterRng rng(derive_seed(404, "trial"), t);
        const std::size_t n = 5 + rng.below(400);
        const bool ties = t % 3 == 0;
        const double mean = 2.0 * rng.normal(), sd = 0.1 + 2.0 * rng.uniform();
        std::vector<double> s(n);
        for (auto& x : s) x = ties ? std::round(mean + sd * rng.normal()) : mean + sd * rng.normal();
        const double tau = rng.normal(), delta = 0.01 + 3.0 * rng.uniform();
        std::vector<double> alphas{0.0};
        const std::size_t k = 2 + rng.below(12);
        for (std::size_t i = 0; i < k; ++i) alphas.push_back(alphas.back() + 0.01 + rng.uniform());
        const auto set = ScoreSet::from_values(s);
        const auto curve = thresholded_risk_curve(set, tau, delta, alphas);
        for (std::size_t i = 1; i < alphas.size(); ++i)
            c.check(curve.risks[i] <= curve.risks[i - 1], fmt("trial %.0f: risk increased at alpha %.4f", double(t), alphas[i]));
        for (std::size_t i = 0; i < alphas.size(); ++i)
            for (std::size_t j = i + 1; j < alphas.size(); ++j) {
                const auto band = strict_decrease_band_count(s, tau, delta, alphas[i], alphas[j]);
                c.check(curve.unsafe_counts[i] - curve.unsafe_counts[j] == band,
                        fmt("trial %.0f: band identity broken between alphas %.4f and %.4f", double(t), alphas[i], alphas[j]));
                c.check(std::abs((curve.risks[i] - curve.risks[j]) - strict_decrease_band(set, tau, delta, alphas[i], alphas[j])) < 1e-12,
                        "band fraction mismatch");
                ++comparisons;
            }
    }
    if (c.o.pass) c.o.detail = "200 draws, " + std::to_string(comparisons) + " alpha pairs, counts identical";
    return c.o;
}

// 5
Outcome gaussian_oracle() {
    CounterRng rng(derive_seed(5, "gauss"), 0);
    std::vector<double> s(100000);
    for (auto& x : s) x = rng.normal();
    const auto set = ScoreSet::from_values(s);
    const double r1 = thresholded_risk_curve(set, 0.0, 1.0, std::vector<double>{1.0}).risks[0];
    const double bm = boundary_mass(set, 0.0, 0.0, 1.0);
    const double phi_m1 = testing_support::phi_oracle(-1.0), phi_0 = testing_support::phi_oracle(0.0);
    const double e1 = std::abs(r1 - phi_m1), e2 = std::abs(bm - (phi_0 - phi_m1));
    return {e1 <= 0.01 && e2 <= 0.01, fmt("|R(1)-Phi(-1)| = %.5f, |mass-(Phi(0)-Phi(-1))| = %.5f", e1, e2)};
}

// 6
Outcome smooth_gradient() {
    CounterRng rng(derive_seed(6, "smooth"), 0);
    std::vector<double> s(2000);
    for (auto& x : s) x = 0.3 + rng.normal();
    const auto set = ScoreSet::from_values(s);
    Checker c;
    double worst = 0.0;
    std::size_t points = 0;
    for (double beta : {0.5, 1.0, 2.0, 5.0, 10.0})
        for (double delta : {-1.0, -0.3, 0.0, 0.2, 1.0, 2.5})
            for (double alpha : {0.0, 0.5, 1.0, 2.0}) {
                const auto g = smooth_risk_gradient_check(set, 0.0, delta, beta, alpha, 1e-5);
                // Independent evaluation of the same derivative.
                double oracle = 0.0;
                for (double x : s) {
                    const double z = beta * (0.0 - x - alpha * delta);
                    const double p = 1.0 / (1.0 + std::exp(-z));
                    oracle += p * (1.0 - p) * (-beta * delta);
                }
                oracle /= double(s.size());
                const double err = std::max(std::abs(g.analytic - g.finite_difference), std::abs(g.analytic - oracle));
                worst = std::max(worst, err);
                c.check(err <= 1e-6, fmt("beta %.1f delta %.2f alpha %.1f: gradient error", beta, delta, alpha));
                if (delta > 0) c.check(g.analytic <= 0.0, fmt("positive gradient at beta %.1f delta %.2f alpha %.1f", beta, delta, alpha));
                ++points;
            }
    if (c.o.pass) c.o.detail = fmt("%.0f grid points, max |error| %.2e", double(points), worst);
    return c.o;
}

// 7
Outcome planted_recovery() {
    auto cfg = testing_support::planted_config(707, 16, 3, 400, 2.0, 0.2, 1.3);  // SNR = gap/sigma = 10
    cfg.planted_directions = random_directions(708, 3, 16);
    const auto direct = generate_synthetic_traces(cfg, Paradigm::direct);
    const auto tool = generate_synthetic_traces(cfg, Paradigm::tool_standard);
    Checker c;
    double min_cos = 1.0, worst = 0.0;
    const double tol = cfg.noise_sigma * 3.0 / std::sqrt(double(cfg.n_items));
    for (std::size_t l = 0; l < 3; ++l) {
        const auto d = fit_safety_direction(direct, l);
        min_cos = std::min(min_cos, cosine(d.vector, cfg.planted_directions[l]));
        const auto v = fit_tool_vector(pair_by_item(direct, tool), l);
        for (std::size_t k = 0; k < 16; ++k)
            worst = std::max(worst, std::abs(v.vector[k] - cfg.tool_shift_alpha * cfg.tool_shift_direction[l][k]));
    }
    c.check(min_cos >= 0.99, fmt("min cosine %.5f", min_cos));
    c.check(worst <= tol, fmt("tool vector error %.2e > %.2e", worst, tol));
    if (c.o.pass) c.o.detail = fmt("min cosine %.5f, tool vector max error %.2e (tol %.2e)", min_cos, worst, tol);
    return c.o;
}

// 8
Outcome auc_oracle() {
    Checker c;
    std::size_t with_ties = 0;
    for (std::uint64_t t = 0; t < 200 && c.o.pass; ++t) {
        CounterRng rng(derive_seed(8, "auc"), t);
        const std::size_t n = 2 + rng.below(499);
        std::vector<double> s(n);
        std::vector<SafetyLabel> l(n);
        const bool ties = t % 2 == 0;
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = ties ? double(rng.below(1 + t % 7)) : rng.normal();
            l[i] = rng.below(2) ? SafetyLabel::safe : SafetyLabel::unsafe;
        }
        l[0] = SafetyLabel::safe;
        l[1] = SafetyLabel::unsafe;
        with_ties += ties;
        const double a = roc_auc(s, l), b = testing_support::brute_auc(s, l);
        c.check(a == b, fmt("instance %.0f: %.17g vs %.17g", double(t), a, b));
    }
    if (c.o.pass) c.o.detail = "200 instances bit-equal, " + std::to_string(with_ties) + " with ties";
    return c.o;
}

// 9
Outcome stability() {
    const std::size_t layer = 1;
    std::vector<TraceSet> sets;
    std::vector<SafetyDirection> dirs;
    for (const char* v : {"normal", "benign", "unsafe", "white", "black", "noise"}) {
        auto cfg = testing_support::planted_config(900 + sets.size(), 16, 2, 2000, 2.0, 0.6);
        cfg.variant = v;
        sets.push_back(generate_synthetic_traces(cfg, Paradigm::tool_standard));
        dirs.push_back(fit_safety_direction(sets.back(), layer));
    }
    const auto m = cosine_matrix(dirs);
    Checker c;
    c.check(m.mean_off_diagonal >= 0.97, fmt("mean off-diagonal cosine %.4f", m.mean_off_diagonal));
    const auto tr = transfer_auc(sets[0], std::span<const TraceSet>(sets).subspan(1), layer);
    double worst_gap = 0.0;
    for (std::size_t i = 1; i < sets.size(); ++i) {
        const double in_set = held_out_auc(sets[i], layer);
        worst_gap = std::max(worst_gap, std::abs(tr.per_set[i - 1] - in_set));
    }
    c.check(worst_gap <= 0.05, fmt("transfer gap %.4f", worst_gap));

    auto ortho = testing_support::planted_config(999, 16, 2, 2000, 2.0, 0.6);
    ortho.planted_directions = axis_directions(2, 16, 5);
    ortho.variant = "orthogonal";
    const std::vector<TraceSet> o{generate_synthetic_traces(ortho, Paradigm::tool_standard)};
    const double oa = transfer_auc(sets[0], o, layer).per_set[0];
    c.check(oa >= 0.4 && oa <= 0.6, fmt("orthogonal transfer AUC %.4f", oa));
    if (c.o.pass)
        c.o.detail = fmt("mean cosine %.4f, max transfer gap %.4f, orthogonal AUC %.4f", m.mean_off_diagonal, worst_gap, oa);
    return c.o;
}

// 10
Outcome intervention() {
    Checker c;
    auto cfg = testing_support::planted_config(1001, 8, 3, 400, 2.0, 0.6);
    const auto set = generate_synthetic_traces(cfg, Paradigm::tool_standard);
    const auto dir = fit_safety_direction(set, 2);
    SafetyDirection other;
    other.layer = 2;
    other.vector = cfg.tool_shift_direction[2];
    const auto batch = batch_from_traces(set, 2);

    // Zero injection is bitwise neutral.
    ToyStackConfig sc;
    sc.seed = 10;
    sc.n_layers = 4;
    sc.d_model = 8;
    sc.readout = dir.vector;
    const ToyStack squashed(sc);
    InterventionSpec zero{1, 0.0, 0.0, dir, other};
    bool neutral = true;
    for (const auto& x : batch) {
        const auto a = squashed.forward(x), b = squashed.forward(x, &zero);
        neutral = neutral && std::memcmp(a.final_state.data(), b.final_state.data(), 8 * sizeof(double)) == 0;
    }
    c.check(neutral, "zero injection changed a final state");

    // Linear stack: sweep counts equal the thresholded risk model on the
    // baseline scores with delta = readout . (pushed-forward direction).
    auto lc = sc;
    lc.squashing = false;
    lc.readout.reset();
    const ToyStack linear(lc);
    SweepSpec spec;
    spec.layer = 1;
    spec.dir_direct = dir;
    spec.dir_tool = other;
    spec.axis = SweepAxis::lambda;
    spec.fixed_offset = 0.0;
    spec.grid = {0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0};
    const auto sweep = dose_response_sweep(linear, batch, spec);
    std::vector<double> base;
    for (const auto& x : batch) base.push_back(linear.forward(x).score);
    const double delta_eff = dot(linear.readout(), linear.push_forward(1, dir.vector));
    const auto pred = thresholded_risk_curve(ScoreSet::from_values(base), linear.judge_threshold(), delta_eff, spec.grid);
    for (std::size_t i = 0; i < spec.grid.size(); ++i) {
        c.check(sweep.rows[i].unsafe == pred.unsafe_counts[i], fmt("linear sweep count differs at %.2f", spec.grid[i]));
        const double pred_delta = percent(pred.unsafe_counts[i], batch.size()) - percent(pred.unsafe_counts[0], batch.size());
        c.check(sweep.rows[i].delta == pred_delta, fmt("linear sweep delta differs at %.2f", spec.grid[i]));
    }

    // Planted stack: +lambda along the safety direction never raises ASR.
    auto pc = sc;
    pc.gain = 0.1;
    const ToyStack planted(pc);
    spec.grid = {-8.0, -4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0, 8.0};
    spec.grid = non_degenerate(spec.grid, cfg.class_gap);
    const auto ps = dose_response_sweep(planted, batch, spec);
    for (std::size_t i = 1; i < ps.rows.size(); ++i)
        c.check(ps.rows[i].unsafe <= ps.rows[i - 1].unsafe, fmt("ASR rose between lambda %.2f and %.2f", ps.rows[i - 1].coefficient, ps.rows[i].coefficient));
    c.check(ps.rows.front().unsafe > ps.rows.back().unsafe, "planted sweep is flat");
    if (c.o.pass)
        c.o.detail = fmt("neutral, linear delta_eff %.4f exact, planted ASR %.1f%% -> %.1f%%", delta_eff,
                         ps.rows.front().asr, ps.rows.back().asr);
    return c.o;
}

// 11
Outcome determinism() {
    TempDir tmp;
    const auto cfg = nlohmann::json::parse(detail::read_file(std::filesystem::path(SAFEPROBE_CONFIG_DIR) / "pipeline.json"));
    const auto a = pipeline_run(cfg, tmp / "a");
    const auto b = pipeline_run(cfg, tmp / "b");
    Checker c;
    c.check(a.tables.size() == b.tables.size() && !a.tables.empty(), "table lists differ");
    for (std::size_t i = 0; i < a.tables.size() && c.o.pass; ++i)
        c.check(testing_support::slurp(a.tables[i]) == testing_support::slurp(b.tables[i]),
                a.tables[i].filename().string() + " differs");
    if (c.o.pass) c.o.detail = std::to_string(a.tables.size()) + " tables byte-identical";
    return c.o;
}

struct Criterion {
    int id;
    const char* name;
    double limit_s;  // 0 = no runtime bound
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "stratified sample table", 1, stratified_table},
        {2, "drift statistics", 1, drift_table},
        {3, "ASR display", 1, asr_display},
        {4, "thresholded risk monotonicity and band identity", 10, threshold_monotonicity},
        {5, "Gaussian risk oracle", 5, gaussian_oracle},
        {6, "smooth-link gradient", 5, smooth_gradient},
        {7, "planted direction and tool vector recovery", 10, planted_recovery},
        {8, "rank AUC vs pairwise oracle", 30, auc_oracle},
        {9, "direction stability and transfer", 30, stability},
        {10, "intervention machinery", 60, intervention},
        {11, "pipeline determinism", 0, determinism},
    };
    int failed = 0;
    for (const auto& cr : criteria) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = cr.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (cr.limit_s > 0 && secs > cr.limit_s) {
            o.pass = false;
            o.detail += fmt(" (over the %.0f s limit)", cr.limit_s);
        }
        std::printf("[%s] %2d %s: %s [%.3f s]\n", o.pass ? "PASS" : "FAIL", cr.id, cr.name, o.detail.c_str(), secs);
        failed += !o.pass;
    }
    std::printf("%d/%zu criteria passed\n", int(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
