// Seeded property checks over the module invariants.

#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace safeprobe;
using testing_support::planted_config;

namespace {

TraceSet scaled(TraceSet s, float c) {
    for (auto& r : s.records)
        for (auto& v : r.states) v *= c;
    return s;
}

}  // namespace

TEST(Property, TraceRoundTripOnRandomShapes) {
    testing_support::TempDir tmp;
    for (std::uint64_t t = 0; t < 10; ++t) {
        CounterRng rng(1, t);
        auto c = planted_config(t, 1 + rng.below(9), 1 + rng.below(5), 2 + rng.below(30), 1.0, 2.0, 0.5);
        const auto set = generate_synthetic_traces(c, t % 2 ? Paradigm::direct : Paradigm::tool_mask_white);
        const auto dir = tmp / std::to_string(t);
        write_trace_set(dir, set);
        EXPECT_EQ(std::filesystem::file_size(dir / "activations.bin"), c.n_items * c.n_layers * c.d_model * 4);
        EXPECT_EQ(read_trace_set(dir), set);
    }
}

TEST(Property, PairingIsSymmetric) {
    auto c = planted_config(2, 4, 2, 30);
    const auto a = generate_synthetic_traces(c, Paradigm::direct);
    auto b = generate_synthetic_traces(c, Paradigm::tool_standard);
    b.records.erase(b.records.begin() + 3);
    b.manifest.n_items = b.records.size();
    const auto ab = pair_by_item(a, b, PairMode::intersection), ba = pair_by_item(b, a, PairMode::intersection);
    ASSERT_EQ(ab.pairs.size(), ba.pairs.size());
    for (std::size_t i = 0; i < ab.pairs.size(); ++i) {
        EXPECT_EQ(ab.pairs[i].first, ba.pairs[i].second);
        EXPECT_EQ(ab.pairs[i].second, ba.pairs[i].first);
    }
    EXPECT_EQ(ab.only_in_first, ba.only_in_second);
}

TEST(Property, LabelBalance) {
    for (std::uint64_t t = 0; t < 30; ++t) {
        CounterRng rng(3, t);
        auto c = planted_config(t, 2, 1, 1 + rng.below(300));
        c.unsafe_fraction = rng.uniform();
        const auto labels = synth_labels(c);
        EXPECT_EQ(std::size_t(std::count(labels.begin(), labels.end(), SafetyLabel::unsafe)),
                  std::size_t(std::llround(std::floor(c.unsafe_fraction * double(c.n_items) + 0.5))));
    }
}

TEST(Property, DirectionScaleInvariance) {
    const auto set = generate_synthetic_traces(planted_config(4, 8, 2, 200, 2.0, 0.8), Paradigm::direct);
    const auto d = fit_safety_direction(set, 1);
    for (float c : {2.0f, 3.0f, 0.25f}) {
        const auto s = fit_safety_direction(scaled(set, c), 1);
        EXPECT_NEAR(s.norm_prefit, c * d.norm_prefit, 1e-5 * d.norm_prefit);
        for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(s.vector[k], d.vector[k], 1e-6);
    }
}

TEST(Property, LabelSwapNegatesDirection) {
    auto set = generate_synthetic_traces(planted_config(5, 8, 2, 150, 2.0, 0.8), Paradigm::direct);
    const auto d = fit_safety_direction(set, 0);
    for (auto& r : set.records) r.label = r.label == SafetyLabel::safe ? SafetyLabel::unsafe : SafetyLabel::safe;
    const auto s = fit_safety_direction(set, 0);
    for (std::size_t k = 0; k < 8; ++k) EXPECT_EQ(s.vector[k], -d.vector[k]);
    EXPECT_EQ(s.norm_prefit, d.norm_prefit);
}

TEST(Property, ToolVectorLinearity) {
    const auto c = planted_config(6, 6, 1, 90, 2.0, 0.7, 1.0);
    auto a = generate_synthetic_traces(c, Paradigm::direct);
    auto b = generate_synthetic_traces(c, Paradigm::tool_standard);
    // Perturb the tool set so pairs differ.
    for (std::size_t i = 0; i < b.size(); ++i) b.records[i].states[0] += float(i % 7) * 0.1f;
    const auto split = [](const TraceSet& s, std::size_t lo, std::size_t hi) {
        TraceSet out = s;
        out.records.assign(s.records.begin() + lo, s.records.begin() + hi);
        out.manifest.n_items = out.records.size();
        return out;
    };
    const auto a1 = split(a, 0, 30), b1 = split(b, 0, 30), a2 = split(a, 30, 90), b2 = split(b, 30, 90);
    const auto v = fit_tool_vector(pair_by_item(a, b), 0);
    const auto v1 = fit_tool_vector(pair_by_item(a1, b1), 0), v2 = fit_tool_vector(pair_by_item(a2, b2), 0);
    for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(v.vector[k], (30 * v1.vector[k] + 60 * v2.vector[k]) / 90, 1e-12);
}

TEST(Property, RecoveryAtLowSnr) {
    auto c = planted_config(7, 16, 1, 1000, 2.0, 1.0);  // SNR 2
    c.planted_directions = random_directions(77, 1, 16);
    const auto d = fit_safety_direction(generate_synthetic_traces(c, Paradigm::direct), 0);
    EXPECT_GE(cosine(d.vector, c.planted_directions[0]), 0.95);
}

TEST(Property, CosineMatrixIgnoresPositiveRescaling) {
    std::vector<SafetyDirection> dirs(3);
    CounterRng rng(8, 0);
    for (auto& d : dirs) {
        d.vector.resize(5);
        for (auto& x : d.vector) x = rng.normal();
        d.vector = normalized(d.vector);
    }
    const auto m = cosine_matrix(dirs);
    for (auto& x : dirs[1].vector) x *= 7.5;
    const auto r = cosine_matrix(dirs);
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(m.matrix[i][j], r.matrix[i][j], 1e-12);
}

TEST(Property, PcaRatioTranslationInvariant) {
    auto set = generate_synthetic_traces(planted_config(9, 6, 1, 120, 3.0, 0.7), Paradigm::direct);
    const auto d = fit_safety_direction(set, 0);
    const auto p = pca_alignment(set, d, 0);
    for (auto& r : set.records)
        for (std::size_t k = 0; k < r.states.size(); ++k) r.states[k] += 5.0f + float(k);
    const auto q = pca_alignment(set, d, 0);
    EXPECT_NEAR(p.pc1_variance_ratio, q.pc1_variance_ratio, 1e-4);
    EXPECT_NEAR(p.alignment, q.alignment, 1e-4);
}

TEST(Property, BoundaryMassAdditivity) {
    CounterRng rng(10, 0);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> s(200);
        for (auto& x : s) x = std::round(4 * rng.normal()) / 4;  // ties on band edges
        std::vector<double> e{rng.uniform() * 2, rng.uniform() * 2, rng.uniform() * 2};
        std::sort(e.begin(), e.end());
        const double tau = rng.normal();
        const auto set = ScoreSet::from_values(s);
        EXPECT_EQ(boundary_count(s, tau, e[0], e[1]) + boundary_count(s, tau, e[1], e[2]), boundary_count(s, tau, e[0], e[2]));
        EXPECT_NEAR(boundary_mass(set, tau, e[0], e[1]) + boundary_mass(set, tau, e[1], e[2]), boundary_mass(set, tau, e[0], e[2]), 1e-12);
    }
}

TEST(Property, RiskMatchesGaussianOracleOnSyntheticScores) {
    auto c = planted_config(11, 8, 1, 4000, 2.0, 0.8, 0.0);
    const auto set = generate_synthetic_traces(c, Paradigm::direct);
    const auto o = planted_ground_truth(c);
    SafetyDirection u;
    u.vector = o.directions[0];
    ScoreSet unsafe_scores;
    const auto all = project_scores(set, u);
    for (std::size_t i = 0; i < all.size(); ++i)
        if (all.labels[i] == SafetyLabel::unsafe) unsafe_scores.push_back(all.item_ids[i], all.scores[i], all.labels[i]);
    const double tau = 0.0, delta = 0.6;
    const std::vector<double> alphas{0.0, 0.5, 1.0, 2.0};
    const auto curve = thresholded_risk_curve(unsafe_scores, tau, delta, alphas);
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        const double p = testing_support::phi_oracle((tau - alphas[i] * delta - o.unsafe_score_mean) / o.score_std);
        const double se = std::sqrt(p * (1 - p) / double(unsafe_scores.size()));
        EXPECT_NEAR(curve.risks[i], p, 3 * se) << "alpha " << alphas[i];
    }
}

TEST(Property, SmoothConvergesToThresholded) {
    CounterRng rng(12, 0);
    std::vector<double> s(500);
    for (auto& x : s) x = rng.normal();
    const auto set = ScoreSet::from_values(s);
    const double hard = thresholded_risk_curve(set, 0.1, 0.5, std::vector<double>{1.0}).risks[0];
    double prev = 1.0;
    for (double beta : {1.0, 10.0, 100.0, 1000.0, 1e5}) {
        const double gap = std::abs(smooth_risk(set, 0.1, 0.5, beta, 1.0) - hard);
        EXPECT_LE(gap, prev + 1e-12);
        prev = gap;
    }
    EXPECT_LT(prev, 1e-3);
}

TEST(Property, AsrPermutationInvariantAndBounded) {
    std::vector<EvalRecord> r(57);
    for (std::size_t i = 0; i < r.size(); ++i) {
        r[i].item.item_id = "i" + std::to_string(i);
        r[i].unsafe = i % 3 == 0;
    }
    const auto a = compute_asr(r);
    std::mt19937 g(1);
    for (int t = 0; t < 5; ++t) {
        std::shuffle(r.begin(), r.end(), g);
        const auto b = compute_asr(r);
        EXPECT_EQ(b.unsafe, a.unsafe);
        EXPECT_GE(b.percent(), 0.0);
        EXPECT_LE(b.percent(), 100.0);
        EXPECT_DOUBLE_EQ(b.percent(), 100.0 * 19 / 57);
    }
}

TEST(Property, JudgeRequestNeverCarriesPrefix) {
    for (const auto& [tag, name] : kParadigmNames) {
        JudgeInput in{{"q", 1, "PREFIX-TRANSCRIPT " + std::string(name), tag, "white"}, "ref", "the answer", 0.0};
        const auto line = judge_request_line(in);
        EXPECT_EQ(line.find("PREFIX-TRANSCRIPT"), std::string::npos);
        EXPECT_EQ(line.find(name), std::string::npos);
    }
}

TEST(Property, SweepsRunSwapped) {
    ToyStackConfig sc;
    sc.seed = 3;
    sc.n_layers = 3;
    sc.d_model = 4;
    const ToyStack st(sc);
    SweepSpec s;
    s.layer = 1;
    s.dir_direct.vector = unit_axis(4, 0);
    s.dir_tool.vector = unit_axis(4, 1);
    s.grid = {-1, 0, 1};
    std::vector<Vec> batch(30, Vec(4));
    CounterRng rng(4, 0);
    for (auto& x : batch)
        for (auto& v : x) v = rng.normal();
    const auto a = dose_response_sweep(st, batch, s), b = dose_response_sweep(st, batch, s.swapped());
    EXPECT_EQ(a.baseline_unsafe, b.baseline_unsafe);
    const auto t = sweep_table(std::vector<SweepResult>{a, b}).str();
    EXPECT_NE(t.find("baseline_asr"), std::string::npos);
    EXPECT_NE(t.find("sweep_swapped"), std::string::npos);
}
