#include <gtest/gtest.h>

#include "support.hpp"

using namespace safeprobe;
using testing_support::planted_config;

TEST(Diagnostics, LayerSweepRowsPerLayer) {
    auto c = planted_config(31, 6, 5, 200, 2.0, 0.5);
    c.planted_layers = {1, 3};
    const auto rows = layer_sweep(generate_synthetic_traces(c, Paradigm::direct));
    ASSERT_EQ(rows.size(), 5u);
    for (std::size_t l = 0; l < 5; ++l) EXPECT_EQ(rows[l].layer, l);
    EXPECT_GT(rows[1].auc, 0.95);
    EXPECT_GT(rows[3].auc, 0.95);
    EXPECT_LT(rows[2].auc, 0.75);
    EXPECT_GT(rows[1].norm_prefit, rows[2].norm_prefit);
}

TEST(Diagnostics, CosineMatrixProperties) {
    std::vector<SafetyDirection> dirs;
    for (std::uint64_t s = 0; s < 4; ++s) {
        auto c = planted_config(40 + s, 8, 2, 150, 2.0, 0.4);
        c.variant = "v" + std::to_string(s);
        dirs.push_back(fit_safety_direction(generate_synthetic_traces(c, Paradigm::direct), 1));
    }
    const auto m = cosine_matrix(dirs);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(m.matrix[i][i], 1.0, 1e-12);
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(m.matrix[i][j], m.matrix[j][i]);
    }
    EXPECT_GT(m.min_off_diagonal, 0.95);
    EXPECT_GE(m.mean_off_diagonal, m.min_off_diagonal);

    EXPECT_THROW(cosine_matrix(std::span<const SafetyDirection>(dirs.data(), 1)), Error);
    dirs[1].layer = 0;
    EXPECT_THROW(cosine_matrix(dirs), Error);
}

TEST(Diagnostics, PcaRatioAndAlignment) {
    // Strong class separation dominates the variance, so PC1 follows u.
    const auto set = generate_synthetic_traces(planted_config(51, 8, 1, 300, 6.0, 0.3), Paradigm::direct);
    const auto d = fit_safety_direction(set, 0);
    const auto p = pca_alignment(set, d, 0);
    EXPECT_GT(p.alignment, 0.99);
    EXPECT_GT(p.pc1_variance_ratio, 0.9);
    EXPECT_LE(p.pc1_variance_ratio, 1.0);
    EXPECT_TRUE(is_unit(p.pc1));

    // Isotropic noise only: PC1 carries little of the variance.
    const auto iso = generate_synthetic_traces(planted_config(52, 8, 1, 400, 0.0, 1.0), Paradigm::direct);
    EXPECT_LT(pca_alignment(iso, d, 0).pc1_variance_ratio, 0.3);
}

TEST(Diagnostics, PcaMatchesBothEigenPaths) {
    // n < d uses the Gram path, n > d the covariance path; the ratio of a
    // subsample must agree with an explicit power iteration.
    const auto set = generate_synthetic_traces(planted_config(53, 40, 1, 12, 3.0, 0.5), Paradigm::direct);
    const auto d = fit_safety_direction(set, 0);
    const auto p = pca_alignment(set, d, 0);
    const std::size_t n = set.size(), dim = set.d_model();
    std::vector<Vec> x(n, Vec(dim));
    Vec mean(dim, 0.0);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t k = 0; k < dim; ++k) {
            x[i][k] = set.state(i, 0)[k];
            mean[k] += x[i][k] / n;
        }
    double total = 0;
    for (auto& r : x)
        for (std::size_t k = 0; k < dim; ++k) {
            r[k] -= mean[k];
            total += r[k] * r[k];
        }
    Vec v(dim, 1.0);
    double lambda = 0;
    for (int it = 0; it < 2000; ++it) {
        Vec w(dim, 0.0);
        for (const auto& r : x) {
            const double t = dot(r, v);
            for (std::size_t k = 0; k < dim; ++k) w[k] += t * r[k];
        }
        lambda = norm(w) / norm(v);
        v = normalized(w);
    }
    EXPECT_NEAR(p.pc1_variance_ratio, lambda / total, 1e-6);
    EXPECT_NEAR(std::abs(dot(p.pc1, v)), 1.0, 1e-6);
}

TEST(Diagnostics, TransferOnSharedAndOrthogonalDirections) {
    const auto src = generate_synthetic_traces(planted_config(61, 8, 1, 300, 2.0, 0.5), Paradigm::direct);
    auto same = planted_config(62, 8, 1, 300, 2.0, 0.5);
    auto ortho = same;
    ortho.planted_directions = axis_directions(1, 8, 3);
    std::vector<TraceSet> evals{generate_synthetic_traces(same, Paradigm::direct),
                                generate_synthetic_traces(ortho, Paradigm::direct)};
    const auto r = transfer_auc(src, evals, 0);
    ASSERT_EQ(r.per_set.size(), 2u);
    EXPECT_GT(r.per_set[0], 0.95);
    EXPECT_NEAR(r.per_set[1], 0.5, 0.12);
}

TEST(Diagnostics, BoundaryCountMatchesBruteForce) {
    CounterRng rng(70, 0);
    std::vector<double> s(500);
    for (auto& x : s) x = rng.normal();
    const double tau = 0.2, lo = 0.1, hi = 0.9;
    std::size_t brute = 0;
    for (double x : s) brute += (x >= tau - hi && x < tau - lo) ? 1 : 0;
    EXPECT_EQ(boundary_count(s, tau, lo, hi), brute);
    EXPECT_EQ(boundary_count(s, tau, 0.5, 0.5), 0u);
    EXPECT_THROW(boundary_count(s, tau, 0.9, 0.1), Error);
}
