#pragma once

// Readout quality and stability diagnostics: layer sweep, cosine matrix
// across variants, PCA alignment, transfer AUC and near-threshold mass.

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "safeprobe/direction.hpp"
#include "safeprobe/error.hpp"
#include "safeprobe/linalg.hpp"
#include "safeprobe/scores.hpp"
#include "safeprobe/table.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

struct LayerSweepRow {
    std::size_t layer = 0;
    double auc = 0.0;
    double norm_prefit = 0.0;
};

/// Held-out AUC and raw direction norm at every layer.
inline std::vector<LayerSweepRow> layer_sweep(const TraceSet& traces) {
    std::vector<LayerSweepRow> rows;
    rows.reserve(traces.n_layers());
    for (std::size_t l = 0; l < traces.n_layers(); ++l) {
        SafetyDirection dir;
        const double auc = held_out_auc(traces, l, &dir);
        rows.push_back({l, auc, dir.norm_prefit});
    }
    return rows;
}

inline Table layer_sweep_table(std::span<const LayerSweepRow> rows) {
    Table t({"layer", "auc", "norm_prefit"});
    for (const auto& r : rows) t.row({cell(r.layer), cell(r.auc), cell(r.norm_prefit)});
    return t;
}

struct CosineMatrix {
    std::vector<std::string> variant_names;
    std::vector<std::vector<double>> matrix;
    double mean_off_diagonal = 0.0;
    double min_off_diagonal = 0.0;
};

inline CosineMatrix cosine_matrix(std::span<const SafetyDirection> dirs) {
    using detail::require;
    require(dirs.size() >= 2, "directions", "need at least two directions");
    for (const auto& d : dirs) {
        require(d.dim() == dirs.front().dim(), "d_model", "directions differ in dimension");
        require(d.layer == dirs.front().layer, "layer", "directions come from different layers");
    }
    const std::size_t n = dirs.size();
    CosineMatrix out;
    out.matrix.assign(n, std::vector<double>(n, 0.0));
    double sum = 0.0;
    double lo = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
        out.variant_names.push_back(dirs[i].variant);
        out.matrix[i][i] = cosine(dirs[i].vector, dirs[i].vector);
        for (std::size_t j = i + 1; j < n; ++j) {
            const double c = std::clamp(cosine(dirs[i].vector, dirs[j].vector), -1.0, 1.0);
            out.matrix[i][j] = out.matrix[j][i] = c;
            sum += 2.0 * c;
            lo = std::min(lo, c);
        }
    }
    out.mean_off_diagonal = sum / static_cast<double>(n * (n - 1));
    out.min_off_diagonal = lo;
    return out;
}

inline Table cosine_table(const CosineMatrix& m) {
    std::vector<std::string> header{"variant"};
    header.insert(header.end(), m.variant_names.begin(), m.variant_names.end());
    Table t(std::move(header));
    t.meta("mean_off_diagonal", cell(m.mean_off_diagonal)).meta("min_off_diagonal", cell(m.min_off_diagonal));
    for (std::size_t i = 0; i < m.matrix.size(); ++i) {
        std::vector<std::string> r{m.variant_names[i]};
        for (double c : m.matrix[i]) r.push_back(cell(c));
        t.row(std::move(r));
    }
    return t;
}

struct PcaAlignment {
    double pc1_variance_ratio = 0.0;
    double alignment = 0.0;  // |cos(pc1, direction)|
    Vec pc1;
};

/// Top principal component of the centered layer states. Uses the d x d
/// covariance or the n x n Gram matrix, whichever is smaller; both share
/// the same nonzero spectrum.
inline PcaAlignment pca_alignment(const TraceSet& traces, const SafetyDirection& direction, std::size_t layer) {
    using detail::require;
    require(traces.size() >= 2, "records", "PCA needs at least two records");
    require(layer < traces.n_layers(), "layer", "layer out of range");
    require(direction.dim() == traces.d_model(), "d_model", "direction dimension does not match traces");
    const auto n = static_cast<Eigen::Index>(traces.size());
    const auto d = static_cast<Eigen::Index>(traces.d_model());

    Eigen::MatrixXd x(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto h = traces.state(static_cast<std::size_t>(i), layer);
        for (Eigen::Index k = 0; k < d; ++k) x(i, k) = h[static_cast<std::size_t>(k)];
    }
    x.rowwise() -= x.colwise().mean();

    Eigen::VectorXd pc1;
    double top = 0.0, total = 0.0;
    if (d <= n) {
        const Eigen::MatrixXd cov = x.transpose() * x;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
        require(es.info() == Eigen::Success, "pca", "eigendecomposition failed");
        top = es.eigenvalues()(d - 1);
        total = cov.trace();
        pc1 = es.eigenvectors().col(d - 1);
    } else {
        const Eigen::MatrixXd gram = x * x.transpose();
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(gram);
        require(es.info() == Eigen::Success, "pca", "eigendecomposition failed");
        top = es.eigenvalues()(n - 1);
        total = gram.trace();
        pc1 = x.transpose() * es.eigenvectors().col(n - 1);
    }
    require(total > 0.0 && pc1.norm() > 0.0, "states", "all states are identical; PCA is degenerate");
    pc1.normalize();

    PcaAlignment out;
    out.pc1_variance_ratio = std::clamp(top / total, 0.0, 1.0);
    out.pc1.assign(pc1.data(), pc1.data() + pc1.size());
    out.alignment = std::min(1.0, std::abs(cosine(out.pc1, direction.vector)));
    return out;
}

struct TransferResult {
    SafetyDirection direction;   // fitted on the source set's fit half
    std::vector<double> per_set;  // AUC on each eval set's held-out half
    double pooled = 0.0;          // AUC over the concatenated held-out scores
};

/// Fits once on `fit_on` and scores every eval set without refitting.
inline TransferResult transfer_auc(const TraceSet& fit_on, std::span<const TraceSet> eval_on, std::size_t layer) {
    using detail::require;
    require(!eval_on.empty(), "eval", "no evaluation sets");
    TransferResult out;
    out.direction = fit_safety_direction(fit_on, layer, held_out_split(fit_on).fit);
    ScoreSet pooled;
    for (const auto& set : eval_on) {
        require(set.d_model() == fit_on.d_model(), "d_model", "evaluation set dimension differs");
        require(layer < set.n_layers(), "layer", "layer out of range in evaluation set");
        const auto scores = project_scores(set, out.direction, held_out_split(set).eval);
        out.per_set.push_back(roc_auc(scores));
        pooled.append(scores);
    }
    out.pooled = roc_auc(pooled);
    return out;
}

/// Number of scores in the half-open band [tau - band_hi, tau - band_lo).
inline std::size_t boundary_count(std::span<const double> scores, double tau, double band_lo, double band_hi) {
    detail::require(band_lo <= band_hi, "band", "inverted band (band_lo > band_hi)");
    const double lo = tau - band_hi;
    const double hi = tau - band_lo;
    return static_cast<std::size_t>(
        std::count_if(scores.begin(), scores.end(), [&](double s) { return lo <= s && s < hi; }));
}

inline double boundary_mass(const ScoreSet& scores, double tau, double band_lo, double band_hi) {
    validate(scores);
    detail::require(scores.size() > 0, "scores", "empty score set");
    return static_cast<double>(boundary_count(scores.scores, tau, band_lo, band_hi)) /
           static_cast<double>(scores.size());
}

}  // namespace safeprobe
