#pragma once

// Thresholded jailbreak risk under a residual shift of strength alpha along a
// direction whose safety-score gain per unit strength is delta = u^T v_tool.
//
//   R(alpha)        = Pr[S + alpha * delta < tau]
//   R_smooth(alpha) = E[sigmoid(beta * (tau - S - alpha * delta))]
//
// Every empirical quantity here is computed from the single predicate
// `s + alpha * delta < tau`, so curve differences and band masses agree
// exactly as counts.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safeprobe/error.hpp"
#include "safeprobe/scores.hpp"
#include "safeprobe/table.hpp"

namespace safeprobe {

enum class RiskForm { thresholded, smooth };

constexpr std::string_view to_string(RiskForm f) noexcept {
    return f == RiskForm::thresholded ? "thresholded" : "smooth";
}

struct RiskCurve {
    std::vector<double> alphas;
    std::vector<double> risks;
    /// Unsafe counts per alpha (thresholded form only).
    std::vector<std::size_t> unsafe_counts;
    std::size_t n = 0;
    double delta = 0.0;
    double tau = 0.0;
    RiskForm form = RiskForm::thresholded;
    std::optional<double> beta;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// sigma'(x) = sigma(x) (1 - sigma(x)).
inline double sigmoid_derivative(double x) {
    const double s = sigmoid(x);
    return s * (1.0 - s);
}

constexpr bool unsafe_at(double score, double tau, double delta, double alpha) noexcept {
    return score + alpha * delta < tau;
}

inline std::size_t unsafe_count(std::span<const double> scores, double tau, double delta, double alpha) {
    return static_cast<std::size_t>(std::count_if(
        scores.begin(), scores.end(), [&](double s) { return unsafe_at(s, tau, delta, alpha); }));
}

namespace detail {

inline void check_alphas(std::span<const double> alphas) {
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        require(alphas[i] >= 0.0 && std::isfinite(alphas[i]), "alphas", "alphas must be finite and >= 0");
        if (i) require(alphas[i] > alphas[i - 1], "alphas", "alphas must be strictly increasing");
    }
}

inline std::span<const double> nonempty_scores(const ScoreSet& s) {
    validate(s);
    require(s.size() > 0, "scores", "empty score set");
    return s.scores;
}

}  // namespace detail

inline RiskCurve thresholded_risk_curve(const ScoreSet& scores, double tau, double delta,
                                        std::span<const double> alphas) {
    const auto s = detail::nonempty_scores(scores);
    detail::check_alphas(alphas);
    RiskCurve c;
    c.n = s.size();
    c.tau = tau;
    c.delta = delta;
    c.form = RiskForm::thresholded;
    for (double a : alphas) {
        const std::size_t k = unsafe_count(s, tau, delta, a);
        c.alphas.push_back(a);
        c.unsafe_counts.push_back(k);
        c.risks.push_back(static_cast<double>(k) / static_cast<double>(c.n));
    }
    return c;
}

/// Items unsafe at alpha1 but not at alpha2, i.e. with
/// tau - alpha2*delta <= S < tau - alpha1*delta.
inline std::size_t strict_decrease_band_count(std::span<const double> scores, double tau, double delta,
                                              double alpha1, double alpha2) {
    using detail::require;
    require(alpha1 >= 0.0 && alpha1 < alpha2, "alphas", "need 0 <= alpha1 < alpha2");
    require(delta > 0.0, "delta", "delta must be positive");
    return static_cast<std::size_t>(std::count_if(scores.begin(), scores.end(), [&](double s) {
        return unsafe_at(s, tau, delta, alpha1) && !unsafe_at(s, tau, delta, alpha2);
    }));
}

inline double strict_decrease_band(const ScoreSet& scores, double tau, double delta, double alpha1,
                                   double alpha2) {
    const auto s = detail::nonempty_scores(scores);
    return static_cast<double>(strict_decrease_band_count(s, tau, delta, alpha1, alpha2)) /
           static_cast<double>(s.size());
}

inline double smooth_risk(const ScoreSet& scores, double tau, double delta, double beta, double alpha) {
    const auto s = detail::nonempty_scores(scores);
    detail::require(beta > 0.0, "beta", "beta must be positive");
    double sum = 0.0;
    for (double x : s) sum += sigmoid(beta * (tau - x - alpha * delta));
    return sum / static_cast<double>(s.size());
}

inline RiskCurve smooth_risk_curve(const ScoreSet& scores, double tau, double delta, double beta,
                                   std::span<const double> alphas) {
    detail::check_alphas(alphas);
    RiskCurve c;
    c.n = scores.size();
    c.tau = tau;
    c.delta = delta;
    c.form = RiskForm::smooth;
    c.beta = beta;
    for (double a : alphas) {
        c.alphas.push_back(a);
        c.risks.push_back(smooth_risk(scores, tau, delta, beta, a));
    }
    return c;
}

struct GradientCheck {
    double analytic = 0.0;
    double finite_difference = 0.0;
};

/// dR_smooth/dalpha = E[sigma'(beta (tau - S - alpha delta)) * (-beta delta)],
/// alongside a central difference with step h.
inline GradientCheck smooth_risk_gradient_check(const ScoreSet& scores, double tau, double delta, double beta,
                                                double alpha, double h) {
    const auto s = detail::nonempty_scores(scores);
    detail::require(beta > 0.0, "beta", "beta must be positive");
    detail::require(h > 0.0, "h", "finite-difference step must be positive");
    double sum = 0.0;
    for (double x : s) sum += sigmoid_derivative(beta * (tau - x - alpha * delta));
    GradientCheck g;
    g.analytic = -beta * delta * sum / static_cast<double>(s.size());
    g.finite_difference =
        (smooth_risk(scores, tau, delta, beta, alpha + h) - smooth_risk(scores, tau, delta, beta, alpha - h)) /
        (2.0 * h);
    return g;
}

inline Table risk_table(const RiskCurve& c) {
    Table t({"alpha", "risk"});
    t.meta("tau", cell(c.tau)).meta("delta", cell(c.delta)).meta("form", std::string(to_string(c.form)));
    t.meta("beta", c.beta ? cell(*c.beta) : std::string("none"));
    for (std::size_t i = 0; i < c.alphas.size(); ++i) t.row({cell(c.alphas[i]), cell(c.risks[i])});
    return t;
}

}  // namespace safeprobe
