#pragma once

// Safety scores S(z) = u^T h(z) and their ROC AUC.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "safeprobe/error.hpp"
#include "safeprobe/rng.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

/// Scores aligned one-to-one with item ids and labels. Larger is safer.
struct ScoreSet {
    std::vector<std::string> item_ids;
    std::vector<double> scores;
    std::vector<SafetyLabel> labels;
    std::optional<double> threshold_tau;

    std::size_t size() const noexcept { return scores.size(); }

    void push_back(std::string id, double score, SafetyLabel label) {
        item_ids.push_back(std::move(id));
        scores.push_back(score);
        labels.push_back(label);
    }

    /// Convenience for building labelled samples by hand.
    static ScoreSet from_classes(std::span<const double> safe, std::span<const double> unsafe) {
        ScoreSet s;
        for (std::size_t i = 0; i < safe.size(); ++i)
            s.push_back("s" + std::to_string(i), safe[i], SafetyLabel::safe);
        for (std::size_t i = 0; i < unsafe.size(); ++i)
            s.push_back("u" + std::to_string(i), unsafe[i], SafetyLabel::unsafe);
        return s;
    }

    /// Unlabelled sample, e.g. for risk curves.
    static ScoreSet from_values(std::span<const double> values) {
        ScoreSet s;
        for (std::size_t i = 0; i < values.size(); ++i)
            s.push_back("z" + std::to_string(i), values[i], SafetyLabel::unlabeled);
        return s;
    }

    /// Concatenation, used for pooled AUC.
    void append(const ScoreSet& other) {
        item_ids.insert(item_ids.end(), other.item_ids.begin(), other.item_ids.end());
        scores.insert(scores.end(), other.scores.begin(), other.scores.end());
        labels.insert(labels.end(), other.labels.begin(), other.labels.end());
    }
};

inline void validate(const ScoreSet& s) {
    detail::require(s.item_ids.size() == s.scores.size() && s.labels.size() == s.scores.size(),
                    "scores", "item ids, scores and labels are not aligned");
    for (double x : s.scores) detail::require(std::isfinite(x), "scores", "non-finite score");
}

/// Rank-sum AUC: probability that a random safe score exceeds a random
/// unsafe score, ties counted half. Unlabelled entries are ignored.
///
/// The statistic is accumulated as the integer 2*wins + ties, so the result
/// is the same double that direct pairwise counting would produce.
inline double roc_auc(std::span<const double> scores, std::span<const SafetyLabel> labels) {
    detail::require(scores.size() == labels.size(), "scores", "scores and labels differ in length");
    std::vector<std::size_t> order;
    order.reserve(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i)
        if (labels[i] != SafetyLabel::unlabeled) order.push_back(i);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    std::uint64_t n_safe = 0, n_unsafe = 0;
    // Twice the rank sum of safe items; a tie block spanning 1-based ranks
    // [lo+1, hi] gives each member rank (lo+1+hi)/2.
    std::uint64_t twice_rank_sum = 0;
    for (std::size_t lo = 0; lo < order.size();) {
        std::size_t hi = lo + 1;
        while (hi < order.size() && scores[order[hi]] == scores[order[lo]]) ++hi;
        for (std::size_t k = lo; k < hi; ++k) {
            if (labels[order[k]] == SafetyLabel::safe) {
                ++n_safe;
                twice_rank_sum += lo + 1 + hi;
            } else {
                ++n_unsafe;
            }
        }
        lo = hi;
    }
    detail::require(n_safe > 0 && n_unsafe > 0, "labels",
                    "AUC needs both safe and unsafe items (single-class input)");
    const std::uint64_t twice_u = twice_rank_sum - n_safe * (n_safe + 1);
    return static_cast<double>(twice_u) / static_cast<double>(2 * n_safe * n_unsafe);
}

inline double roc_auc(const ScoreSet& s) {
    validate(s);
    return roc_auc(s.scores, s.labels);
}

/// Held-out split keyed on item_id: even hash fits, odd evaluates.
struct HeldOutSplit {
    std::vector<std::size_t> fit;
    std::vector<std::size_t> eval;
};

inline bool is_held_out(std::string_view item_id) noexcept { return (mix64(fnv1a64(item_id)) & 1u) != 0; }

inline HeldOutSplit held_out_split(const TraceSet& traces) {
    HeldOutSplit s;
    for (std::size_t i = 0; i < traces.size(); ++i)
        (is_held_out(traces.records[i].item_id) ? s.eval : s.fit).push_back(i);
    return s;
}

}  // namespace safeprobe
