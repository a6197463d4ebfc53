#pragma once

// Behavioral bookkeeping: attack success rate, stratified category
// sampling, run-to-run drift, judge plumbing and paradigm comparison.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "safeprobe/error.hpp"
#include "safeprobe/paradigm.hpp"
#include "safeprobe/rng.hpp"
#include "safeprobe/table.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

/// One safety query under one paradigm. The harmful text and image live in
/// the external dataset; only a reference is kept.
struct EvalItem {
    std::string item_id;
    int category_id = kMinCategory;
    std::string question_ref;
    Paradigm paradigm = Paradigm::direct;
    std::string variant;
};

struct EvalRecord {
    EvalItem item;
    std::string answer_ref;
    bool unsafe = false;  // judge verdict J
};

inline void validate(const EvalItem& item) {
    detail::require(item.category_id >= kMinCategory && item.category_id <= kMaxCategory, "category_id",
                    "item '" + item.item_id + "' has category " + std::to_string(item.category_id) +
                        " outside 1..13");
}

struct AsrResult {
    std::size_t unsafe = 0;
    std::size_t total = 0;

    double percent() const { return 100.0 * static_cast<double>(unsafe) / static_cast<double>(total); }

    /// One decimal, rounded half up, computed in integers: 73/202 -> "36.1".
    std::string display() const {
        const std::uint64_t tenths = (2000 * std::uint64_t{unsafe} + total) / (2 * std::uint64_t{total});
        return std::to_string(tenths / 10) + "." + std::to_string(tenths % 10);
    }
};

inline AsrResult asr_from_counts(std::size_t unsafe, std::size_t total) {
    detail::require(total > 0, "records", "ASR of an empty record set");
    detail::require(unsafe <= total, "unsafe", "unsafe count exceeds total");
    return {unsafe, total};
}

inline AsrResult compute_asr(std::span<const EvalRecord> records) {
    detail::require(!records.empty(), "records", "ASR of an empty record set");
    std::size_t k = 0;
    for (const auto& r : records) k += r.unsafe ? 1 : 0;
    return {k, records.size()};
}

// ---------------------------------------------------------------------------
// Stratified sampling

struct StratifiedSample {
    std::map<int, std::size_t> counts;
    std::map<int, std::vector<std::string>> draws;  // only when ids were supplied
    std::size_t total = 0;
};

/// round-half-up(rate * size)
inline std::size_t stratum_count(std::size_t size, double rate) {
    return static_cast<std::size_t>(std::floor(rate * static_cast<double>(size) + 0.5));
}

namespace detail {

inline void check_rate(double rate) {
    require(rate > 0.0 && rate <= 1.0, "rate", "sampling rate must lie in (0, 1]");
}

}  // namespace detail

inline StratifiedSample stratified_sample(const std::map<int, std::size_t>& category_sizes, double rate) {
    detail::check_rate(rate);
    StratifiedSample out;
    for (const auto& [cat, size] : category_sizes) {
        detail::require(size > 0, "category_sizes", "category " + std::to_string(cat) + " has size 0");
        out.counts[cat] = stratum_count(size, rate);
        out.total += out.counts[cat];
    }
    return out;
}

/// Uniform draws without replacement per category; the selected ids keep
/// their input order. Deterministic in `seed`.
inline StratifiedSample stratified_sample(const std::map<int, std::vector<std::string>>& category_items,
                                          double rate, std::uint64_t seed) {
    detail::check_rate(rate);
    StratifiedSample out;
    for (const auto& [cat, ids] : category_items) {
        detail::require(!ids.empty(), "category_sizes", "category " + std::to_string(cat) + " is empty");
        const std::size_t k = stratum_count(ids.size(), rate);
        std::vector<std::size_t> idx(ids.size());
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        CounterRng rng(derive_seed(seed, "stratum"), static_cast<std::uint64_t>(cat));
        for (std::size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
        std::sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        auto& chosen = out.draws[cat];
        for (std::size_t i = 0; i < k; ++i) chosen.push_back(ids[idx[i]]);
        out.counts[cat] = k;
        out.total += k;
    }
    return out;
}

inline Table sample_table(const StratifiedSample& s, const std::map<int, std::size_t>& sizes) {
    Table t({"category_id", "full", "sample", "rate_percent"});
    std::size_t full_total = 0;
    for (const auto& [cat, k] : s.counts) {
        const std::size_t full = sizes.at(cat);
        full_total += full;
        t.row({cell(cat), cell(full), cell(k), fixed(100.0 * static_cast<double>(k) / static_cast<double>(full), 1)});
    }
    t.row({"total", cell(full_total), cell(s.total),
           fixed(100.0 * static_cast<double>(s.total) / static_cast<double>(full_total), 1)});
    return t;
}

// ---------------------------------------------------------------------------
// Drift across independent runs

struct DriftStats {
    double mean = 0.0;
    std::optional<double> std;  // sample (n-1) standard deviation; needs >= 2 runs
    double spread = 0.0;        // max - min
};

inline DriftStats run_drift_stats(std::span<const double> run_asrs) {
    detail::require(!run_asrs.empty(), "runs", "no runs given");
    DriftStats s;
    const double n = static_cast<double>(run_asrs.size());
    s.mean = std::accumulate(run_asrs.begin(), run_asrs.end(), 0.0) / n;
    if (run_asrs.size() >= 2) {
        double ss = 0.0;
        for (double x : run_asrs) ss += (x - s.mean) * (x - s.mean);
        s.std = std::sqrt(ss / (n - 1.0));
    }
    const auto [lo, hi] = std::minmax_element(run_asrs.begin(), run_asrs.end());
    s.spread = *hi - *lo;
    return s;
}

// ---------------------------------------------------------------------------
// Judges

/// What a judge may see for one record. The wire request carries only the
/// id and the final answer; the item is kept for bookkeeping.
struct JudgeInput {
    EvalItem item;
    std::string answer_ref;
    std::string answer;                // final-answer payload
    std::optional<double> score;       // readout score, for the built-in judge
};

/// {"answer": ..., "id": ...}. There is deliberately no field for prefix
/// transcripts, paradigm or question.
inline std::string judge_request_line(const JudgeInput& in) {
    return nlohmann::json{{"id", in.item.item_id}, {"answer", in.answer}}.dump();
}

struct JudgeVerdict {
    std::string id;
    bool unsafe = false;
};

inline JudgeVerdict parse_judge_response(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        detail::fail("judge", "protocol violation: response is not JSON: '" + std::string(line) + "'");
    }
    detail::require(j.is_object() && j.contains("id") && j["id"].is_string(), "judge",
                    "protocol violation: response without string id: '" + std::string(line) + "'");
    const auto id = j["id"].get<std::string>();
    detail::require(j.contains("unsafe") && j["unsafe"].is_boolean(), "judge",
                    "protocol violation for id '" + id + "': missing boolean 'unsafe': '" + std::string(line) + "'");
    return {id, j["unsafe"].get<bool>()};
}

class Judge {
public:
    virtual ~Judge() = default;
    /// One verdict per input, in input order.
    virtual std::vector<bool> judge(std::span<const JudgeInput> inputs) = 0;
};

/// unsafe iff readout score < tau.
class ThresholdJudge final : public Judge {
public:
    explicit ThresholdJudge(double tau) : tau_(tau) {}

    std::vector<bool> judge(std::span<const JudgeInput> inputs) override {
        std::vector<bool> out;
        out.reserve(inputs.size());
        for (const auto& in : inputs) {
            detail::require(in.score.has_value(), "score",
                            "built-in judge needs a readout score for item '" + in.item.item_id + "'");
            out.push_back(*in.score < tau_);
        }
        return out;
    }

    double tau() const noexcept { return tau_; }

private:
    double tau_;
};

inline std::vector<EvalRecord> judge_answers(std::span<const JudgeInput> inputs, Judge& judge) {
    for (const auto& in : inputs) validate(in.item);
    const auto verdicts = judge.judge(inputs);
    detail::require(verdicts.size() == inputs.size(), "judge", "judge returned the wrong number of verdicts");
    std::vector<EvalRecord> out;
    out.reserve(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) out.push_back({inputs[i].item, inputs[i].answer_ref, verdicts[i]});
    return out;
}

// ---------------------------------------------------------------------------
// Paradigm comparison

struct ReportRow {
    Paradigm paradigm = Paradigm::direct;
    std::string variant;
    std::optional<int> category;  // empty for the all-categories row
    AsrResult asr;
};

inline std::vector<ReportRow> paradigm_report(std::span<const EvalRecord> records, bool per_category = false) {
    using Key = std::tuple<Paradigm, std::string, int>;  // category 0 = all
    std::map<Key, AsrResult> acc;
    for (const auto& r : records) {
        auto bump = [&](int cat) {
            auto& a = acc[Key{r.item.paradigm, r.item.variant, cat}];
            a.total += 1;
            a.unsafe += r.unsafe ? 1 : 0;
        };
        bump(0);
        if (per_category) bump(r.item.category_id);
    }
    std::vector<ReportRow> rows;
    for (const auto& [key, a] : acc) {
        const auto& [p, variant, cat] = key;
        rows.push_back({p, variant, cat == 0 ? std::nullopt : std::optional<int>(cat), a});
    }
    return rows;
}

inline Table report_table(std::span<const ReportRow> rows) {
    Table t({"paradigm", "variant", "category", "n", "unsafe", "asr", "asr_display"});
    for (const auto& r : rows)
        t.row({std::string(to_string(r.paradigm)), r.variant.empty() ? "-" : r.variant,
               r.category ? cell(*r.category) : std::string("all"), cell(r.asr.total), cell(r.asr.unsafe),
               cell(r.asr.percent()), r.asr.display()});
    return t;
}

// ---------------------------------------------------------------------------
// Record files: one JSON object per line.

inline nlohmann::json to_json(const EvalRecord& r) {
    return nlohmann::json{{"item_id", r.item.item_id},
                          {"category_id", r.item.category_id},
                          {"question_ref", r.item.question_ref},
                          {"paradigm", std::string(to_string(r.item.paradigm))},
                          {"variant", r.item.variant},
                          {"answer_ref", r.answer_ref},
                          {"unsafe", r.unsafe}};
}

/// Reads item fields shared by records and judge inputs.
inline EvalItem eval_item_from_json(const nlohmann::json& j) {
    EvalItem item;
    item.item_id = j.at("item_id").get<std::string>();
    item.category_id = j.value("category_id", kMinCategory);
    item.question_ref = j.value("question_ref", std::string{});
    item.paradigm = parse_paradigm(j.value("paradigm", std::string("direct")));
    item.variant = j.value("variant", std::string{});
    validate(item);
    return item;
}

inline std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
    std::istringstream in(detail::read_file(path));
    std::vector<nlohmann::json> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (line.empty()) continue;
        try {
            out.push_back(nlohmann::json::parse(line));
        } catch (const nlohmann::json::parse_error& e) {
            detail::fail("records", path.string() + " line " + std::to_string(no) + ": " + e.what());
        }
    }
    return out;
}

inline std::vector<EvalRecord> read_eval_records(const std::filesystem::path& path) {
    std::vector<EvalRecord> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            EvalRecord r;
            r.item = eval_item_from_json(j);
            r.answer_ref = j.value("answer_ref", std::string{});
            r.unsafe = j.at("unsafe").get<bool>();
            out.push_back(std::move(r));
        } catch (const nlohmann::json::exception& e) {
            detail::fail("records", path.string() + ": " + e.what());
        }
    }
    return out;
}

inline void write_eval_records(const std::filesystem::path& path, std::span<const EvalRecord> records) {
    std::string out;
    for (const auto& r : records) out += to_json(r).dump() + "\n";
    detail::write_file(path, out);
}

/// Judge inputs: item fields plus "answer_ref", optional "answer" text
/// (defaults to answer_ref) and optional "score".
inline std::vector<JudgeInput> read_judge_inputs(const std::filesystem::path& path) {
    std::vector<JudgeInput> out;
    for (const auto& j : read_jsonl(path)) {
        try {
            JudgeInput in;
            in.item = eval_item_from_json(j);
            in.answer_ref = j.value("answer_ref", std::string{});
            in.answer = j.value("answer", in.answer_ref);
            if (j.contains("score")) in.score = j.at("score").get<double>();
            out.push_back(std::move(in));
        } catch (const nlohmann::json::exception& e) {
            detail::fail("answers", path.string() + ": " + e.what());
        }
    }
    return out;
}

}  // namespace safeprobe
