#pragma once

// Desk-scale experiment suite driven by one JSON config:
// synth -> fit -> diagnostics -> risk -> intervene -> report.
// Every table lands under one output directory together with a config echo
// and a format stamp. All randomness is derived from the config seed.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "safeprobe/diagnostics.hpp"
#include "safeprobe/direction.hpp"
#include "safeprobe/error.hpp"
#include "safeprobe/eval.hpp"
#include "safeprobe/intervene.hpp"
#include "safeprobe/risk.hpp"
#include "safeprobe/synth.hpp"
#include "safeprobe/table.hpp"
#include "safeprobe/trace_store.hpp"

namespace safeprobe {

inline constexpr std::string_view kOutputStamp = "safeprobe-output 1\n";

/// Writes config.json (canonical echo) and FORMAT_VERSION into `dir`.
inline void write_run_stamp(const std::filesystem::path& dir, const nlohmann::json& config) {
    std::filesystem::create_directories(dir);
    detail::write_file(dir / "config.json", config.dump(2) + "\n");
    detail::write_file(dir / "FORMAT_VERSION", kOutputStamp);
}

struct VariantSpec {
    std::string name;
    Paradigm paradigm = Paradigm::tool_standard;
};

inline Paradigm default_variant_paradigm(std::string_view name) {
    if (name == "benign") return Paradigm::tool_benign;
    if (name == "unsafe") return Paradigm::tool_unsafe;
    if (name == "white") return Paradigm::tool_mask_white;
    if (name == "noise") return Paradigm::tool_mask_noise;
    return Paradigm::tool_standard;
}

struct PipelineConfig {
    std::uint64_t seed = 0;
    nlohmann::json synth;  // SynthConfig keys; seed is derived per variant
    std::vector<VariantSpec> variants;
    double cutoff = 0.8;
    CutoffSide cutoff_side = CutoffSide::at_most;
    double tau = 0.0;
    double beta = 2.0;
    std::vector<double> alphas;
    double fd_step = 1e-4;
    std::vector<std::pair<double, double>> bands;
    std::size_t stack_layers = 4;
    double stack_gain = 0.5;
    bool squashing = true;
    std::size_t intervene_layer = 1;
    std::vector<double> grid;
    double fixed_offset = 0.5;
};

inline PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
    PipelineConfig c;
    try {
        c.seed = j.value("seed", std::uint64_t{0});
        c.synth = j.at("synth");
        for (const auto& v : j.value("variants", nlohmann::json::array({"normal"}))) {
            if (v.is_string())
                c.variants.push_back({v.get<std::string>(), default_variant_paradigm(v.get<std::string>())});
            else
                c.variants.push_back({v.at("name").get<std::string>(), parse_paradigm(v.at("paradigm").get<std::string>())});
        }
        c.cutoff = j.value("cutoff", 0.8);
        c.cutoff_side = parse_cutoff_side(j.value("cutoff_side", std::string("at_most")));
        const auto risk = j.value("risk", nlohmann::json::object());
        c.tau = risk.value("tau", 0.0);
        c.beta = risk.value("beta", 2.0);
        c.alphas = risk.value("alphas", std::vector<double>{0.0, 0.25, 0.5, 1.0, 1.5, 2.0});
        c.fd_step = risk.value("h", 1e-4);
        for (const auto& b : risk.value("bands", nlohmann::json::array({nlohmann::json::array({0.0, 0.5}),
                                                                     nlohmann::json::array({0.5, 1.0})})))
            c.bands.emplace_back(b.at(0).get<double>(), b.at(1).get<double>());
        const auto iv = j.value("intervene", nlohmann::json::object());
        c.stack_layers = iv.value("stack_layers", std::size_t{4});
        c.stack_gain = iv.value("gain", 0.5);
        c.squashing = iv.value("squashing", true);
        c.intervene_layer = iv.value("layer", std::size_t{1});
        c.grid = iv.value("grid", std::vector<double>{-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0});
        c.fixed_offset = iv.value("fixed_offset", 0.5);
    } catch (const nlohmann::json::exception& e) {
        detail::fail("config", e.what());
    }
    detail::require(!c.variants.empty(), "variants", "need at least one tool variant");
    return c;
}

struct PipelineResult {
    std::filesystem::path out_dir;
    std::vector<std::filesystem::path> tables;
    std::size_t readout_layer = 0;
    double readout_auc = 0.0;
};

namespace detail {

/// Runs one stage; any failure is re-raised naming the stage.
inline void run_stage(const std::string& name, const std::function<void()>& body) {
    try {
        body();
    } catch (const Error& e) {
        throw Error("stage " + name, e.what());
    } catch (const std::exception& e) {
        throw Error("stage " + name, e.what());
    }
}

}  // namespace detail

inline PipelineResult pipeline_run(const nlohmann::json& config_json, const std::filesystem::path& out) {
    PipelineResult res;
    res.out_dir = out;
    PipelineConfig cfg;
    detail::run_stage("config", [&] { cfg = pipeline_config_from_json(config_json); });
    write_run_stamp(out, config_json);

    const auto emit = [&](const std::string& name, const Table& t) {
        const auto path = out / name;
        t.write(path);
        res.tables.push_back(path);
    };

    // synth: one direct set plus one tool set per variant. The first variant
    // shares the direct set's seed, so its items pair with identical noise.
    TraceSet direct;
    std::vector<TraceSet> tools;
    SynthConfig base;
    detail::run_stage("synth", [&] {
        nlohmann::json sj = cfg.synth;
        sj["seed"] = derive_seed(cfg.seed, "synth");
        base = synth_config_from_json(sj);
        direct = generate_synthetic_traces(base, Paradigm::direct);
        write_trace_set(out / "traces" / "direct", direct);
        for (std::size_t v = 0; v < cfg.variants.size(); ++v) {
            SynthConfig vc = base;
            vc.variant = cfg.variants[v].name;
            if (v > 0) vc.seed = derive_seed(base.seed, vc.variant);
            tools.push_back(generate_synthetic_traces(vc, cfg.variants[v].paradigm));
            write_trace_set(out / "traces" / ("tool_" + vc.variant), tools.back());
        }
    });

    const TraceSet& tool = tools.front();
    SafetyDirection dir_direct, dir_tool;
    ToolVector tool_vec;
    detail::run_stage("fit", [&] {
        const auto chosen = select_readout_layer(tool, cfg.cutoff, cfg.cutoff_side);
        const auto chosen_direct = select_readout_layer(direct, cfg.cutoff, cfg.cutoff_side);
        res.readout_layer = chosen.layer;
        res.readout_auc = chosen.auc;
        Table sel({"mode", "layer", "auc"});
        sel.meta("cutoff", cell(cfg.cutoff)).meta("cutoff_side", std::string(to_string(cfg.cutoff_side)));
        sel.row({"direct", cell(chosen_direct.layer), cell(chosen_direct.auc)});
        sel.row({"tool", cell(chosen.layer), cell(chosen.auc)});
        emit("layer_selection.csv", sel);

        dir_direct = fit_safety_direction(direct, chosen.layer);
        dir_tool = fit_safety_direction(tool, chosen.layer);
        tool_vec = fit_tool_vector(pair_by_item(direct, tool), chosen.layer);
        std::filesystem::create_directories(out / "directions");
        write_direction(out / "directions" / "direct.txt", dir_direct);
        write_direction(out / "directions" / "tool.txt", dir_tool);
        detail::write_file(out / "directions" / "tool_vector.txt", serialize_tool_vector(tool_vec));
    });

    const std::size_t layer = res.readout_layer;
    detail::run_stage("diagnostics", [&] {
        emit("layer_sweep_direct.csv", layer_sweep_table(layer_sweep(direct)));
        emit("layer_sweep_tool.csv", layer_sweep_table(layer_sweep(tool)));

        if (tools.size() >= 2) {
            std::vector<SafetyDirection> dirs;
            for (const auto& t : tools) dirs.push_back(fit_safety_direction(t, layer));
            emit("cosine.csv", cosine_table(cosine_matrix(dirs)));

            const std::span<const TraceSet> others(tools.data() + 1, tools.size() - 1);
            const auto tr = transfer_auc(tool, others, layer);
            Table t({"eval_variant", "auc"});
            t.meta("fit_variant", tool.manifest.variant).meta("in_set_auc", cell(held_out_auc(tool, layer)));
            for (std::size_t i = 0; i < others.size(); ++i) t.row({others[i].manifest.variant, cell(tr.per_set[i])});
            t.row({"pooled", cell(tr.pooled)});
            emit("transfer.csv", t);
        }

        const auto pca = pca_alignment(tool, dir_tool, layer);
        Table p({"variant", "layer", "pc1_variance_ratio", "alignment"});
        p.row({tool.manifest.variant, cell(layer), cell(pca.pc1_variance_ratio), cell(pca.alignment)});
        emit("pca.csv", p);
    });

    detail::run_stage("risk", [&] {
        auto scores = project_scores(direct, dir_direct);
        scores.threshold_tau = cfg.tau;
        const double delta = dot(dir_direct.vector, tool_vec.vector);
        emit("risk_thresholded.csv", risk_table(thresholded_risk_curve(scores, cfg.tau, delta, cfg.alphas)));
        emit("risk_smooth.csv", risk_table(smooth_risk_curve(scores, cfg.tau, delta, cfg.beta, cfg.alphas)));

        Table g({"alpha", "analytic", "finite_difference"});
        g.meta("beta", cell(cfg.beta)).meta("delta", cell(delta)).meta("h", cell(cfg.fd_step));
        for (double a : cfg.alphas) {
            const auto gc = smooth_risk_gradient_check(scores, cfg.tau, delta, cfg.beta, a, cfg.fd_step);
            g.row({cell(a), cell(gc.analytic), cell(gc.finite_difference)});
        }
        emit("risk_gradient.csv", g);

        Table b({"band_lo", "band_hi", "mass"});
        b.meta("tau", cell(cfg.tau));
        for (const auto& [lo, hi] : cfg.bands) b.row({cell(lo), cell(hi), cell(boundary_mass(scores, cfg.tau, lo, hi))});
        emit("boundary.csv", b);
    });

    detail::run_stage("intervene", [&] {
        ToyStackConfig sc;
        sc.seed = derive_seed(cfg.seed, "stack");
        sc.n_layers = cfg.stack_layers;
        sc.d_model = direct.d_model();
        sc.gain = cfg.stack_gain;
        sc.squashing = cfg.squashing;
        sc.readout = dir_tool.vector;
        sc.judge_threshold = cfg.tau;
        const ToyStack stack(sc);
        const auto direct_batch = batch_from_traces(direct, layer);
        const auto tool_batch = batch_from_traces(tool, layer);

        SweepSpec s;
        s.layer = cfg.intervene_layer;
        s.dir_direct = dir_direct;
        s.dir_tool = dir_tool;
        s.grid = cfg.grid;
        std::vector<SweepResult> sweeps;
        const auto run = [&](std::string name, std::string mode, SweepAxis axis, double fixed, const std::vector<Vec>& batch) {
            s.name = std::move(name);
            s.mode = std::move(mode);
            s.axis = axis;
            s.fixed_offset = fixed;
            sweeps.push_back(dose_response_sweep(stack, batch, s));
        };
        run("direct_plus_direct", "direct", SweepAxis::mu, +cfg.fixed_offset, direct_batch);
        run("tool_minus_direct", "tool", SweepAxis::mu, -cfg.fixed_offset, tool_batch);
        run("tool_plus_direct", "tool", SweepAxis::mu, +cfg.fixed_offset, tool_batch);
        run("direct_safety_lambda", "direct", SweepAxis::lambda, 0.0, direct_batch);
        sweeps.push_back(dose_response_sweep(stack, direct_batch, s.swapped()));
        emit("sweeps.csv", sweep_table(sweeps));
    });

    detail::run_stage("report", [&] {
        ThresholdJudge judge(cfg.tau);
        std::vector<JudgeInput> inputs;
        const auto add = [&](const TraceSet& set) {
            const auto scores = project_scores(set, dir_direct);
            for (std::size_t i = 0; i < set.size(); ++i) {
                JudgeInput in;
                in.item = {set.records[i].item_id, set.records[i].category_id, "synthetic:" + set.records[i].item_id,
                           set.manifest.paradigm, set.manifest.variant};
                in.answer_ref = "synthetic";
                in.score = scores.scores[i];
                inputs.push_back(std::move(in));
            }
        };
        add(direct);
        for (const auto& t : tools) add(t);
        std::vector<EvalRecord> records;
        // Judge per paradigm batch: item ids repeat across sets.
        std::size_t start = 0;
        for (std::size_t k = 0; k < 1 + tools.size(); ++k) {
            const std::size_t n = k == 0 ? direct.size() : tools[k - 1].size();
            const auto judged = judge_answers(std::span<const JudgeInput>(inputs).subspan(start, n), judge);
            records.insert(records.end(), judged.begin(), judged.end());
            start += n;
        }
        write_eval_records(out / "records.jsonl", records);
        emit("report.csv", report_table(paradigm_report(records)));
    });

    return res;
}

}  // namespace safeprobe
