#pragma once

// safeprobe command-line front end. dispatch() is separate from main() so the
// test suite can drive it in-process.

#include <filesystem>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "safeprobe/pipeline.hpp"
#include "safeprobe/safeprobe.hpp"

namespace safeprobe::cli {

namespace fs = std::filesystem;

inline nlohmann::json load_json(const fs::path& p) {
    try {
        return nlohmann::json::parse(detail::read_file(p));
    } catch (const nlohmann::json::parse_error& e) {
        detail::fail("config", p.string() + ": " + e.what());
    }
}

/// Echo of every option given on the command line.
inline nlohmann::json option_echo(const CLI::App& sub) {
    nlohmann::json j = nlohmann::json::object();
    j["command"] = sub.get_name();
    for (const auto* opt : sub.get_options()) {
        if (opt->count() == 0 || opt->get_name() == "--help") continue;
        j[opt->get_name()] = opt->results();
    }
    return j;
}

inline std::map<int, std::size_t> parse_sizes(const std::vector<std::size_t>& sizes) {
    std::map<int, std::size_t> m;
    for (std::size_t i = 0; i < sizes.size(); ++i) m[static_cast<int>(i) + 1] = sizes[i];
    return m;
}

inline std::unique_ptr<Judge> make_judge(const std::string& spec, double tau) {
    const auto choice = parse_judge_choice(spec);
    if (choice.builtin) return std::make_unique<ThresholdJudge>(tau);
    return std::make_unique<ExecJudge>(choice.argv);
}

inline int dispatch(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Representation-level safety readouts, risk models and intervention sweeps", "safeprobe"};
    app.require_subcommand(1);

    // Shared flag values.
    std::string config, out_dir, cutoff_side = "at_most", judge_spec = "builtin";
    std::uint64_t seed = 0;
    int layer = -1;
    double cutoff = 0.8, tau = 0.0;

    const auto add_out = [&](CLI::App* s, bool required = true) {
        auto* o = s->add_option("--out", out_dir, "Output directory");
        if (required) o->required();
    };
    const auto add_cutoff = [&](CLI::App* s) {
        s->add_option("--cutoff", cutoff, "Deep-layer cutoff fraction of n_layers")->check(CLI::Range(0.0, 1.0));
        s->add_option("--cutoff-side", cutoff_side, "Cutoff predicate")->check(CLI::IsMember({"at_most", "at_least"}));
    };

    // synth
    auto* synth = app.add_subcommand("synth", "Generate planted synthetic trace sets");
    std::vector<std::string> paradigms{"direct", "tool_standard"};
    synth->add_option("--config", config, "SynthConfig JSON")->required();
    synth->add_option("--seed", seed, "Override the config seed");
    synth->add_option("--paradigm", paradigms, "Paradigms to generate");
    add_out(synth);

    // fit-dir
    auto* fit_dir = app.add_subcommand("fit-dir", "Fit a difference-of-means safety direction");
    std::string traces;
    fit_dir->add_option("--traces", traces, "Trace set directory")->required();
    fit_dir->add_option("--layer", layer, "Layer (selected by held-out AUC when omitted)");
    add_cutoff(fit_dir);
    add_out(fit_dir);

    // fit-tool
    auto* fit_tool = app.add_subcommand("fit-tool", "Mean paired tool - direct residual difference");
    std::string direct_dir, tool_dir;
    bool intersect = false;
    fit_tool->add_option("--direct", direct_dir, "Direct-mode trace set")->required();
    fit_tool->add_option("--tool", tool_dir, "Tool-mode trace set")->required();
    fit_tool->add_option("--layer", layer, "Layer")->required();
    fit_tool->add_flag("--intersect", intersect, "Keep only the item overlap");
    add_out(fit_tool);

    // sweep-layers
    auto* sweep_layers = app.add_subcommand("sweep-layers", "Held-out AUC and direction norm per layer");
    sweep_layers->add_option("--traces", traces, "Trace set directory")->required();
    add_cutoff(sweep_layers);
    add_out(sweep_layers);

    // cosine
    auto* cos = app.add_subcommand("cosine", "Cosine matrix between directions");
    std::vector<std::string> dir_files;
    cos->add_option("--dirs", dir_files, "Direction files")->required();
    add_out(cos);

    // pca
    auto* pca = app.add_subcommand("pca", "PC1 variance ratio and alignment with a direction");
    std::string direction_file;
    pca->add_option("--traces", traces, "Trace set directory")->required();
    pca->add_option("--direction", direction_file, "Direction file")->required();
    pca->add_option("--layer", layer, "Layer (defaults to the direction's layer)");
    add_out(pca);

    // transfer
    auto* transfer = app.add_subcommand("transfer", "Fit on one set, score others without refitting");
    std::string fit_set;
    std::vector<std::string> eval_sets;
    transfer->add_option("--fit", fit_set, "Source trace set")->required();
    transfer->add_option("--eval", eval_sets, "Evaluation trace sets")->required();
    transfer->add_option("--layer", layer, "Layer")->required();
    add_out(transfer);

    // risk
    auto* risk = app.add_subcommand("risk", "Thresholded and smooth risk curves");
    std::string tool_vector_file;
    double delta = 0.0, beta = 2.0, fd_step = 1e-4;
    std::vector<double> alphas{0.0, 0.25, 0.5, 1.0, 1.5, 2.0};
    risk->add_option("--traces", traces, "Trace set to score")->required();
    risk->add_option("--direction", direction_file, "Readout direction")->required();
    auto* tv_opt = risk->add_option("--tool-vector", tool_vector_file, "Tool vector; delta = u . v");
    risk->add_option("--delta", delta, "Score gain per unit alpha")->excludes(tv_opt);
    risk->add_option("--tau", tau, "Unsafe threshold");
    risk->add_option("--beta", beta, "Smooth-link sharpness")->check(CLI::PositiveNumber);
    risk->add_option("--alphas", alphas, "Alpha grid (increasing, >= 0)")->delimiter(',');
    risk->add_option("--fd-step", fd_step, "Finite-difference step")->check(CLI::PositiveNumber);
    add_out(risk);

    // intervene-sweep
    auto* iv = app.add_subcommand("intervene-sweep", "Dose-response sweep in the toy residual stack");
    std::string dir_direct_file, dir_tool_file, axis = "mu";
    std::size_t stack_layers = 4;
    double fixed_coef = 0.5, gain = 0.5;
    bool linear = false;
    std::vector<double> grid{-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0};
    iv->add_option("--traces", traces, "Batch trace set")->required();
    iv->add_option("--dir-direct", dir_direct_file, "Direct-mode direction")->required();
    iv->add_option("--dir-tool", dir_tool_file, "Tool-mode direction")->required();
    iv->add_option("--layer", layer, "Intervention layer in the stack")->required();
    iv->add_option("--axis", axis, "Swept coefficient")->check(CLI::IsMember({"lambda", "mu"}));
    iv->add_option("--fixed", fixed_coef, "Coefficient on the other direction");
    iv->add_option("--grid", grid, "Swept values")->delimiter(',');
    iv->add_option("--stack-layers", stack_layers, "Toy stack depth");
    iv->add_option("--gain", gain, "Block spectral gain");
    iv->add_option("--seed", seed, "Stack seed");
    iv->add_option("--tau", tau, "Judge threshold on the readout");
    iv->add_flag("--linear", linear, "Disable the tanh squashing");
    add_out(iv);

    // asr
    auto* asr = app.add_subcommand("asr", "Attack success rate");
    std::string records_file, answers_file;
    std::size_t unsafe_n = 0, total_n = 0;
    auto* rec_opt = asr->add_option("--records", records_file, "Judged records (JSONL)");
    auto* ans_opt = asr->add_option("--answers", answers_file, "Unjudged answers (JSONL)")->excludes(rec_opt);
    auto* un_opt = asr->add_option("--unsafe", unsafe_n, "Unsafe count")->excludes(rec_opt)->excludes(ans_opt);
    asr->add_option("--total", total_n, "Total count")->needs(un_opt);
    asr->add_option("--judge", judge_spec, "builtin or exec:PATH");
    asr->add_option("--tau", tau, "Built-in judge threshold");
    add_out(asr, false);

    // sample
    auto* sample = app.add_subcommand("sample", "Stratified per-category sampling");
    std::vector<std::size_t> sizes;
    double rate = 0.12;
    sample->add_option("--sizes", sizes, "Category sizes, category ids 1..n in order")->delimiter(',')->required();
    sample->add_option("--rate", rate, "Sampling rate in (0, 1]");
    sample->add_option("--seed", seed, "Draw seed");
    add_out(sample, false);

    // drift
    auto* drift = app.add_subcommand("drift", "Mean, sample std and spread of run ASRs");
    std::vector<double> runs;
    drift->add_option("runs", runs, "Run ASRs in percent")->required();
    add_out(drift, false);

    // report
    auto* report = app.add_subcommand("report", "Per-paradigm ASR comparison");
    bool per_category = false;
    report->add_option("--records", records_file, "Judged records (JSONL)")->required();
    report->add_flag("--per-category", per_category, "Add per-category rows");
    add_out(report, false);

    // pipeline
    auto* pipeline = app.add_subcommand("pipeline", "Run the full desk-scale suite from one config");
    pipeline->add_option("--config", config, "Pipeline JSON")->required();
    pipeline->add_option("--seed", seed, "Override the config seed");
    add_out(pipeline);

    std::reverse(args.begin(), args.end());
    try {
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e, out, err);
        if (rc != 0) err << app.help();
        return rc;
    }

    const auto stamp = [&](const CLI::App* sub) {
        if (!out_dir.empty()) write_run_stamp(out_dir, option_echo(*sub));
    };

    try {
        if (*synth) {
            auto j = load_json(config);
            if (synth->count("--seed")) j["seed"] = seed;
            const auto cfg = synth_config_from_json(j);
            write_run_stamp(out_dir, j);
            for (const auto& p : paradigms) {
                const auto set = generate_synthetic_traces(cfg, parse_paradigm(p));
                write_trace_set(fs::path(out_dir) / p, set);
                out << p << ": " << set.size() << " items -> " << (fs::path(out_dir) / p).string() << "\n";
            }
        } else if (*fit_dir) {
            const auto set = read_trace_set(traces);
            std::size_t l;
            if (layer >= 0) {
                l = static_cast<std::size_t>(layer);
            } else {
                const auto c = select_readout_layer(set, cutoff, parse_cutoff_side(cutoff_side));
                l = c.layer;
                out << "selected layer " << c.layer << " (held-out AUC " << fixed(c.auc, 4) << ")\n";
            }
            const auto d = fit_safety_direction(set, l);
            stamp(fit_dir);
            write_direction(fs::path(out_dir) / "direction.txt", d);
            out << "layer " << d.layer << " norm_prefit " << cell(d.norm_prefit) << " n_safe " << d.n_safe
                << " n_unsafe " << d.n_unsafe << "\n";
        } else if (*fit_tool) {
            const auto a = read_trace_set(direct_dir);
            const auto b = read_trace_set(tool_dir);
            const auto pairing = pair_by_item(a, b, intersect ? PairMode::intersection : PairMode::strict);
            const auto v = fit_tool_vector(pairing, static_cast<std::size_t>(layer));
            stamp(fit_tool);
            detail::write_file(fs::path(out_dir) / "tool_vector.txt", serialize_tool_vector(v));
            out << "pairs " << v.n_pairs << " norm " << cell(norm(v.vector)) << " leftovers "
                << pairing.only_in_first.size() << "/" << pairing.only_in_second.size() << "\n";
        } else if (*sweep_layers) {
            const auto set = read_trace_set(traces);
            const auto rows = layer_sweep(set);
            const auto c = select_readout_layer(set, cutoff, parse_cutoff_side(cutoff_side));
            stamp(sweep_layers);
            layer_sweep_table(rows).meta("selected_layer", cell(c.layer)).write(fs::path(out_dir) / "layer_sweep.csv");
            out << "selected layer " << c.layer << " (held-out AUC " << fixed(c.auc, 4) << ")\n";
        } else if (*cos) {
            std::vector<SafetyDirection> dirs;
            for (const auto& f : dir_files) dirs.push_back(read_direction(f));
            const auto m = cosine_matrix(dirs);
            stamp(cos);
            cosine_table(m).write(fs::path(out_dir) / "cosine.csv");
            out << "mean off-diagonal " << fixed(m.mean_off_diagonal, 4) << " min " << fixed(m.min_off_diagonal, 4) << "\n";
        } else if (*pca) {
            const auto set = read_trace_set(traces);
            const auto d = read_direction(direction_file);
            const std::size_t l = layer >= 0 ? static_cast<std::size_t>(layer) : d.layer;
            const auto r = pca_alignment(set, d, l);
            stamp(pca);
            Table t({"variant", "layer", "pc1_variance_ratio", "alignment"});
            t.row({set.manifest.variant, cell(l), cell(r.pc1_variance_ratio), cell(r.alignment)});
            t.write(fs::path(out_dir) / "pca.csv");
            out << "pc1 ratio " << fixed(r.pc1_variance_ratio, 4) << " alignment " << fixed(r.alignment, 4) << "\n";
        } else if (*transfer) {
            const auto src = read_trace_set(fit_set);
            std::vector<TraceSet> evals;
            for (const auto& e : eval_sets) evals.push_back(read_trace_set(e));
            const auto r = transfer_auc(src, evals, static_cast<std::size_t>(layer));
            stamp(transfer);
            Table t({"eval_variant", "auc"});
            t.meta("fit_variant", src.manifest.variant);
            for (std::size_t i = 0; i < evals.size(); ++i) t.row({evals[i].manifest.variant, cell(r.per_set[i])});
            t.row({"pooled", cell(r.pooled)});
            t.write(fs::path(out_dir) / "transfer.csv");
            out << "pooled AUC " << fixed(r.pooled, 4) << "\n";
        } else if (*risk) {
            const auto set = read_trace_set(traces);
            const auto d = read_direction(direction_file);
            if (!tool_vector_file.empty()) delta = dot(d.vector, parse_tool_vector(detail::read_file(tool_vector_file)).vector);
            const auto scores = project_scores(set, d);
            stamp(risk);
            risk_table(thresholded_risk_curve(scores, tau, delta, alphas)).write(fs::path(out_dir) / "risk_thresholded.csv");
            risk_table(smooth_risk_curve(scores, tau, delta, beta, alphas)).write(fs::path(out_dir) / "risk_smooth.csv");
            Table g({"alpha", "analytic", "finite_difference"});
            for (double a : alphas) {
                const auto gc = smooth_risk_gradient_check(scores, tau, delta, beta, a, fd_step);
                g.row({cell(a), cell(gc.analytic), cell(gc.finite_difference)});
            }
            g.write(fs::path(out_dir) / "risk_gradient.csv");
            out << "delta " << cell(delta) << " R(0) " << fixed(thresholded_risk_curve(scores, tau, delta, std::vector<double>{0.0}).risks[0], 4) << "\n";
        } else if (*iv) {
            const auto set = read_trace_set(traces);
            SweepSpec s;
            s.dir_direct = read_direction(dir_direct_file);
            s.dir_tool = read_direction(dir_tool_file);
            s.layer = static_cast<std::size_t>(layer);
            s.axis = parse_sweep_axis(axis);
            s.fixed_offset = fixed_coef;
            s.grid = grid;
            s.name = "sweep_" + axis;
            s.mode = std::string(to_string(set.manifest.paradigm));
            ToyStackConfig sc;
            sc.seed = seed;
            sc.n_layers = stack_layers;
            sc.d_model = set.d_model();
            sc.gain = gain;
            sc.squashing = !linear;
            sc.readout = s.dir_tool.vector;
            sc.judge_threshold = tau;
            const ToyStack stack(sc);
            const auto r = dose_response_sweep(stack, batch_from_traces(set, s.dir_direct.layer), s);
            stamp(iv);
            sweep_table(std::vector<SweepResult>{r}).write(fs::path(out_dir) / "sweep.csv");
            out << "baseline ASR " << fixed(r.baseline_asr, 1) << " shape " << r.shape << "\n";
        } else if (*asr) {
            AsrResult a;
            if (!records_file.empty()) {
                a = compute_asr(read_eval_records(records_file));
            } else if (!answers_file.empty()) {
                const auto inputs = read_judge_inputs(answers_file);
                auto judge = make_judge(judge_spec, tau);
                const auto recs = judge_answers(inputs, *judge);
                a = compute_asr(recs);
                if (!out_dir.empty()) {
                    stamp(asr);
                    write_eval_records(fs::path(out_dir) / "records.jsonl", recs);
                }
            } else {
                detail::require(asr->count("--unsafe") > 0, "asr", "give --records, --answers or --unsafe/--total");
                a = asr_from_counts(unsafe_n, total_n);
            }
            stamp(asr);
            out << "ASR " << a.display() << "% (" << a.unsafe << "/" << a.total << ")\n";
        } else if (*sample) {
            const auto m = parse_sizes(sizes);
            const auto s = stratified_sample(m, rate);
            stamp(sample);
            const auto t = sample_table(s, m);
            if (!out_dir.empty()) t.write(fs::path(out_dir) / "sample.csv");
            out << t.str();
        } else if (*drift) {
            const auto s = run_drift_stats(runs);
            stamp(drift);
            out << "mean " << fixed(s.mean, 2);
            if (s.std) out << " std " << fixed(*s.std, 2);
            out << " spread " << fixed(s.spread, 2) << "\n";
        } else if (*report) {
            const auto rows = paradigm_report(read_eval_records(records_file), per_category);
            stamp(report);
            const auto t = report_table(rows);
            if (!out_dir.empty()) t.write(fs::path(out_dir) / "report.csv");
            out << t.str();
        } else if (*pipeline) {
            auto j = load_json(config);
            if (pipeline->count("--seed")) j["seed"] = seed;
            const auto r = pipeline_run(j, out_dir);
            out << "readout layer " << r.readout_layer << " (AUC " << fixed(r.readout_auc, 4) << "), "
                << r.tables.size() << " tables in " << out_dir << "\n";
        }
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}

}  // namespace safeprobe::cli
