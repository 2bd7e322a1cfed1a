// nexus command-line front end: run episodes, run QC stages standalone,
// compute rater agreement, and summarize trace ledgers.

#include "nexus/agreement.hpp"
#include "nexus/checkpoint.hpp"
#include "nexus/clock.hpp"
#include "nexus/error.hpp"
#include "nexus/policy.hpp"
#include "nexus/registry.hpp"
#include "nexus/runtime.hpp"
#include "nexus/trace.hpp"
#include "nexus/util.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <array>
#include <iostream>
#include <memory>
#include <set>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nexus;

namespace {

constexpr int kOk = 0;
constexpr int kInternal = 1;
constexpr int kConfig = 2;
constexpr int kBudget = 3;

std::unique_ptr<Clock> make_clock(const std::string& spec) {
    if (spec == "system" || spec.empty())
        return std::make_unique<SystemClock>();
    if (spec.rfind("manual:", 0) == 0) {
        auto rest = spec.substr(7);
        auto colon = rest.find(':');
        std::int64_t start = std::stoll(rest.substr(0, colon));
        std::int64_t tick = colon == std::string::npos ? 0 : std::stoll(rest.substr(colon + 1));
        return std::make_unique<ManualClock>(start, tick);
    }
    fail(Errc::config_error, "--clock must be 'system' or 'manual:<start_ms>:<tick_ms>'");
}

void stage_dataset(const fs::path& dataset_dir, const WorkspaceLayout& workspace,
                   const std::string& root_rel) {
    fs::path target = workspace.root / root_rel;
    fs::create_directories(target);
    fs::copy(dataset_dir, target,
             fs::copy_options::recursive | fs::copy_options::overwrite_existing);
}

std::vector<std::string> dataset_subjects(const fs::path& dataset_dir) {
    fs::path list = dataset_dir / "subjects.txt";
    std::vector<std::string> subjects;
    if (fs::exists(list)) {
        std::istringstream in(read_text_file(list));
        std::string line;
        while (std::getline(in, line)) {
            if (!line.empty() && line.back() == '\r')
                line.pop_back();
            if (!line.empty())
                subjects.push_back(line);
        }
        return subjects;
    }
    for (const auto& entry : fs::directory_iterator(dataset_dir)) {
        if (entry.is_directory())
            subjects.push_back(entry.path().filename().string());
    }
    std::sort(subjects.begin(), subjects.end());
    return subjects;
}

int cmd_run(const std::string& objective_path, const std::string& dataset_path,
            const std::string& cards_path, const std::string& policy_mode,
            const std::string& config_path, const std::string& out_path,
            const std::string& script_path, const std::string& clock_spec,
            const std::string& record_path, long seed_override) {
    if (!fs::exists(objective_path))
        fail(Errc::config_error, "--objective path does not exist: " + objective_path);
    if (!fs::exists(dataset_path))
        fail(Errc::config_error, "--dataset path does not exist: " + dataset_path);
    if (!fs::is_directory(cards_path))
        fail(Errc::config_error, "--cards directory does not exist: " + cards_path);
    if (!fs::exists(config_path))
        fail(Errc::config_error, "--config path does not exist: " + config_path);

    Objective objective = load_objective(objective_path);
    EpisodeConfig config = load_episode_config(config_path);
    if (seed_override >= 0)
        config.seed = static_cast<std::uint64_t>(seed_override);
    Registry registry = load_card_dir(cards_path);

    fs::path out = out_path;
    fs::create_directories(out);
    fs::path ws_root = config.workspace_root.empty() ? fs::path("workspace")
                                                     : config.workspace_root;
    if (ws_root.is_relative())
        ws_root = out / ws_root;
    std::error_code ec;
    fs::remove_all(ws_root, ec); // fresh workspace per run, outputs stay reproducible
    WorkspaceLayout workspace = WorkspaceLayout::create(ws_root);

    if (objective.dataset.root_path.empty())
        objective.dataset.root_path = "dataset";
    stage_dataset(dataset_path, workspace, objective.dataset.root_path);
    if (objective.dataset.subject_ids.empty())
        objective.dataset.subject_ids = dataset_subjects(dataset_path);

    std::unique_ptr<Clock> clock = make_clock(clock_spec);

    std::unique_ptr<PolicyBackend> backend;
    std::unique_ptr<RecordingPolicy> recorder;
    if (policy_mode == "scripted") {
        fs::path script = !script_path.empty() ? fs::path(script_path) : fs::path(config.policy);
        if (!script.empty() && script.is_relative() && !fs::exists(script))
            script = fs::path(config_path).parent_path() / script; // relative to the config file
        if (script.empty() || !fs::exists(script))
            fail(Errc::config_error, "--policy scripted needs a script file (via --script or "
                                     "the config 'policy' key); got '" + script.string() + "'");
        backend = ScriptedPolicy::from_file(script);
    } else if (policy_mode == "live") {
        backend = std::make_unique<LivePolicy>(LivePolicy::from_env());
    } else {
        fail(Errc::config_error, "--policy must be scripted or live");
    }
    PolicyBackend* policy = backend.get();
    if (!record_path.empty()) {
        recorder = std::make_unique<RecordingPolicy>(*backend, record_path);
        policy = recorder.get();
    }

    TraceLedger ledger(out / "trace.jsonl");
    EpisodeResult result =
        run_episode(objective, registry, *policy, config.budget, config, workspace, *clock, ledger);
    if (recorder)
        recorder->finish();

    json deliverables;
    deliverables["completed"] = result.completed;
    if (result.halt) {
        deliverables["halt"] = {{"reason", halt_reason_to_string(*result.halt)},
                                {"detail", result.halt_detail}};
    } else {
        deliverables["halt"] = nullptr;
    }
    json list = json::array();
    for (const auto& entry : result.deliverables)
        list.push_back({{"kind", entry.kind},
                        {"path", entry.path},
                        {"steps", entry.provenance_steps}});
    deliverables["deliverables"] = list;
    write_text_file_atomic(out / "deliverables.json", deliverables.dump(2) + "\n");

    RunStats stats = compute_run_stats(ledger);
    write_text_file_atomic(out / "run_stats.tsv", render_run_stats_tsv(stats));

    if (result.completed)
        return kOk;
    if (result.halt == HaltReason::step_limit || result.halt == HaltReason::time_limit ||
        result.halt == HaltReason::cost_limit) {
        std::cerr << "halted: " << result.halt_detail << "\n";
        return kBudget;
    }
    std::cerr << "episode failed: " << result.halt_detail << "\n";
    return kInternal;
}

std::map<std::string, double> load_metric_column(const fs::path& table,
                                                 const std::string& metric) {
    std::map<std::string, double> values;
    for (const auto& row : ingest_metric_table(table)) {
        auto it = row.metrics.find(metric);
        if (it != row.metrics.end())
            values[row.subject] = it->second;
    }
    return values;
}

int cmd_qc_screen(const std::string& table, const std::string& metric, const std::string& rule,
                  double multiplier, double fraction, const std::string& direction,
                  const std::string& out_path) {
    std::map<std::string, double> values = load_metric_column(table, metric);
    // both fences active unless the caller narrows the direction explicitly
    Direction dir = direction.empty() ? Direction::both : direction_from_string(direction);
    std::set<std::string> flagged;
    if (rule == "iqr")
        flagged = screen_iqr(values, multiplier, dir);
    else if (rule == "topk")
        flagged = screen_topk(values, fraction, dir);
    else
        fail(Errc::config_error, "--rule must be iqr or topk");

    json out;
    out["metric"] = metric;
    out["rule"] = rule;
    out["direction"] = direction_to_string(dir);
    out["n"] = values.size();
    out["flagged"] = std::vector<std::string>(flagged.begin(), flagged.end());
    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "flagged.json", out.dump(2) + "\n");
    return kOk;
}

std::vector<SubjectArtifacts> load_cohort(const fs::path& manifest_path) {
    json manifest;
    try {
        manifest = json::parse(read_text_file(manifest_path));
    } catch (const json::exception& e) {
        fail(Errc::config_error, manifest_path.string() + ": " + e.what());
    }
    fs::path base = manifest_path.parent_path();
    std::vector<SubjectArtifacts> cohort;
    for (const auto& record : manifest.at("subjects")) {
        SubjectArtifacts subject;
        subject.id = record.at("id").get<std::string>();
        if (record.contains("grids")) {
            for (auto& [role, path] : record.at("grids").items())
                subject.grids[role] = read_grid_json(base / path.get<std::string>());
        }
        if (record.contains("metrics")) {
            MetricVector mv;
            mv.subject = subject.id;
            for (auto& [name, value] : record.at("metrics").items())
                mv.metrics[name] = value.get<double>();
            subject.metrics = mv;
        }
        cohort.push_back(std::move(subject));
    }
    return cohort;
}

int cmd_qc_metrics(const std::string& cohort_path, const std::string& config_path,
                   const std::string& checkpoint, const std::string& out_path) {
    CheckpointConfig config = config_path.empty()
                                  ? CheckpointConfig{}
                                  : load_checkpoint_config(config_path, checkpoint);
    if (config_path.empty()) {
        for (auto& candidate : default_checkpoints()) {
            if (candidate.name == checkpoint)
                config = candidate;
        }
        if (config.name.empty())
            fail(Errc::config_error, "unknown checkpoint '" + checkpoint + "'");
    }
    std::vector<SubjectArtifacts> cohort = load_cohort(cohort_path);
    std::ostringstream table;
    table << "subject_id";
    for (const auto& name : config.metric_names)
        table << '\t' << name;
    table << '\n';
    char buf[64];
    for (const auto& subject : cohort) {
        MetricVector mv = compute_checkpoint_metrics(subject, config);
        table << subject.id;
        for (const auto& name : config.metric_names) {
            table << '\t';
            auto it = mv.metrics.find(name);
            if (it != mv.metrics.end()) {
                std::snprintf(buf, sizeof(buf), "%.6f", it->second);
                table << buf;
            }
        }
        table << '\n';
    }
    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "metrics.tsv", table.str());
    return kOk;
}

int cmd_qc_judge(const std::string& viz_path, double threshold, int max_turns,
                 const std::string& out_path) {
    json record;
    try {
        record = json::parse(read_text_file(viz_path));
    } catch (const json::exception& e) {
        fail(Errc::config_error, viz_path + ": " + e.what());
    }
    fs::path base = fs::path(viz_path).parent_path();
    VoxelGrid image = read_grid_json(base / record.at("base").get<std::string>());
    std::optional<VoxelGrid> mask, ref_mask;
    if (record.contains("mask"))
        mask = read_grid_json(base / record.at("mask").get<std::string>());
    if (record.contains("reference_mask"))
        ref_mask = read_grid_json(base / record.at("reference_mask").get<std::string>());

    VisualizationDescriptor viz = make_visualization(
        record.value("subject", "subject"), record.value("step", "step"),
        viz_kind_from_string(record.value("kind", "mask_contour_montage")), image,
        mask ? &*mask : nullptr, ref_mask ? &*ref_mask : nullptr);

    StubJudge judge(threshold);
    InspectionProtocol protocol;
    protocol.max_turns = max_turns;
    ElementVerdict verdict = visual_inspect(viz, judge, protocol);

    json out;
    out["subject"] = viz.subject;
    out["step"] = viz.step;
    out["verdict"] = verdict_to_string(verdict.verdict);
    out["reject_reason"] = verdict.reject_reason;
    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "verdict.json", out.dump(2) + "\n");
    return kOk;
}

int cmd_qc_checkpoint(const std::string& cohort_path, const std::string& config_path,
                      const std::string& checkpoint, double threshold,
                      const std::string& out_path) {
    CheckpointConfig config;
    bool found = false;
    if (!config_path.empty()) {
        config = load_checkpoint_config(config_path, checkpoint);
        found = true;
    } else {
        for (auto& candidate : default_checkpoints()) {
            if (candidate.name == checkpoint) {
                config = candidate;
                found = true;
            }
        }
    }
    if (!found)
        fail(Errc::config_error, "unknown checkpoint '" + checkpoint + "'");

    std::vector<SubjectArtifacts> cohort = load_cohort(cohort_path);
    StubJudge judge(threshold);
    InspectionProtocol protocol;
    CheckpointResult result = run_checkpoint(cohort, config, config.rule, judge, protocol);

    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "verdicts.json",
                           render_checkpoint_json(config.name, result));
    write_text_file_atomic(fs::path(out_path) / "verdicts.tsv", render_checkpoint_tsv(result));
    return kOk;
}

int cmd_agree(const std::string& system_path, const std::vector<std::string>& rater_paths,
              const std::string& checkpoint, const std::string& variant,
              const std::string& out_path) {
    static const std::set<std::string> kVariants = {"metric_only", "agentic_visual_only",
                                                    "non_agentic_visual_only", "hierarchical"};
    if (!kVariants.count(variant))
        fail(Errc::config_error,
             "--variant must be one of metric_only, agentic_visual_only, "
             "non_agentic_visual_only, hierarchical");
    auto system = read_rating_csv(system_path);
    std::array<std::vector<Label>, 3> raters;
    std::array<std::string, 3> names;
    RatingMatrix matrix;
    for (const auto& [item, label] : system)
        matrix.items.push_back(item);
    matrix.raters.push_back(variant);
    std::vector<Label> system_labels;
    for (const auto& [item, label] : system)
        system_labels.push_back(label);
    matrix.labels.push_back(system_labels);

    for (std::size_t i = 0; i < rater_paths.size(); ++i) {
        auto ratings = read_rating_csv(rater_paths[i]);
        if (ratings.size() != system.size())
            fail(Errc::length_mismatch, rater_paths[i] + " has " +
                                            std::to_string(ratings.size()) + " items, system has " +
                                            std::to_string(system.size()));
        std::vector<Label> labels;
        for (std::size_t j = 0; j < ratings.size(); ++j) {
            if (ratings[j].first != system[j].first)
                fail(Errc::length_mismatch, rater_paths[i] + ": item '" + ratings[j].first +
                                                "' does not align with system item '" +
                                                system[j].first + "'");
            labels.push_back(ratings[j].second);
        }
        names[i] = "rater" + std::to_string(i + 1);
        raters[i] = std::move(labels);
        matrix.raters.push_back(names[i]);
        matrix.labels.push_back(raters[i]);
    }

    AgreementReport report = mean_agreement_report(system_labels, raters, names);
    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "agreement.tsv",
                           render_agreement_tsv(checkpoint, report));

    std::ostringstream pass_rates;
    pass_rates << "rater\tpass_rate\n";
    for (const auto& rate : pass_rate_table(matrix))
        pass_rates << rate.rater << '\t' << rate.rendered << '\n';
    write_text_file_atomic(fs::path(out_path) / "pass_rates.tsv", pass_rates.str());
    return kOk;
}

int cmd_stats(const std::vector<std::string>& trace_paths, const std::string& out_path) {
    std::vector<RunStats> runs;
    std::vector<TraceLedger> ledgers;
    for (const auto& path : trace_paths) {
        TraceLedger ledger = TraceLedger::read(path); // verifies the checksum chain
        if (!ledger.closed())
            fail(Errc::ledger_open, path + " is not a closed ledger");
        runs.push_back(compute_run_stats(ledger));
        ledgers.push_back(std::move(ledger));
    }
    fs::create_directories(out_path);
    write_text_file_atomic(fs::path(out_path) / "summary.tsv",
                           export_tables(std::span<const RunStats>(runs)));
    std::vector<const TraceLedger*> refs;
    for (const auto& ledger : ledgers)
        refs.push_back(&ledger);
    write_text_file_atomic(fs::path(out_path) / "errors.tsv",
                           render_error_breakdown_tsv(refs));
    return kOk;
}

int map_error(const Error& e) {
    switch (e.code()) {
    case Errc::config_error:
    case Errc::parse_error:
    case Errc::missing_field:
    case Errc::invalid_name:
    case Errc::empty_schema:
    case Errc::duplicate_name:
    case Errc::no_subject_column:
    case Errc::too_few_values:
    case Errc::length_mismatch:
    case Errc::empty_input:
    case Errc::dim_mismatch:
    case Errc::index_gap:
    case Errc::ledger_open:
    case Errc::not_found:
        return kConfig;
    case Errc::budget_exhausted:
        return kBudget;
    default:
        return kInternal;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"workflow orchestration kernel for autonomous imaging analysis"};
    app.require_subcommand(1);

    // run
    std::string objective, dataset, cards, policy = "scripted", config, out = "out";
    std::string script, clock_spec = "system", record;
    long seed = -1;
    auto* run = app.add_subcommand("run", "run one orchestration episode");
    run->add_option("--objective", objective, "objective JSON")->required();
    run->add_option("--dataset", dataset, "dataset directory")->required();
    run->add_option("--cards", cards, "primitive card directory")->required();
    run->add_option("--policy", policy, "scripted | live");
    run->add_option("--config", config, "episode config JSON")->required();
    run->add_option("--out", out, "output directory")->required();
    run->add_option("--script", script, "scripted policy file (overrides config)");
    run->add_option("--clock", clock_spec, "system | manual:<start_ms>:<tick_ms>");
    run->add_option("--record", record, "record the session to a replayable script");
    run->add_option("--seed", seed, "override the config seed");

    // qc
    auto* qc = app.add_subcommand("qc", "standalone quality-control stages");
    qc->require_subcommand(1);

    std::string qc_table, qc_metric, qc_rule = "iqr", qc_direction, qc_out = "out";
    double qc_multiplier = 1.5, qc_fraction = 0.15;
    auto* screen = qc->add_subcommand("screen", "cohort outlier screening over one metric");
    screen->add_option("--table", qc_table, "metric table (.tsv/.json)")->required();
    screen->add_option("--metric", qc_metric, "metric column")->required();
    screen->add_option("--rule", qc_rule, "iqr | topk");
    screen->add_option("--multiplier", qc_multiplier, "IQR fence multiplier");
    screen->add_option("--fraction", qc_fraction, "top-K fraction");
    screen->add_option("--direction", qc_direction, "high_bad | low_bad | both");
    screen->add_option("--out", qc_out, "output directory")->required();

    std::string qm_cohort, qm_config, qm_checkpoint, qm_out = "out";
    auto* metrics = qc->add_subcommand("metrics", "compute checkpoint metrics for a cohort");
    metrics->add_option("--cohort", qm_cohort, "cohort manifest JSON")->required();
    metrics->add_option("--config", qm_config, "checkpoint config JSON");
    metrics->add_option("--checkpoint", qm_checkpoint, "checkpoint name")->required();
    metrics->add_option("--out", qm_out, "output directory")->required();

    std::string qj_viz, qj_out = "out";
    double qj_threshold = 0.05;
    int qj_turns = 5;
    auto* judge = qc->add_subcommand("judge", "visually inspect one visualization");
    judge->add_option("--viz", qj_viz, "visualization descriptor JSON")->required();
    judge->add_option("--threshold", qj_threshold, "stub-judge mismatch threshold");
    judge->add_option("--max-turns", qj_turns, "inspection turn limit");
    judge->add_option("--out", qj_out, "output directory")->required();

    std::string qk_cohort, qk_config, qk_checkpoint, qk_out = "out";
    double qk_threshold = 0.05;
    auto* checkpoint = qc->add_subcommand("checkpoint", "full two-stage checkpoint on a cohort");
    checkpoint->add_option("--cohort", qk_cohort, "cohort manifest JSON")->required();
    checkpoint->add_option("--config", qk_config, "checkpoint config JSON");
    checkpoint->add_option("--checkpoint", qk_checkpoint, "checkpoint name")->required();
    checkpoint->add_option("--threshold", qk_threshold, "stub-judge mismatch threshold");
    checkpoint->add_option("--out", qk_out, "output directory")->required();

    // agree
    std::string ag_system, ag_checkpoint = "checkpoint", ag_out = "out";
    std::string ag_variant = "hierarchical";
    std::vector<std::string> ag_raters;
    auto* agree = app.add_subcommand("agree", "agreement between a QC variant and human raters");
    agree->add_option("--system", ag_system, "system rating CSV")->required();
    agree->add_option("--raters", ag_raters, "three human rating CSVs")
        ->expected(3)
        ->required();
    agree->add_option("--checkpoint", ag_checkpoint, "checkpoint label for the report");
    agree->add_option("--variant", ag_variant,
                      "system QC variant: metric_only | agentic_visual_only | "
                      "non_agentic_visual_only | hierarchical");
    agree->add_option("--out", ag_out, "output directory")->required();

    // stats
    std::vector<std::string> st_traces;
    std::string st_out = "out";
    auto* stats = app.add_subcommand("stats", "summarize one or more trace ledgers");
    stats->add_option("--traces", st_traces, "trace.jsonl paths")->required()->expected(-1);
    stats->add_option("--out", st_out, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return cmd_run(objective, dataset, cards, policy, config, out, script, clock_spec,
                           record, seed);
        if (screen->parsed())
            return cmd_qc_screen(qc_table, qc_metric, qc_rule, qc_multiplier, qc_fraction,
                                 qc_direction, qc_out);
        if (metrics->parsed())
            return cmd_qc_metrics(qm_cohort, qm_config, qm_checkpoint, qm_out);
        if (judge->parsed())
            return cmd_qc_judge(qj_viz, qj_threshold, qj_turns, qj_out);
        if (checkpoint->parsed())
            return cmd_qc_checkpoint(qk_cohort, qk_config, qk_checkpoint, qk_threshold, qk_out);
        if (agree->parsed())
            return cmd_agree(ag_system, ag_raters, ag_checkpoint, ag_variant, ag_out);
        if (stats->parsed())
            return cmd_stats(st_traces, st_out);
    } catch (const Error& e) {
        std::cerr << e.what() << "\n";
        return map_error(e);
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kInternal;
    }
    return kConfig;
}
