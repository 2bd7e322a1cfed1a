#include "nexus/checkpoint.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <functional>
#include <mutex>
#include <sstream>
#include <thread>

using nlohmann::json;

namespace nexus {

namespace {

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// rethrown on the caller after the barrier.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
    if (n == 0)
        return;
    int pool = std::max(1, std::min<int>(workers, static_cast<int>(n)));
    if (pool == 1) {
        for (std::size_t i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> threads;
    std::mutex error_mutex;
    std::exception_ptr first_error;
    for (int t = 0; t < pool; ++t) {
        threads.emplace_back([&] {
            for (;;) {
                std::size_t i = next.fetch_add(1);
                if (i >= n)
                    return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!first_error)
                        first_error = std::current_exception();
                }
            }
        });
    }
    for (auto& thread : threads)
        thread.join();
    if (first_error)
        std::rethrow_exception(first_error);
}

const VoxelGrid* grid_of(const SubjectArtifacts& subject, const std::string& role) {
    auto it = subject.grids.find(role);
    return it == subject.grids.end() ? nullptr : &it->second;
}

} // namespace

Direction checkpoint_direction(const CheckpointConfig& config, const std::string& metric) {
    auto it = config.directions.find(metric);
    return it == config.directions.end() ? default_direction(metric) : it->second;
}

MetricVector compute_checkpoint_metrics(const SubjectArtifacts& subject,
                                        const CheckpointConfig& config) {
    MetricVector mv;
    mv.subject = subject.id;
    mv.step = config.name;

    for (const std::string& name : config.metric_names) {
        if (subject.metrics) {
            auto it = subject.metrics->metrics.find(name);
            if (it != subject.metrics->metrics.end()) {
                mv.metrics[name] = it->second;
                continue;
            }
        }
        const VoxelGrid* image = grid_of(subject, "image");
        const VoxelGrid* reference = grid_of(subject, "reference");
        const VoxelGrid* mask = grid_of(subject, "mask");
        const VoxelGrid* ref_mask = grid_of(subject, "reference_mask");
        const VoxelGrid* labels = grid_of(subject, "labels");
        try {
            if (name == "nmi" && image && reference)
                mv.metrics[name] = compute_nmi(*image, *reference, config.nmi_bins);
            else if (name == "ncc" && image && reference)
                mv.metrics[name] = compute_ncc(*image, *reference);
            else if (name == "dice" && mask && ref_mask)
                mv.metrics[name] = compute_dice(*mask, *ref_mask);
            else if (name == "brain_volume_ml" && mask)
                mv.metrics[name] = compute_volume_ml(*mask);
            else if (name == "csf_volume_ml" && labels)
                mv.metrics[name] = compute_volume_ml(*labels, 1);
            else if (name == "gm_volume_ml" && labels)
                mv.metrics[name] = compute_volume_ml(*labels, 2);
            else if (name == "wm_volume_ml" && labels)
                mv.metrics[name] = compute_volume_ml(*labels, 3);
            else
                mv.missing.insert(name);
        } catch (const Error& e) {
            if (e.code() == Errc::dim_mismatch)
                throw; // inconsistent cohort manifest, not a degenerate subject
            // degenerate input (empty masks, constant images, absent label)
            mv.missing.insert(name);
        }
    }
    return mv;
}

CheckpointResult run_checkpoint(const std::vector<SubjectArtifacts>& cohort,
                                const CheckpointConfig& config, const ScreeningRule& rule,
                                Judge& judge, const InspectionProtocol& protocol,
                                int metric_workers, int inspect_workers) {
    CheckpointResult result;
    if (cohort.empty())
        return result;

    // stage 1: metrics (compute pool)
    std::vector<MetricVector> metrics(cohort.size());
    parallel_for(cohort.size(), metric_workers,
                 [&](std::size_t i) { metrics[i] = compute_checkpoint_metrics(cohort[i], config); });
    for (const auto& mv : metrics)
        result.metrics[mv.subject] = mv;

    const bool small_cohort = cohort.size() < static_cast<std::size_t>(config.small_cohort_threshold);
    if (small_cohort) {
        for (const auto& subject : cohort)
            result.flagged.insert(subject.id);
    } else {
        // union of per-metric screens
        for (const std::string& name : config.metric_names) {
            std::map<std::string, double> values;
            for (const auto& mv : metrics) {
                auto it = mv.metrics.find(name);
                if (it != mv.metrics.end())
                    values[mv.subject] = it->second;
            }
            Direction direction = checkpoint_direction(config, name);
            std::set<std::string> flagged;
            if (rule.kind == ScreeningRule::Kind::iqr)
                flagged = screen_iqr(values, rule.iqr_multiplier, direction);
            else
                flagged = screen_topk(values, rule.fraction, direction);
            result.flagged.insert(flagged.begin(), flagged.end());
        }
        // missing required metrics always flag the subject for review
        for (const auto& mv : metrics) {
            if (!mv.missing.empty())
                result.flagged.insert(mv.subject);
        }
    }

    // stage 2: visual inspection, only for flagged subjects
    std::vector<const SubjectArtifacts*> to_inspect;
    for (const auto& subject : cohort) {
        if (result.flagged.count(subject.id))
            to_inspect.push_back(&subject);
    }

    std::mutex result_mutex;
    std::map<std::string, ElementVerdict> inspected;
    parallel_for(to_inspect.size(), inspect_workers, [&](std::size_t i) {
        const SubjectArtifacts& subject = *to_inspect[i];
        const VoxelGrid* base = grid_of(subject, "image");
        const VoxelGrid* mask = grid_of(subject, "mask");
        const VoxelGrid* ref_mask = grid_of(subject, "reference_mask");
        ElementVerdict verdict;
        if (!base) {
            verdict.verdict = Verdict::rejected;
            verdict.reject_reason = "no image available for inspection";
        } else {
            VisualizationDescriptor viz =
                make_visualization(subject.id, config.name, config.viz, *base, mask, ref_mask);
            verdict = visual_inspect(viz, judge, protocol);
        }
        std::lock_guard lock(result_mutex);
        inspected[subject.id] = verdict;
        result.judged.insert(subject.id);
    });

    // aggregate: unflagged subjects pass on metric evidence alone
    for (std::size_t i = 0; i < cohort.size(); ++i) {
        const std::string& id = cohort[i].id;
        StepEvidence evidence;
        evidence.triggering_metrics = metrics[i].metrics;
        if (result.flagged.count(id)) {
            evidence.verdict = inspected.at(id);
            evidence.viz_refs.push_back(config.name + "/" + id);
        } else {
            evidence.verdict.verdict = Verdict::acceptable;
        }
        result.verdicts[id] =
            aggregate_subject_verdicts(id, {{config.name, std::move(evidence)}});
    }
    return result;
}

std::vector<CheckpointConfig> default_checkpoints() {
    std::vector<CheckpointConfig> configs;

    CheckpointConfig raw_t1w;
    raw_t1w.name = "raw_t1w";
    raw_t1w.metric_names = {"cjv", "cnr", "efc", "fber", "snr_total"};
    raw_t1w.rule.kind = ScreeningRule::Kind::iqr;
    raw_t1w.viz = VizKind::raw_mosaic;
    configs.push_back(raw_t1w);

    CheckpointConfig raw_bold;
    raw_bold.name = "raw_bold";
    raw_bold.metric_names = {"efc", "fd_mean", "gcor", "snr", "tsnr"};
    raw_bold.rule.kind = ScreeningRule::Kind::iqr;
    raw_bold.viz = VizKind::raw_mosaic;
    configs.push_back(raw_bold);

    CheckpointConfig skull_strip;
    skull_strip.name = "skull_strip";
    skull_strip.metric_names = {"brain_volume_ml"};
    skull_strip.rule.kind = ScreeningRule::Kind::iqr;
    skull_strip.viz = VizKind::mask_contour_montage;
    configs.push_back(skull_strip);

    CheckpointConfig tissue_seg;
    tissue_seg.name = "tissue_seg";
    tissue_seg.metric_names = {"csf_volume_ml", "gm_volume_ml", "wm_volume_ml"};
    tissue_seg.rule.kind = ScreeningRule::Kind::iqr;
    tissue_seg.viz = VizKind::segmentation_contour_montage;
    configs.push_back(tissue_seg);

    CheckpointConfig t1w_to_mni;
    t1w_to_mni.name = "t1w_to_mni";
    t1w_to_mni.metric_names = {"nmi", "ncc"};
    t1w_to_mni.rule.kind = ScreeningRule::Kind::topk;
    t1w_to_mni.viz = VizKind::template_contour_montage;
    configs.push_back(t1w_to_mni);

    CheckpointConfig coreg;
    coreg.name = "fmri_to_t1w";
    coreg.metric_names = {"nmi", "dice"};
    coreg.rule.kind = ScreeningRule::Kind::iqr;
    coreg.viz = VizKind::mask_contour_montage;
    configs.push_back(coreg);

    CheckpointConfig fmri_to_mni;
    fmri_to_mni.name = "fmri_to_mni";
    fmri_to_mni.metric_names = {"nmi", "dice"};
    fmri_to_mni.rule.kind = ScreeningRule::Kind::topk;
    fmri_to_mni.viz = VizKind::template_contour_montage;
    configs.push_back(fmri_to_mni);

    return configs;
}

namespace {

CheckpointConfig checkpoint_from_json(const json& record) {
    CheckpointConfig config;
    config.name = record.at("name").get<std::string>();
    for (const auto& metric : record.at("metrics"))
        config.metric_names.push_back(metric.get<std::string>());
    if (record.contains("directions")) {
        for (auto& [key, value] : record.at("directions").items())
            config.directions[key] = direction_from_string(value.get<std::string>());
    }
    if (record.contains("rule")) {
        const json& rule = record.at("rule");
        std::string kind = rule.at("kind").get<std::string>();
        if (kind == "iqr")
            config.rule.kind = ScreeningRule::Kind::iqr;
        else if (kind == "topk")
            config.rule.kind = ScreeningRule::Kind::topk;
        else
            fail(Errc::parse_error, "rule kind must be iqr or topk");
        if (rule.contains("multiplier"))
            config.rule.iqr_multiplier = rule.at("multiplier").get<double>();
        if (rule.contains("fraction"))
            config.rule.fraction = rule.at("fraction").get<double>();
    }
    if (record.contains("visualization"))
        config.viz = viz_kind_from_string(record.at("visualization").get<std::string>());
    if (record.contains("nmi_bins"))
        config.nmi_bins = record.at("nmi_bins").get<int>();
    if (record.contains("small_cohort_threshold"))
        config.small_cohort_threshold = record.at("small_cohort_threshold").get<int>();
    return config;
}

} // namespace

std::vector<CheckpointConfig> load_checkpoint_configs(const std::filesystem::path& path) {
    json record;
    try {
        record = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::parse_error, path.string() + ": " + e.what());
    }
    std::vector<CheckpointConfig> configs;
    try {
        const json& list = record.is_array() ? record : record.at("checkpoints");
        for (const auto& entry : list)
            configs.push_back(checkpoint_from_json(entry));
    } catch (const json::exception& e) {
        fail(Errc::parse_error, path.string() + ": " + e.what());
    }
    return configs;
}

CheckpointConfig load_checkpoint_config(const std::filesystem::path& path,
                                        const std::string& name) {
    for (auto& config : load_checkpoint_configs(path)) {
        if (config.name == name)
            return config;
    }
    fail(Errc::config_error, "no checkpoint named '" + name + "' in " + path.string());
}

std::string render_checkpoint_configs_json(const std::vector<CheckpointConfig>& configs) {
    json list = json::array();
    for (const auto& config : configs) {
        json record;
        record["name"] = config.name;
        record["metrics"] = config.metric_names;
        json directions = json::object();
        for (const std::string& metric : config.metric_names)
            directions[metric] = direction_to_string(checkpoint_direction(config, metric));
        record["directions"] = directions;
        if (config.rule.kind == ScreeningRule::Kind::iqr)
            record["rule"] = {{"kind", "iqr"}, {"multiplier", config.rule.iqr_multiplier}};
        else
            record["rule"] = {{"kind", "topk"}, {"fraction", config.rule.fraction}};
        record["visualization"] = viz_kind_to_string(config.viz);
        record["nmi_bins"] = config.nmi_bins;
        record["small_cohort_threshold"] = config.small_cohort_threshold;
        list.push_back(std::move(record));
    }
    return json{{"checkpoints", list}}.dump(2) + "\n";
}

std::string render_checkpoint_json(const std::string& checkpoint, const CheckpointResult& result) {
    json out;
    out["checkpoint"] = checkpoint;
    out["flagged"] = std::vector<std::string>(result.flagged.begin(), result.flagged.end());
    out["judged"] = std::vector<std::string>(result.judged.begin(), result.judged.end());
    json verdicts = json::object();
    for (const auto& [subject, verdict] : result.verdicts) {
        json steps = json::object();
        for (const auto& [step, evidence] : verdict.evidence.per_step) {
            steps[step] = {{"verdict", verdict_to_string(evidence.verdict.verdict)},
                           {"reject_reason", evidence.verdict.reject_reason},
                           {"metrics", evidence.triggering_metrics},
                           {"viz_refs", evidence.viz_refs}};
        }
        verdicts[subject] = {{"y", outcome_to_string(verdict.y)},
                             {"summary", verdict.evidence.summary},
                             {"steps", steps}};
    }
    out["verdicts"] = verdicts;
    return out.dump(2) + "\n";
}

std::string render_checkpoint_tsv(const CheckpointResult& result) {
    std::ostringstream out;
    out << "subject\tverdict\tflagged\tjudged\tsummary\n";
    for (const auto& [subject, verdict] : result.verdicts) {
        out << subject << '\t' << outcome_to_string(verdict.y) << '\t'
            << (result.flagged.count(subject) ? 1 : 0) << '\t'
            << (result.judged.count(subject) ? 1 : 0) << '\t' << verdict.evidence.summary << '\n';
    }
    return out.str();
}

} // namespace nexus
