#pragma once

#include "nexus/inspect.hpp"
#include "nexus/qc.hpp"
#include "nexus/voxel.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nexus {

/// One named QC stage: which metrics to screen on, which way each one points,
/// how to screen, and what to render for flagged subjects.
struct CheckpointConfig {
    std::string name;
    std::vector<std::string> metric_names;
    std::map<std::string, Direction> directions; // default_direction() when absent
    ScreeningRule rule;
    VizKind viz = VizKind::raw_mosaic;
    int nmi_bins = 64;
    int small_cohort_threshold = 10; // below this, screening is skipped
};

/// Everything known about one subject at a checkpoint. Grids are keyed by
/// role ("image", "reference", "mask", "reference_mask", "labels"); built-in
/// metrics are computed from them, anything else comes from `metrics`.
struct SubjectArtifacts {
    std::string id;
    std::map<std::string, VoxelGrid> grids;
    std::optional<MetricVector> metrics; // externally ingested values
};

struct CheckpointResult {
    std::map<std::string, SubjectVerdict> verdicts;
    std::map<std::string, MetricVector> metrics;
    std::set<std::string> flagged; // S
    std::set<std::string> judged;  // subjects the judge actually saw
};

Direction checkpoint_direction(const CheckpointConfig& config, const std::string& metric);

/// Computes this checkpoint's metrics for one subject. Metrics that cannot be
/// computed (absent grids, degenerate inputs) are recorded as missing.
MetricVector compute_checkpoint_metrics(const SubjectArtifacts& subject,
                                        const CheckpointConfig& config);

/// Two-stage hierarchical QC over a cohort: metric screening selects the
/// flagged subset S (union over per-metric screens; subjects with missing
/// required metrics are always in S), then only subjects in S are visually
/// inspected. Cohorts below the small-cohort threshold skip screening and are
/// all inspected. Metric computation and inspection each use a small worker
/// pool (5 workers by default).
CheckpointResult run_checkpoint(const std::vector<SubjectArtifacts>& cohort,
                                const CheckpointConfig& config, const ScreeningRule& rule,
                                Judge& judge, const InspectionProtocol& protocol = {},
                                int metric_workers = 5, int inspect_workers = 5);

/// Stock checkpoint definitions for the usual T1w/fMRI stages.
std::vector<CheckpointConfig> default_checkpoints();

std::vector<CheckpointConfig> load_checkpoint_configs(const std::filesystem::path& path);
CheckpointConfig load_checkpoint_config(const std::filesystem::path& path,
                                        const std::string& name);
std::string render_checkpoint_configs_json(const std::vector<CheckpointConfig>& configs);

/// Cohort report serializers: verdict JSON plus a TSV summary.
std::string render_checkpoint_json(const std::string& checkpoint, const CheckpointResult& result);
std::string render_checkpoint_tsv(const CheckpointResult& result);

} // namespace nexus
