#pragma once

#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace nexus {

/// Per-subject quality metrics phi(x) at one checkpoint. Metrics that could
/// not be obtained are listed in `missing` (disjoint from `metrics`).
struct MetricVector {
    std::string subject;
    std::string step;
    std::map<std::string, double> metrics;
    std::set<std::string> missing;
};

/// Which side of a metric's distribution is suspicious.
enum class Direction { high_bad, low_bad, both };

Direction direction_from_string(const std::string& text);
const char* direction_to_string(Direction direction);

struct ScreeningRule {
    enum class Kind { iqr, topk };
    Kind kind = Kind::iqr;
    double iqr_multiplier = 1.5;
    double fraction = 0.15; // in (0, 1]
};

/// Parses a metric table (.tsv with a `subject_id` column, or .json array of
/// row objects). Blank cells land in `missing`.
std::vector<MetricVector> ingest_metric_table(const std::filesystem::path& path,
                                              const std::string& step = "");

/// Tukey-hinge IQR screen: flags subjects outside [Q1 - m*IQR, Q3 + m*IQR].
/// `direction` restricts which fence counts (both by default). Needs >= 4
/// non-missing values.
std::set<std::string> screen_iqr(const std::map<std::string, double>& values, double multiplier,
                                 Direction direction = Direction::both);

/// Flags the ceil(fraction*N) most abnormal subjects. low_bad ranks ascending,
/// high_bad descending, both by distance from the median. Ties break by
/// subject id ascending.
std::set<std::string> screen_topk(const std::map<std::string, double>& values, double fraction,
                                  Direction direction);

/// Tukey hinges (medians of the lower/upper halves, median shared when N odd).
std::pair<double, double> tukey_hinges(std::vector<double> sorted_values);

enum class Verdict { acceptable, rejected };

const char* verdict_to_string(Verdict verdict);

/// Per-step judgment; a rejection always carries a reason.
struct ElementVerdict {
    Verdict verdict = Verdict::acceptable;
    std::string reject_reason;
};

struct StepEvidence {
    ElementVerdict verdict;
    std::map<std::string, double> triggering_metrics;
    std::vector<std::string> viz_refs;
};

struct EvidenceBundle {
    std::map<std::string, StepEvidence> per_step;
    std::string summary;
};

enum class SubjectOutcome { pass, fail };

const char* outcome_to_string(SubjectOutcome outcome);

/// (y, e): FAIL iff any step was rejected, with the supporting evidence.
struct SubjectVerdict {
    std::string subject;
    SubjectOutcome y = SubjectOutcome::pass;
    EvidenceBundle evidence;
};

/// Combines per-step verdicts into the subject-level judgment. PASS iff every
/// step is acceptable; the evidence names each rejected step and its reason.
SubjectVerdict aggregate_subject_verdicts(const std::string& subject,
                                          const std::map<std::string, StepEvidence>& per_step);

/// Shipped direction table for the stock checkpoint metrics (dice/nmi/ncc are
/// low_bad, motion and noise scores high_bad, everything else both).
Direction default_direction(const std::string& metric_name);

} // namespace nexus
