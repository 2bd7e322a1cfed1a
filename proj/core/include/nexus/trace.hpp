#pragma once

#include "nexus/action.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace nexus {

struct Usage {
    long prompt_tokens = 0;
    long completion_tokens = 0;
    double cost = 0.0;

    Usage& operator+=(const Usage& other) {
        prompt_tokens += other.prompt_tokens;
        completion_tokens += other.completion_tokens;
        cost += other.cost;
        return *this;
    }
};

/// The eight execution-failure categories used for run accounting.
enum class ErrorCategory {
    tool_primitive_misuse,
    codegen_execution,
    state_drift,
    instruction_violation,
    scalability_resource,
    hallucination_fabrication,
    file_path,
    workflow_orchestration,
};

ErrorCategory error_category_from_string(const std::string& text);
const char* error_category_to_string(ErrorCategory category);

struct ErrorMark {
    ErrorCategory category = ErrorCategory::codegen_execution;
    std::string note;
};

/// One (action, observation) pair. Indices start at 1 and are gapless.
struct TraceStep {
    int index = 0;
    AgentRole agent = AgentRole::supervisor;
    std::string action_json; // canonical action record
    std::string observation;
    std::optional<Usage> usage;
    std::int64_t timestamp_ms = 0;       // from the injected clock
    std::optional<ErrorMark> error;      // set when the step is a flagged failure
};

/// Derived error event: recovery means a later non-failing step of the same
/// agent and action kind exists.
struct ErrorEvent {
    int step_index = 0;
    ErrorCategory category = ErrorCategory::codegen_execution;
    bool recovered = false;
    std::string note;
};

/// Append-only episode ledger. Each persisted line carries a checksum chained
/// over the previous line's checksum, so any rewrite of history is detectable.
class TraceLedger {
public:
    TraceLedger() = default;

    /// File-backed ledger; appends stream to `path` as JSON lines.
    explicit TraceLedger(std::filesystem::path path);

    void append(TraceStep step);
    void close();

    bool closed() const { return closed_; }
    const std::vector<TraceStep>& steps() const { return steps_; }
    std::size_t size() const { return steps_.size(); }
    int last_index() const { return steps_.empty() ? 0 : steps_.back().index; }
    const std::filesystem::path& path() const { return path_; }

    std::vector<ErrorEvent> error_events() const;

    /// Reads a ledger back and verifies the checksum chain; throws ParseError
    /// naming the offending line on any corruption.
    static TraceLedger read(const std::filesystem::path& path);

private:
    std::filesystem::path path_;
    std::vector<TraceStep> steps_;
    std::string last_checksum_;
    bool closed_ = false;
};

std::string trace_step_to_json(const TraceStep& step, const std::string& checksum);

/// Ordered classification rules: first match wins.
struct ErrorRule {
    std::string pattern; // ECMAScript regex, matched case-insensitively
    ErrorCategory category;
};

/// ~20 shipped rules covering all eight categories.
std::vector<ErrorRule> default_error_rules();

std::vector<ErrorRule> load_error_rules_tsv(const std::filesystem::path& path);
std::string render_error_rules_tsv(std::span<const ErrorRule> rules);

using ClassifyFallback = std::function<ErrorCategory(const std::string& observation)>;

/// Maps a flagged observation to exactly one category. The fallback (when
/// given) is consulted only when no rule matches.
ErrorCategory classify_error(const std::string& observation, std::span<const ErrorRule> rules,
                             const ClassifyFallback* fallback = nullptr);

struct RunStats {
    bool completed = false;
    double runtime_seconds = 0;
    double api_cost = 0;
    long prompt_tokens = 0;
    long completion_tokens = 0;
    long n_interactions = 0;        // messages crossing the supervisor boundary
    long n_actions = 0;             // all agent actions (halt records excluded)
    long n_scripts = 0;             // executed programs / job dispatches
    long n_pipelines_explored = 0;  // distinct pipeline labels
    long n_refinement_rounds = 0;   // distinct refinement labels
    long n_errors = 0;
    long n_recovered = 0;
};

/// Single-pass statistics over a closed ledger.
RunStats compute_run_stats(const TraceLedger& ledger);

/// Table of `field \t mean \t min \t max \t mean (min–max)` rows. Count
/// fields render their range as integers, continuous fields to one decimal.
std::string export_tables(std::span<const RunStats> runs);

/// Per-category error totals across ledgers (`category \t errors \t recovered`),
/// the stacked-bar data for external plotting.
std::string render_error_breakdown_tsv(std::span<const TraceLedger* const> ledgers);

std::string render_run_stats_tsv(const RunStats& stats);

} // namespace nexus
