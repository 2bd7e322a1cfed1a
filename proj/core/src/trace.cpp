#include "nexus/trace.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

using nlohmann::json;

namespace nexus {

ErrorCategory error_category_from_string(const std::string& text) {
    if (text == "ToolPrimitiveMisuse")
        return ErrorCategory::tool_primitive_misuse;
    if (text == "CodeGenExecutionError")
        return ErrorCategory::codegen_execution;
    if (text == "StateDrift")
        return ErrorCategory::state_drift;
    if (text == "InstructionViolation")
        return ErrorCategory::instruction_violation;
    if (text == "ScalabilityResourceFailure")
        return ErrorCategory::scalability_resource;
    if (text == "HallucinationFabrication")
        return ErrorCategory::hallucination_fabrication;
    if (text == "FilePathError")
        return ErrorCategory::file_path;
    if (text == "WorkflowOrchestrationError")
        return ErrorCategory::workflow_orchestration;
    fail(Errc::parse_error, "unknown error category '" + text + "'");
}

const char* error_category_to_string(ErrorCategory category) {
    switch (category) {
    case ErrorCategory::tool_primitive_misuse: return "ToolPrimitiveMisuse";
    case ErrorCategory::codegen_execution: return "CodeGenExecutionError";
    case ErrorCategory::state_drift: return "StateDrift";
    case ErrorCategory::instruction_violation: return "InstructionViolation";
    case ErrorCategory::scalability_resource: return "ScalabilityResourceFailure";
    case ErrorCategory::hallucination_fabrication: return "HallucinationFabrication";
    case ErrorCategory::file_path: return "FilePathError";
    case ErrorCategory::workflow_orchestration: return "WorkflowOrchestrationError";
    }
    return "?";
}

namespace {

// invalid UTF-8 from subprocess logs must not break ledger serialization;
// the replacement is deterministic, so write and verify stay in lockstep
std::string safe_dump(const json& record) {
    return record.dump(-1, ' ', false, json::error_handler_t::replace);
}

json step_payload(const TraceStep& step) {
    json record;
    record["index"] = step.index;
    record["agent"] = agent_role_to_string(step.agent);
    try {
        record["action"] = json::parse(step.action_json);
    } catch (const json::exception& e) {
        fail(Errc::parse_error, std::string("step action is not valid JSON: ") + e.what());
    }
    record["observation"] = step.observation;
    if (step.usage) {
        record["usage"] = {{"prompt_tokens", step.usage->prompt_tokens},
                           {"completion_tokens", step.usage->completion_tokens},
                           {"cost", step.usage->cost}};
    } else {
        record["usage"] = nullptr;
    }
    record["ts"] = step.timestamp_ms;
    if (step.error) {
        record["error"] = {{"category", error_category_to_string(step.error->category)},
                           {"note", step.error->note}};
    }
    return record;
}

} // namespace

std::string trace_step_to_json(const TraceStep& step, const std::string& checksum) {
    json record = step_payload(step);
    record["checksum"] = checksum;
    return safe_dump(record);
}

TraceLedger::TraceLedger(std::filesystem::path path) : path_(std::move(path)) {
    if (path_.has_parent_path())
        std::filesystem::create_directories(path_.parent_path());
    std::ofstream out(path_, std::ios::trunc); // fresh episode file
    if (!out)
        fail(Errc::io_failure, "cannot create ledger " + path_.string());
}

void TraceLedger::append(TraceStep step) {
    if (closed_)
        fail(Errc::immutability_violation, "ledger is closed");
    int expected = last_index() + 1;
    if (step.index > expected)
        fail(Errc::index_gap, "expected index " + std::to_string(expected) + ", got " +
                                  std::to_string(step.index));
    if (step.index < expected)
        fail(Errc::immutability_violation,
             "index " + std::to_string(step.index) + " is already persisted");

    std::string payload = safe_dump(step_payload(step));
    std::string checksum = sha256_hex(last_checksum_ + "\n" + payload);
    if (!path_.empty()) {
        std::ofstream out(path_, std::ios::app);
        if (!out)
            fail(Errc::io_failure, "cannot append to " + path_.string());
        out << trace_step_to_json(step, checksum) << '\n';
    }
    last_checksum_ = checksum;
    steps_.push_back(std::move(step));
}

void TraceLedger::close() {
    closed_ = true;
}

std::vector<ErrorEvent> TraceLedger::error_events() const {
    std::vector<ErrorEvent> events;
    for (std::size_t i = 0; i < steps_.size(); ++i) {
        const TraceStep& step = steps_[i];
        if (!step.error)
            continue;
        ErrorEvent event;
        event.step_index = step.index;
        event.category = step.error->category;
        event.note = step.error->note;
        // recovered when the same agent later completes the same action kind cleanly
        std::string kind = json::parse(step.action_json).value("action", "");
        for (std::size_t j = i + 1; j < steps_.size(); ++j) {
            const TraceStep& later = steps_[j];
            if (later.agent != step.agent || later.error)
                continue;
            if (json::parse(later.action_json).value("action", "") == kind) {
                event.recovered = true;
                break;
            }
        }
        events.push_back(std::move(event));
    }
    return events;
}

TraceLedger TraceLedger::read(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::io_failure, "cannot open ledger " + path.string());
    TraceLedger ledger;
    std::string line;
    std::string prev_checksum;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty())
            continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            fail(Errc::parse_error,
                 path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }
        TraceStep step;
        std::string checksum;
        try {
            step.index = record.at("index").get<int>();
            step.agent = agent_role_from_string(record.at("agent").get<std::string>());
            step.action_json = safe_dump(record.at("action"));
            step.observation = record.at("observation").get<std::string>();
            if (record.contains("usage") && !record.at("usage").is_null()) {
                Usage usage;
                usage.prompt_tokens = record.at("usage").at("prompt_tokens").get<long>();
                usage.completion_tokens = record.at("usage").at("completion_tokens").get<long>();
                usage.cost = record.at("usage").at("cost").get<double>();
                step.usage = usage;
            }
            step.timestamp_ms = record.at("ts").get<std::int64_t>();
            if (record.contains("error")) {
                ErrorMark mark;
                mark.category =
                    error_category_from_string(record.at("error").at("category").get<std::string>());
                mark.note = record.at("error").at("note").get<std::string>();
                step.error = mark;
            }
            checksum = record.at("checksum").get<std::string>();
        } catch (const json::exception& e) {
            fail(Errc::parse_error,
                 path.string() + ":" + std::to_string(line_no) + ": " + e.what());
        }

        record.erase("checksum");
        std::string expected = sha256_hex(prev_checksum + "\n" + safe_dump(record));
        if (checksum != expected)
            fail(Errc::parse_error, path.string() + ":" + std::to_string(line_no) +
                                        ": checksum chain broken");
        if (step.index != ledger.last_index() + 1)
            fail(Errc::index_gap,
                 path.string() + ":" + std::to_string(line_no) + ": non-contiguous index");
        prev_checksum = checksum;
        ledger.steps_.push_back(std::move(step));
    }
    ledger.last_checksum_ = prev_checksum;
    // a ledger on disk is closed iff it ends in a terminal record
    if (!ledger.steps_.empty()) {
        std::string kind = json::parse(ledger.steps_.back().action_json).value("action", "");
        if (kind == "report_final" || kind == "halt")
            ledger.closed_ = true;
    }
    return ledger;
}

std::vector<ErrorRule> default_error_rules() {
    // first match wins
    return {
        {"re-included|re-introduc|previously excluded|already excluded|repeating completed",
         ErrorCategory::state_drift},
        {"wall-clock budget exceeded|step limit reached|recursion limit|out of memory|OOM|"
         "disk quota|resource exhaust",
         ErrorCategory::scalability_resource},
        {"fabricat|nonexistent data|invented result|not actually produced|hallucinat|"
         "reported completion without",
         ErrorCategory::hallucination_fabrication},
        {"outside the workspace|outside workspace|skipped required|unsupported tool|"
         "violates instruction|instruction violation|protocol breach",
         ErrorCategory::instruction_violation},
        {"RoutingViolation|FanoutViolation", ErrorCategory::instruction_violation},
        {"unknown primitive|schema mismatch|invalid argument for primitive|"
         "primitive misuse|DisallowedAction|UndeclaredPrimitive|wrong arguments for",
         ErrorCategory::tool_primitive_misuse},
        {"out of order|before prerequisites|prerequisite not met|orchestration error|"
         "stage order|confusing multi-subject",
         ErrorCategory::workflow_orchestration},
        {"No such file or directory|FileNotFoundError|missing file|path does not exist|"
         "FilePathError|cannot open",
         ErrorCategory::file_path},
        {"ModuleNotFoundError|ImportError|Traceback|SyntaxError|NameError|TypeError|"
         "ValueError|segmentation fault|non-zero exit|exit status [1-9]|command not found",
         ErrorCategory::codegen_execution},
        {"timed out|timeout", ErrorCategory::scalability_resource},
    };
}

std::vector<ErrorRule> load_error_rules_tsv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail(Errc::io_failure, "cannot open " + path.string());
    std::vector<ErrorRule> rules;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos)
            fail(Errc::parse_error, path.string() + ": rule line lacks a tab");
        rules.push_back(
            {line.substr(0, tab), error_category_from_string(line.substr(tab + 1))});
    }
    return rules;
}

std::string render_error_rules_tsv(std::span<const ErrorRule> rules) {
    std::ostringstream out;
    for (const auto& rule : rules)
        out << rule.pattern << '\t' << error_category_to_string(rule.category) << '\n';
    return out.str();
}

ErrorCategory classify_error(const std::string& observation, std::span<const ErrorRule> rules,
                             const ClassifyFallback* fallback) {
    for (const auto& rule : rules) {
        std::regex re(rule.pattern, std::regex::ECMAScript | std::regex::icase);
        if (std::regex_search(observation, re))
            return rule.category;
    }
    if (fallback)
        return (*fallback)(observation);
    fail(Errc::unclassifiable, "no rule matched and no fallback configured");
}

RunStats compute_run_stats(const TraceLedger& ledger) {
    if (!ledger.closed())
        fail(Errc::ledger_open, "ledger must be closed before computing stats");

    RunStats stats;
    std::set<std::string> pipelines;
    std::set<std::string> refinements;
    std::int64_t first_ts = 0, last_ts = 0;
    bool first = true;

    for (const TraceStep& step : ledger.steps()) {
        if (first) {
            first_ts = step.timestamp_ms;
            first = false;
        }
        last_ts = step.timestamp_ms;
        if (step.usage) {
            stats.api_cost += step.usage->cost;
            stats.prompt_tokens += step.usage->prompt_tokens;
            stats.completion_tokens += step.usage->completion_tokens;
        }
        json action = json::parse(step.action_json);
        std::string kind = action.value("action", "");
        if (kind == "halt")
            continue; // runtime bookkeeping, not an agent action
        ++stats.n_actions;
        if (kind == "send_message" && !step.error)
            ++stats.n_interactions; // only messages that actually crossed the hub
        if (kind == "execute_program")
            ++stats.n_scripts;
        if (action.contains("pipeline"))
            pipelines.insert(action.at("pipeline").get<std::string>());
        if (action.contains("refinement"))
            refinements.insert(action.at("refinement").get<std::string>());
        if (kind == "report_final")
            stats.completed = true;
    }
    stats.n_pipelines_explored = static_cast<long>(pipelines.size());
    stats.n_refinement_rounds = static_cast<long>(refinements.size());
    stats.runtime_seconds = static_cast<double>(last_ts - first_ts) / 1000.0;

    for (const ErrorEvent& event : ledger.error_events()) {
        ++stats.n_errors;
        if (event.recovered)
            ++stats.n_recovered;
    }
    return stats;
}

namespace {

struct Field {
    const char* name;
    bool integral;
    double (*get)(const RunStats&);
};

const Field kFields[] = {
    {"completed_runs", true, [](const RunStats& s) { return s.completed ? 1.0 : 0.0; }},
    {"runtime_seconds", false, [](const RunStats& s) { return s.runtime_seconds; }},
    {"api_cost", false, [](const RunStats& s) { return s.api_cost; }},
    {"n_interactions", true, [](const RunStats& s) { return double(s.n_interactions); }},
    {"n_actions", true, [](const RunStats& s) { return double(s.n_actions); }},
    {"n_scripts", true, [](const RunStats& s) { return double(s.n_scripts); }},
    {"n_pipelines_explored", true, [](const RunStats& s) { return double(s.n_pipelines_explored); }},
    {"n_refinement_rounds", true, [](const RunStats& s) { return double(s.n_refinement_rounds); }},
    {"n_errors", true, [](const RunStats& s) { return double(s.n_errors); }},
    {"n_recovered", true, [](const RunStats& s) { return double(s.n_recovered); }},
};

std::string format_value(double v, bool integral) {
    char buf[64];
    if (integral)
        std::snprintf(buf, sizeof(buf), "%ld", std::lround(v));
    else
        std::snprintf(buf, sizeof(buf), "%.1f", v);
    return buf;
}

} // namespace

std::string export_tables(std::span<const RunStats> runs) {
    if (runs.empty())
        fail(Errc::empty_input, "need at least one run");
    std::ostringstream out;
    out << "field\tmean\tmin\tmax\tsummary\n";
    char buf[64];
    for (const Field& field : kFields) {
        double sum = 0, lo = 0, hi = 0;
        for (std::size_t i = 0; i < runs.size(); ++i) {
            double v = field.get(runs[i]);
            sum += v;
            lo = i == 0 ? v : std::min(lo, v);
            hi = i == 0 ? v : std::max(hi, v);
        }
        double mean = sum / static_cast<double>(runs.size());
        std::snprintf(buf, sizeof(buf), "%.1f", mean);
        std::string mean_s = buf;
        std::string lo_s = format_value(lo, field.integral);
        std::string hi_s = format_value(hi, field.integral);
        out << field.name << '\t' << mean_s << '\t' << lo_s << '\t' << hi_s << '\t' << mean_s
            << " (" << lo_s << "–" << hi_s << ")\n";
    }
    return out.str();
}

std::string render_error_breakdown_tsv(std::span<const TraceLedger* const> ledgers) {
    static const ErrorCategory kCategories[] = {
        ErrorCategory::tool_primitive_misuse,  ErrorCategory::codegen_execution,
        ErrorCategory::state_drift,            ErrorCategory::instruction_violation,
        ErrorCategory::scalability_resource,   ErrorCategory::hallucination_fabrication,
        ErrorCategory::file_path,              ErrorCategory::workflow_orchestration,
    };
    std::map<ErrorCategory, std::pair<long, long>> counts;
    for (const TraceLedger* ledger : ledgers) {
        for (const ErrorEvent& event : ledger->error_events()) {
            counts[event.category].first += 1;
            counts[event.category].second += event.recovered ? 1 : 0;
        }
    }
    std::ostringstream out;
    out << "category\terrors\trecovered\n";
    for (ErrorCategory category : kCategories) {
        auto [errors, recovered] = counts[category];
        out << error_category_to_string(category) << '\t' << errors << '\t' << recovered << '\n';
    }
    return out.str();
}

std::string render_run_stats_tsv(const RunStats& stats) {
    std::ostringstream out;
    out << "field\tvalue\n";
    out << "completed\t" << (stats.completed ? 1 : 0) << '\n';
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3f", stats.runtime_seconds);
    out << "runtime_seconds\t" << buf << '\n';
    std::snprintf(buf, sizeof(buf), "%.6f", stats.api_cost);
    out << "api_cost\t" << buf << '\n';
    out << "prompt_tokens\t" << stats.prompt_tokens << '\n';
    out << "completion_tokens\t" << stats.completion_tokens << '\n';
    out << "n_interactions\t" << stats.n_interactions << '\n';
    out << "n_actions\t" << stats.n_actions << '\n';
    out << "n_scripts\t" << stats.n_scripts << '\n';
    out << "n_pipelines_explored\t" << stats.n_pipelines_explored << '\n';
    out << "n_refinement_rounds\t" << stats.n_refinement_rounds << '\n';
    out << "n_errors\t" << stats.n_errors << '\n';
    out << "n_recovered\t" << stats.n_recovered << '\n';
    return out.str();
}

} // namespace nexus
