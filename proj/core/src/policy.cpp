#include "nexus/policy.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <cstdlib>
#include <sstream>

using nlohmann::json;

namespace nexus {

DecisionPoint decision_point_from_string(const std::string& text) {
    if (text == "select_tools")
        return DecisionPoint::select_tools;
    if (text == "react_step")
        return DecisionPoint::react_step;
    if (text == "visual_judge")
        return DecisionPoint::visual_judge;
    fail(Errc::parse_error, "unknown decision point '" + text + "'");
}

const char* decision_point_to_string(DecisionPoint point) {
    switch (point) {
    case DecisionPoint::select_tools: return "select_tools";
    case DecisionPoint::react_step: return "react_step";
    case DecisionPoint::visual_judge: return "visual_judge";
    }
    return "?";
}

namespace {

std::string request_haystack(const ModelRequest& request) {
    std::string text = request.system_context;
    for (const auto& message : request.transcript) {
        text += '\n';
        text += message.content;
    }
    return text;
}

std::string request_key(const ModelRequest& request) {
    return std::string(agent_role_to_string(request.agent)) + "/" +
           decision_point_to_string(request.decision_point);
}

} // namespace

ScriptedPolicy::ScriptedPolicy(std::vector<ScriptEntry> entries) : entries_(std::move(entries)) {}

std::unique_ptr<ScriptedPolicy> ScriptedPolicy::from_file(const std::filesystem::path& path) {
    return std::make_unique<ScriptedPolicy>(parse_script(read_text_file(path)));
}

ModelResponse ScriptedPolicy::complete(const ModelRequest& request) {
    std::lock_guard lock(mutex_);
    if (request.decision_point == DecisionPoint::react_step && request.transcript.empty())
        fail(Errc::policy_failure, "react_step request with empty transcript");
    if (cursor_ >= entries_.size())
        fail(Errc::script_exhausted, "script has no entry for " + request_key(request));

    const ScriptEntry& entry = entries_[cursor_];
    bool matches = entry.agent == request.agent &&
                   entry.decision_point == request.decision_point &&
                   (entry.match.empty() ||
                    request_haystack(request).find(entry.match) != std::string::npos);
    if (!matches) {
        std::string expected = std::string(agent_role_to_string(entry.agent)) + "/" +
                               decision_point_to_string(entry.decision_point) +
                               (entry.match.empty() ? "" : " matching \"" + entry.match + "\"");
        fail(Errc::script_mismatch,
             "expected " + expected + ", got " + request_key(request));
    }

    ModelResponse response;
    response.content = entry.response;
    response.usage = entry.usage;

    ++uses_of_current_;
    if (entry.repeat != 0 && uses_of_current_ >= entry.repeat) {
        ++cursor_;
        uses_of_current_ = 0;
    }
    return response;
}

std::vector<ScriptEntry> parse_script(const std::string& jsonl) {
    std::vector<ScriptEntry> entries;
    std::istringstream in(jsonl);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line[0] == '#')
            continue;
        json record;
        try {
            record = json::parse(line);
        } catch (const json::exception& e) {
            fail(Errc::parse_error, "script line " + std::to_string(line_no) + ": " + e.what());
        }
        ScriptEntry entry;
        try {
            entry.agent = agent_role_from_string(record.at("agent").get<std::string>());
            entry.decision_point =
                decision_point_from_string(record.at("decision_point").get<std::string>());
            entry.match = record.value("match", "");
            if (record.at("response").is_string())
                entry.response = record.at("response").get<std::string>();
            else
                entry.response = record.at("response").dump();
            if (record.contains("usage") && !record.at("usage").is_null()) {
                entry.usage.prompt_tokens = record.at("usage").value("prompt_tokens", 0L);
                entry.usage.completion_tokens = record.at("usage").value("completion_tokens", 0L);
                entry.usage.cost = record.at("usage").value("cost", 0.0);
            }
            entry.repeat = record.value("repeat", 1L);
        } catch (const json::exception& e) {
            fail(Errc::parse_error, "script line " + std::to_string(line_no) + ": " + e.what());
        }
        entries.push_back(std::move(entry));
    }
    return entries;
}

std::string render_script(const std::vector<ScriptEntry>& entries) {
    std::ostringstream out;
    for (const auto& entry : entries) {
        json record;
        record["agent"] = agent_role_to_string(entry.agent);
        record["decision_point"] = decision_point_to_string(entry.decision_point);
        record["match"] = entry.match;
        record["response"] = entry.response;
        record["usage"] = {{"prompt_tokens", entry.usage.prompt_tokens},
                           {"completion_tokens", entry.usage.completion_tokens},
                           {"cost", entry.usage.cost}};
        if (entry.repeat != 1)
            record["repeat"] = entry.repeat;
        out << record.dump() << '\n';
    }
    return out.str();
}

LivePolicy::LivePolicy(Options options) : options_(std::move(options)) {
    if (options_.endpoint.empty())
        fail(Errc::config_error, "live policy needs an endpoint");
}

LivePolicy LivePolicy::from_env() {
    Options options;
    if (const char* endpoint = std::getenv("NEXUS_MODEL_ENDPOINT"))
        options.endpoint = endpoint;
    if (const char* key = std::getenv("NEXUS_MODEL_KEY"))
        options.api_key = key;
    return LivePolicy(std::move(options));
}

Usage accumulate_usage(const TraceLedger& ledger) {
    Usage total;
    for (const TraceStep& step : ledger.steps()) {
        if (step.usage)
            total += *step.usage;
    }
    return total;
}

RecordingPolicy::RecordingPolicy(PolicyBackend& inner, std::filesystem::path script_path)
    : inner_(inner), script_path_(std::move(script_path)) {}

RecordingPolicy::~RecordingPolicy() {
    try {
        finish();
    } catch (...) {
        // destructor must not throw; finish() explicitly to observe failures
    }
}

ModelResponse RecordingPolicy::complete(const ModelRequest& request) {
    ModelResponse response = inner_.complete(request);
    std::lock_guard lock(mutex_);
    ScriptEntry entry;
    entry.agent = request.agent;
    entry.decision_point = request.decision_point;
    entry.match = ""; // sequential replay needs no content key
    entry.response = response.content;
    entry.usage = response.usage;
    recorded_.push_back(std::move(entry));
    return response;
}

void RecordingPolicy::finish() {
    std::lock_guard lock(mutex_);
    if (finished_)
        return;
    write_text_file_atomic(script_path_, render_script(recorded_));
    finished_ = true;
}

} // namespace nexus
