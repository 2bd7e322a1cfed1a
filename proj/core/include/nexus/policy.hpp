#pragma once

#include "nexus/action.hpp"
#include "nexus/trace.hpp"

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace nexus {

enum class DecisionPoint { select_tools, react_step, visual_judge };

DecisionPoint decision_point_from_string(const std::string& text);
const char* decision_point_to_string(DecisionPoint point);

struct ChatMessage {
    std::string role; // "system", "user", "assistant", "observation"
    std::string content;
};

struct ModelRequest {
    AgentRole agent = AgentRole::supervisor;
    DecisionPoint decision_point = DecisionPoint::react_step;
    std::string system_context; // includes any injected primitive schemas
    std::vector<ChatMessage> transcript;
};

struct ModelResponse {
    std::string content;
    Usage usage;
};

/// The decision source pi. Implementations must be safe to call from the QC
/// inspection worker pool (the scripted backend serializes internally).
class PolicyBackend {
public:
    virtual ~PolicyBackend() = default;
    virtual ModelResponse complete(const ModelRequest& request) = 0;
};

/// One canned response. A request matches when agent and decision point are
/// equal and `match` (when non-empty) occurs in the request text. `repeat`
/// keeps the entry active: n > 1 for n uses, 0 for unlimited.
struct ScriptEntry {
    AgentRole agent = AgentRole::supervisor;
    DecisionPoint decision_point = DecisionPoint::react_step;
    std::string match;
    std::string response;
    Usage usage;
    long repeat = 1;
};

/// Strictly sequential deterministic policy: each call must match the current
/// script entry, otherwise ScriptMismatch; a call past the end raises
/// ScriptExhausted.
class ScriptedPolicy final : public PolicyBackend {
public:
    explicit ScriptedPolicy(std::vector<ScriptEntry> entries);

    static std::unique_ptr<ScriptedPolicy> from_file(const std::filesystem::path& path);

    ModelResponse complete(const ModelRequest& request) override;

    std::size_t cursor() const { return cursor_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<ScriptEntry> entries_;
    std::size_t cursor_ = 0;
    long uses_of_current_ = 0;
    std::mutex mutex_;
};

std::vector<ScriptEntry> parse_script(const std::string& jsonl);
std::string render_script(const std::vector<ScriptEntry>& entries);

/// Provider-agnostic chat-completions adapter. Reads the endpoint from
/// NEXUS_MODEL_ENDPOINT and the bearer key from NEXUS_MODEL_KEY unless set
/// explicitly. Cost is derived from the per-token price pair.
class LivePolicy final : public PolicyBackend {
public:
    struct Options {
        std::string endpoint; // e.g. http://127.0.0.1:8089/v1/chat/completions
        std::string api_key;
        std::string model;
        double prompt_price_per_token = 0.0;
        double completion_price_per_token = 0.0;
        int timeout_seconds = 120;
    };

    explicit LivePolicy(Options options);

    /// Resolves endpoint/key from the environment.
    static LivePolicy from_env();

    ModelResponse complete(const ModelRequest& request) override;

private:
    Options options_;
};

/// Wraps any backend and records every exchange so the session replays
/// byte-identically through a ScriptedPolicy.
class RecordingPolicy final : public PolicyBackend {
public:
    RecordingPolicy(PolicyBackend& inner, std::filesystem::path script_path);
    ~RecordingPolicy();

    ModelResponse complete(const ModelRequest& request) override;

    /// Flushes the recorded script file.
    void finish();

private:
    PolicyBackend& inner_;
    std::filesystem::path script_path_;
    std::vector<ScriptEntry> recorded_;
    std::mutex mutex_;
    bool finished_ = false;
};

/// Component-wise usage totals over every step in the trace.
Usage accumulate_usage(const TraceLedger& ledger);

} // namespace nexus
