#pragma once

#include "nexus/action.hpp"
#include "nexus/clock.hpp"
#include "nexus/jit.hpp"
#include "nexus/policy.hpp"
#include "nexus/registry.hpp"
#include "nexus/sandbox.hpp"
#include "nexus/trace.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace nexus {

struct DatasetRef {
    std::string root_path; // workspace-relative
    std::vector<std::string> subject_ids;
    std::string labels_path;
};

struct Objective {
    std::string goal_text;
    DatasetRef dataset;
    std::vector<std::string> deliverable_spec; // e.g. pipeline, model, inference-script
};

struct Budget {
    long max_react_steps = 500;
    std::int64_t max_wall_clock_seconds = 12 * 3600;
    std::optional<double> max_cost;
};

enum class Ablation { full, single_agent, no_jit, no_code_centric, no_primitives };

Ablation ablation_from_string(const std::string& text);
const char* ablation_to_string(Ablation ablation);

enum class HaltReason { step_limit, time_limit, cost_limit, policy_failure, fatal };

const char* halt_reason_to_string(HaltReason reason);

struct BudgetVerdict {
    bool halt = false;
    HaltReason reason = HaltReason::step_limit;
    std::string detail;
};

/// Halts iff steps >= max_react_steps, elapsed >= max_wall_clock, or cost >=
/// max_cost (when configured). Thresholds are inclusive.
BudgetVerdict enforce_budget(long steps_taken, std::int64_t elapsed_ms, double cost,
                             const Budget& budget);

/// Convenience form over a ledger; elapsed is measured from the first step's
/// timestamp to the injected clock's now.
BudgetVerdict enforce_budget(const TraceLedger& ledger, const Budget& budget, Clock& clock);

/// Fixed role/action capability matrix, adjusted by the active ablation.
bool action_allowed(AgentRole role, ActionKind kind, Ablation ablation);

/// Default system-prompt template for each role (protocol rules: routing,
/// planning, array dispatch, verdict schema).
std::string default_role_prompt(AgentRole role);

struct Message {
    AgentRole from = AgentRole::supervisor;
    AgentRole to = AgentRole::supervisor;
    std::string body;
    long turn_index = 0;
};

struct DeliveryReceipt {
    long turn_index = 0;
    AgentRole delivered_to = AgentRole::supervisor;
};

/// Hub-and-spoke guard: every message has the supervisor on one end, and the
/// supervisor addresses at most one sub-agent per turn.
class Router {
public:
    void begin_supervisor_turn();
    /// Validates and accounts one message; throws RoutingViolation or
    /// FanoutViolation.
    DeliveryReceipt route(const Message& message);
    long turn_index() const { return turn_; }

private:
    long turn_ = 0;
    int dispatches_this_turn_ = 0;
};

struct EpisodeConfig {
    Budget budget;
    Ablation ablation = Ablation::full;
    std::filesystem::path workspace_root;
    std::string policy; // scripted script path, or "live"
    std::string selector = "lexical"; // or "model"
    std::uint64_t seed = 0;
    ExecLimits exec_limits;
};

EpisodeConfig load_episode_config(const std::filesystem::path& path);

struct EpisodeResult {
    bool completed = false;
    std::vector<DeliverableEntry> deliverables;
    std::optional<HaltReason> halt;
    std::string halt_detail;
};

/// Drives one episode: the supervisor dispatches, one sub-agent at a time runs
/// its inner ReAct loop, every (action, observation) pair lands in the ledger,
/// and budgets are enforced after every step.
class Episode {
public:
    Episode(Objective objective, const Registry& registry, PolicyBackend& policy, Budget budget,
            Ablation ablation, WorkspaceLayout workspace, Clock& clock, TraceLedger& ledger,
            const EpisodeConfig& config = {});

    EpisodeResult run();

private:
    struct AgentState {
        std::vector<ChatMessage> transcript;
        SelectionResult selection;
        bool has_selection = false;
        std::vector<TodoItem> todos;
    };

    ModelRequest build_request(AgentRole role);
    SelectionResult select_for(AgentRole role, const std::string& instruction);
    std::string apply_action(AgentRole role, const Action& action, bool& error,
                             AgentRole& next_agent, bool& finished);
    void append_step(AgentRole role, const Action& action, const std::string& observation,
                     const std::optional<Usage>& usage, bool error);
    std::string observation_tail(const std::filesystem::path& log_path) const;

    Objective objective_;
    const Registry& registry_;
    PolicyBackend& policy_;
    Budget budget_;
    Ablation ablation_;
    WorkspaceLayout workspace_;
    Clock& clock_;
    TraceLedger& ledger_;
    EpisodeConfig config_;

    std::map<AgentRole, AgentState> agents_;
    std::map<std::string, Program> programs_; // keyed by workspace-relative path
    Router router_;
    std::vector<ErrorRule> rules_;
    std::int64_t start_ms_ = 0;
    long steps_taken_ = 0;
    Usage pending_selection_usage_; // model-backed select_tools spend, folded into the step
    EpisodeResult result_;
};

/// One-call episode driver; writes the ledger to `workspace/trace.jsonl`
/// unless the ledger argument is provided by the caller.
EpisodeResult run_episode(const Objective& objective, const Registry& registry,
                          PolicyBackend& policy, const Budget& budget,
                          const EpisodeConfig& config, WorkspaceLayout workspace, Clock& clock,
                          TraceLedger& ledger);

Objective load_objective(const std::filesystem::path& path);

} // namespace nexus
