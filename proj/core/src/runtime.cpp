#include "nexus/runtime.hpp"

#include "nexus/error.hpp"
#include "nexus/util.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <set>
#include <sstream>

namespace fs = std::filesystem;
using nlohmann::json;

namespace nexus {

Ablation ablation_from_string(const std::string& text) {
    if (text == "full")
        return Ablation::full;
    if (text == "single_agent")
        return Ablation::single_agent;
    if (text == "no_jit")
        return Ablation::no_jit;
    if (text == "no_code_centric")
        return Ablation::no_code_centric;
    if (text == "no_primitives")
        return Ablation::no_primitives;
    fail(Errc::config_error, "unknown ablation '" + text + "'");
}

const char* ablation_to_string(Ablation ablation) {
    switch (ablation) {
    case Ablation::full: return "full";
    case Ablation::single_agent: return "single_agent";
    case Ablation::no_jit: return "no_jit";
    case Ablation::no_code_centric: return "no_code_centric";
    case Ablation::no_primitives: return "no_primitives";
    }
    return "?";
}

const char* halt_reason_to_string(HaltReason reason) {
    switch (reason) {
    case HaltReason::step_limit: return "StepLimit";
    case HaltReason::time_limit: return "TimeLimit";
    case HaltReason::cost_limit: return "CostLimit";
    case HaltReason::policy_failure: return "PolicyFailure";
    case HaltReason::fatal: return "Fatal";
    }
    return "?";
}

BudgetVerdict enforce_budget(long steps_taken, std::int64_t elapsed_ms, double cost,
                             const Budget& budget) {
    BudgetVerdict verdict;
    if (steps_taken >= budget.max_react_steps) {
        verdict.halt = true;
        verdict.reason = HaltReason::step_limit;
        verdict.detail = "step limit reached: " + std::to_string(steps_taken) + " >= " +
                         std::to_string(budget.max_react_steps);
        return verdict;
    }
    if (elapsed_ms >= budget.max_wall_clock_seconds * 1000) {
        verdict.halt = true;
        verdict.reason = HaltReason::time_limit;
        verdict.detail = "wall-clock budget exceeded: " + std::to_string(elapsed_ms / 1000) +
                         "s >= " + std::to_string(budget.max_wall_clock_seconds) + "s";
        return verdict;
    }
    if (budget.max_cost && cost >= *budget.max_cost) {
        verdict.halt = true;
        verdict.reason = HaltReason::cost_limit;
        verdict.detail = "cost budget exceeded";
        return verdict;
    }
    return verdict;
}

BudgetVerdict enforce_budget(const TraceLedger& ledger, const Budget& budget, Clock& clock) {
    long steps = 0;
    double cost = 0;
    std::int64_t first_ts = 0;
    bool first = true;
    for (const TraceStep& step : ledger.steps()) {
        if (first) {
            first_ts = step.timestamp_ms;
            first = false;
        }
        ++steps;
        if (step.usage)
            cost += step.usage->cost;
    }
    std::int64_t elapsed = ledger.steps().empty() ? 0 : clock.now_unix_ms() - first_ts;
    return enforce_budget(steps, elapsed, cost, budget);
}

bool action_allowed(AgentRole role, ActionKind kind, Ablation ablation) {
    if (kind == ActionKind::halt)
        return false; // runtime-only record

    if (ablation == Ablation::single_agent) {
        if (role != AgentRole::supervisor)
            return false;
        if (kind == ActionKind::send_message)
            return false; // nobody to talk to
    } else {
        switch (role) {
        case AgentRole::supervisor:
            if (kind != ActionKind::send_message && kind != ActionKind::write_todos &&
                kind != ActionKind::read_file && kind != ActionKind::report_final)
                return false;
            break;
        case AgentRole::data_awareness:
            if (kind != ActionKind::send_message && kind != ActionKind::write_todos &&
                kind != ActionKind::read_file && kind != ActionKind::run_command)
                return false;
            break;
        case AgentRole::quality_control:
        case AgentRole::processing:
        case AgentRole::downstream_analysis:
            if (kind == ActionKind::report_final)
                return false;
            break;
        }
    }

    if (ablation == Ablation::no_code_centric &&
        (kind == ActionKind::synthesize_program || kind == ActionKind::execute_program))
        return false; // flat tool calling only
    if (ablation == Ablation::no_primitives && kind == ActionKind::invoke_primitive)
        return false; // primitive layer removed
    return true;
}

std::string default_role_prompt(AgentRole role) {
    switch (role) {
    case AgentRole::supervisor:
        return "You are the supervisor of a multi-specialist imaging-analysis team "
               "(data_awareness, quality_control, processing, downstream_analysis). "
               "Specialists talk only to you, never to each other; dispatch to exactly one "
               "specialist per turn with send_message and relay file locations between them "
               "in full. All artifacts stay inside the episode workspace. Finish with "
               "report_final listing every required deliverable.";
    case AgentRole::data_awareness:
        return "You profile datasets for the supervisor: directory structure, subject lists, "
               "labels, metadata. Summarize instead of dumping raw listings, and report back "
               "with send_message.";
    case AgentRole::quality_control:
        return "You run quality control as instructed. Plan with write_todos first. For large "
               "cohorts compute step-specific metrics, screen for outliers, visually inspect "
               "only the flagged subjects, then aggregate per-step verdicts into subject "
               "PASS/FAIL with concise reasons; small samples (<10 subjects) go straight to "
               "visual inspection. Visual verdicts use "
               "{\"verdict\": \"ACCEPTABLE\"|\"REJECTED\", \"reject_reason\": ...}. Pools use "
               "max_workers=5. Report failing subjects and reasons via send_message.";
    case AgentRole::processing:
        return "You execute preprocessing as instructed. Write one subject-agnostic program "
               "with synthesize_program, trial it on a sampled subset, pause for QC "
               "confirmation before scaling, then dispatch per-subject job arrays "
               "(subjects.txt has one id per line; each subject logs to <log_dir>/<subject>.log; "
               "always wait for every job). Verify expected derivatives with a script, never "
               "by hand, and keep every output inside the workspace.";
    case AgentRole::downstream_analysis:
        return "You run downstream analysis and modeling on QC-validated derivatives. Print "
               "step-status lines as you go. Save trained models and an inference script under "
               "models/, then report what you built via send_message.";
    }
    return "";
}

void Router::begin_supervisor_turn() {
    ++turn_;
    dispatches_this_turn_ = 0;
}

DeliveryReceipt Router::route(const Message& message) {
    if (message.from != AgentRole::supervisor && message.to != AgentRole::supervisor)
        fail(Errc::routing_violation,
             std::string(agent_role_to_string(message.from)) + " -> " +
                 agent_role_to_string(message.to) + " bypasses the supervisor");
    if (message.from == AgentRole::supervisor && message.to != AgentRole::supervisor) {
        ++dispatches_this_turn_;
        if (dispatches_this_turn_ > 1)
            fail(Errc::fanout_violation,
                 "supervisor already dispatched a sub-agent this turn");
    }
    return DeliveryReceipt{turn_, message.to};
}

EpisodeConfig load_episode_config(const fs::path& path) {
    json record;
    try {
        record = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::config_error, path.string() + ": " + e.what());
    } catch (const Error& e) {
        fail(Errc::config_error, e.what());
    }
    EpisodeConfig config;
    try {
        if (record.contains("budget")) {
            const json& budget = record.at("budget");
            if (budget.contains("max_react_steps"))
                config.budget.max_react_steps = budget.at("max_react_steps").get<long>();
            if (budget.contains("max_wall_clock_seconds"))
                config.budget.max_wall_clock_seconds =
                    budget.at("max_wall_clock_seconds").get<std::int64_t>();
            if (budget.contains("max_cost") && !budget.at("max_cost").is_null())
                config.budget.max_cost = budget.at("max_cost").get<double>();
        }
        if (record.contains("ablation"))
            config.ablation = ablation_from_string(record.at("ablation").get<std::string>());
        if (record.contains("workspace_root"))
            config.workspace_root = record.at("workspace_root").get<std::string>();
        if (record.contains("policy"))
            config.policy = record.at("policy").get<std::string>();
        if (record.contains("selector"))
            config.selector = record.at("selector").get<std::string>();
        if (record.contains("seed"))
            config.seed = record.at("seed").get<std::uint64_t>();
        if (record.contains("exec")) {
            const json& exec = record.at("exec");
            if (exec.contains("wall_seconds"))
                config.exec_limits.wall_seconds = exec.at("wall_seconds").get<double>();
            if (exec.contains("output_bytes"))
                config.exec_limits.output_bytes = exec.at("output_bytes").get<std::size_t>();
        }
    } catch (const json::exception& e) {
        fail(Errc::config_error, path.string() + ": " + e.what());
    }
    return config;
}

Objective load_objective(const fs::path& path) {
    json record;
    try {
        record = json::parse(read_text_file(path));
    } catch (const json::exception& e) {
        fail(Errc::config_error, path.string() + ": " + e.what());
    } catch (const Error& e) {
        fail(Errc::config_error, e.what());
    }
    Objective objective;
    try {
        objective.goal_text = record.at("goal_text").get<std::string>();
        for (const auto& kind : record.at("deliverables"))
            objective.deliverable_spec.push_back(kind.get<std::string>());
        if (record.contains("dataset")) {
            const json& dataset = record.at("dataset");
            objective.dataset.root_path = dataset.value("root_path", "dataset");
            if (dataset.contains("subject_ids")) {
                for (const auto& id : dataset.at("subject_ids"))
                    objective.dataset.subject_ids.push_back(id.get<std::string>());
            }
            objective.dataset.labels_path = dataset.value("labels_path", "");
        }
    } catch (const json::exception& e) {
        fail(Errc::config_error, path.string() + ": " + e.what());
    }
    if (objective.goal_text.empty())
        fail(Errc::config_error, "objective goal_text is empty");
    if (objective.deliverable_spec.empty())
        fail(Errc::config_error, "objective lists no deliverables");
    return objective;
}

namespace {

Family family_for(AgentRole role) {
    switch (role) {
    case AgentRole::processing: return Family::processing;
    case AgentRole::quality_control: return Family::qc;
    case AgentRole::downstream_analysis: return Family::analysis;
    default: return Family::processing; // unused: callers filter first
    }
}

bool role_owns_primitives(AgentRole role) {
    return role == AgentRole::processing || role == AgentRole::quality_control ||
           role == AgentRole::downstream_analysis;
}

std::string render_selected(const std::vector<std::string>& names) {
    std::vector<std::string> sorted(names.begin(), names.end());
    std::sort(sorted.begin(), sorted.end());
    std::string out = "[";
    for (std::size_t i = 0; i < sorted.size(); ++i) {
        if (i)
            out += ",";
        out += sorted[i];
    }
    out += "]";
    return out;
}

constexpr std::size_t kObservationLimit = 4000;

} // namespace

Episode::Episode(Objective objective, const Registry& registry, PolicyBackend& policy,
                 Budget budget, Ablation ablation, WorkspaceLayout workspace, Clock& clock,
                 TraceLedger& ledger, const EpisodeConfig& config)
    : objective_(std::move(objective)), registry_(registry), policy_(policy), budget_(budget),
      ablation_(ablation), workspace_(std::move(workspace)), clock_(clock), ledger_(ledger),
      config_(config), rules_(default_error_rules()) {}

ModelRequest Episode::build_request(AgentRole role) {
    ModelRequest request;
    request.agent = role;
    request.decision_point = DecisionPoint::react_step;
    AgentState& state = agents_[role];
    request.system_context = default_role_prompt(role);
    if (state.has_selection && !state.selection.injected_context.empty()) {
        request.system_context += "\n\n# Available primitives\n";
        request.system_context += state.selection.injected_context;
    }
    request.transcript = state.transcript;
    return request;
}

SelectionResult Episode::select_for(AgentRole role, const std::string& instruction) {
    bool owns = role_owns_primitives(role) ||
                (ablation_ == Ablation::single_agent && role == AgentRole::supervisor);
    if (ablation_ == Ablation::no_primitives || !owns)
        return {};

    std::vector<PrimitiveCard> library;
    if (ablation_ == Ablation::single_agent)
        library = registry_.cards(); // the monolith owns every family
    else
        library = list_by_family(registry_, family_for(role));

    Registry scoped = Registry::from_cards(library);
    SelectionRequest request;
    request.instruction = instruction;
    request.index = compact_index(scoped);

    if (ablation_ == Ablation::no_jit) {
        // full-library injection: selection covers the whole index
        SelectionResult result;
        for (const auto& entry : request.index)
            result.selected_names.push_back(entry.name);
        result.rationale = "no_jit ablation injects the full index";
        result.injected_context = render_injection(result.selected_names, scoped);
        return result;
    }

    if (config_.selector == "model") {
        SelectPolicy model_policy = [&](const SelectionRequest& req) {
            ModelRequest mr;
            mr.agent = role;
            mr.decision_point = DecisionPoint::select_tools;
            mr.system_context =
                "Select the primitives this instruction needs. Reply with a JSON array of names.";
            std::string listing;
            for (const auto& entry : req.index)
                listing += render_index_entry(entry);
            mr.transcript.push_back({"user", req.instruction + "\n\n# Index\n" + listing});
            ModelResponse response = policy_.complete(mr);
            pending_selection_usage_ += response.usage;
            json names;
            try {
                auto bracket = response.content.find('[');
                names = json::parse(bracket == std::string::npos ? response.content
                                                                 : response.content.substr(bracket));
            } catch (const json::exception& e) {
                fail(Errc::policy_failure, std::string("selector output is not JSON: ") + e.what());
            }
            std::vector<std::string> out;
            for (const auto& name : names)
                out.push_back(name.get<std::string>());
            return out;
        };
        return select_tools(request, scoped, &model_policy);
    }
    return select_tools(request, scoped);
}

void Episode::append_step(AgentRole role, const Action& action, const std::string& observation,
                          const std::optional<Usage>& usage, bool error) {
    TraceStep step;
    step.index = ledger_.last_index() + 1;
    step.agent = role;
    step.action_json = action_to_json(action);
    std::string trimmed = observation;
    if (trimmed.size() > kObservationLimit)
        trimmed = trimmed.substr(0, kObservationLimit) + "\n[observation truncated]";
    step.observation = trimmed;
    step.usage = usage;
    step.timestamp_ms = clock_.now_unix_ms();
    if (error) {
        ErrorMark mark;
        ClassifyFallback fallback = [](const std::string&) {
            return ErrorCategory::workflow_orchestration;
        };
        mark.category = classify_error(trimmed, rules_, &fallback);
        mark.note = trimmed.substr(0, 160);
        step.error = mark;
    }
    ledger_.append(std::move(step));
}

std::string Episode::observation_tail(const fs::path& log_path) const {
    std::error_code ec;
    if (!fs::exists(log_path, ec))
        return "";
    std::string text = read_text_file(log_path);
    constexpr std::size_t kTail = 2000;
    if (text.size() > kTail)
        return "...\n" + text.substr(text.size() - kTail);
    return text;
}

std::string Episode::apply_action(AgentRole role, const Action& action, bool& error,
                                  AgentRole& next_agent, bool& finished) {
    error = false;
    finished = false;
    next_agent = role;
    AgentState& state = agents_[role];

    switch (action.kind) {
    case ActionKind::send_message: {
        Message message{role, *action.to, action.body, router_.turn_index()};
        try {
            router_.route(message);
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
        if (role == AgentRole::supervisor && *action.to != AgentRole::supervisor) {
            // dispatch: JIT-select for the target, then hand control over
            AgentState& target = agents_[*action.to];
            std::string injected = "[]";
            try {
                target.selection = select_for(*action.to, action.body);
                target.has_selection = true;
                injected = render_selected(target.selection.selected_names);
            } catch (const Error& e) {
                error = true;
                return e.what();
            }
            target.transcript.push_back({"user", action.body});
            next_agent = *action.to;
            return std::string("delivered to ") + agent_role_to_string(*action.to) +
                   "; injected=" + injected;
        }
        if (role != AgentRole::supervisor) {
            // reply ends the sub-agent's turn
            agents_[AgentRole::supervisor].transcript.push_back(
                {"user", std::string(agent_role_to_string(role)) + ": " + action.body});
            next_agent = AgentRole::supervisor;
            return "delivered to supervisor";
        }
        state.transcript.push_back({"assistant", action.body});
        return "delivered to supervisor";
    }

    case ActionKind::write_todos: {
        // statuses only move pending -> done
        for (const auto& old_item : state.todos) {
            if (!old_item.done)
                continue;
            for (const auto& new_item : action.todos) {
                if (new_item.text == old_item.text && !new_item.done) {
                    error = true;
                    return "InstructionViolation: todo '" + old_item.text +
                           "' cannot move back to pending";
                }
            }
        }
        state.todos = action.todos;
        long done = std::count_if(action.todos.begin(), action.todos.end(),
                                  [](const TodoItem& item) { return item.done; });
        return "todo plan: " + std::to_string(action.todos.size()) + " items, " +
               std::to_string(done) + " done";
    }

    case ActionKind::synthesize_program: {
        Program program;
        program.source = action.source;
        program.declared_primitives.insert(action.declared_primitives.begin(),
                                           action.declared_primitives.end());
        program.entry_kind = action.entry_kind == "per_subject" ? Program::EntryKind::per_subject
                                                                : Program::EntryKind::single_run;
        program.pipeline_label = action.pipeline;
        if (ablation_ == Ablation::no_primitives && !program.declared_primitives.empty()) {
            error = true;
            return "UndeclaredPrimitive: primitive layer is disabled, program may not declare " +
                   *program.declared_primitives.begin();
        }
        try {
            SelectionResult empty;
            program = validate_program(std::move(program),
                                       state.has_selection ? state.selection : empty);
            fs::path script = workspace_.resolve(action.path);
            write_text_file_atomic(script, program.source);
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
        programs_[action.path] = program;
        return "program written to " + action.path + " (" +
               std::to_string(action.source.size()) + " bytes)";
    }

    case ActionKind::execute_program: {
        auto it = programs_.find(action.path);
        if (it == programs_.end()) {
            error = true;
            return "FilePathError: no synthesized program at " + action.path +
                   " (path does not exist)";
        }
        if (action.job_array) {
            JobArraySpec spec;
            try {
                spec.subjects_file = workspace_.resolve(action.job_array->subjects_file);
                spec.log_dir = workspace_.resolve(action.job_array->log_dir);
            } catch (const Error& e) {
                error = true;
                return e.what();
            }
            spec.max_parallel = action.job_array->max_parallel;
            spec.job_name = fs::path(action.path).stem().string();
            spec.per_subject_command = action.job_array->per_subject_command.empty()
                                           ? "sh " + action.path + " {subject}"
                                           : action.job_array->per_subject_command;
            try {
                JobArrayResult array =
                    dispatch_job_array(spec, workspace_, Executor::local_pool, config_.exec_limits);
                long failed = std::count_if(
                    array.records.begin(), array.records.end(),
                    [](const ExecutionRecord& r) { return r.exit_status != 0; });
                std::string obs = "array of " + std::to_string(array.records.size()) + " jobs: " +
                                  std::to_string(array.records.size() - failed) + " ok, " +
                                  std::to_string(failed) + " failed; logs in " +
                                  action.job_array->log_dir;
                if (failed > 0) {
                    error = true;
                    obs += "; non-zero exit status recorded";
                }
                return obs;
            } catch (const Error& e) {
                error = true;
                return e.what();
            }
        }
        try {
            ExecutionRecord record = execute_program(it->second, workspace_, config_.exec_limits,
                                                     fs::path(action.path).filename().string());
            std::string obs = "exit " + std::to_string(record.exit_status) + "; log:\n" +
                              observation_tail(record.stdout_log);
            if (!record.workspace_violations.empty()) {
                error = true;
                obs += "\nWorkspaceViolation: path outside the workspace: " +
                       record.workspace_violations.front();
            } else if (record.exit_status != 0) {
                error = true;
                obs += "\nnon-zero exit status " + std::to_string(record.exit_status);
            }
            return obs;
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
    }

    case ActionKind::invoke_primitive: {
        const PrimitiveCard* card = registry_.find(action.primitive);
        if (!card) {
            error = true;
            return "ToolPrimitiveMisuse: unknown primitive '" + action.primitive + "'";
        }
        if (state.has_selection) {
            const auto& names = state.selection.selected_names;
            if (std::find(names.begin(), names.end(), action.primitive) == names.end()) {
                error = true;
                return "ToolPrimitiveMisuse: primitive misuse, '" + action.primitive +
                       "' was not selected for this instruction";
            }
        }
        if (card->command_template.empty()) {
            error = true;
            return "ToolPrimitiveMisuse: primitive '" + action.primitive +
                   "' has no command binding";
        }
        std::string command = render_template(card->command_template, action.args);
        fs::path log_path = workspace_.logs_dir() /
                            (action.primitive + "_" + std::to_string(ledger_.last_index() + 1) +
                             ".log");
        try {
            ExecutionRecord record =
                run_command(command, workspace_, config_.exec_limits, log_path);
            std::string obs = "exit " + std::to_string(record.exit_status) + "; log:\n" +
                              observation_tail(record.stdout_log);
            if (record.exit_status != 0) {
                error = true;
                obs += "\nnon-zero exit status " + std::to_string(record.exit_status);
            }
            return obs;
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
    }

    case ActionKind::read_file: {
        try {
            fs::path target = workspace_.resolve(action.path);
            if (!fs::exists(target)) {
                error = true;
                return "FilePathError: " + action.path + " path does not exist";
            }
            std::string content = read_text_file(target);
            return content;
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
    }

    case ActionKind::write_file: {
        try {
            fs::path target = workspace_.resolve(action.path);
            write_text_file_atomic(target, action.content);
            return "wrote " + std::to_string(action.content.size()) + " bytes to " + action.path;
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
    }

    case ActionKind::run_command: {
        std::vector<std::string> violations =
            scan_workspace_violations(action.command, workspace_);
        if (!violations.empty()) {
            error = true;
            return "WorkspaceViolation: path outside the workspace: " + violations.front();
        }
        fs::path log_path =
            workspace_.logs_dir() / ("cmd_" + std::to_string(ledger_.last_index() + 1) + ".log");
        try {
            ExecutionRecord record =
                run_command(action.command, workspace_, config_.exec_limits, log_path);
            std::string obs = "exit " + std::to_string(record.exit_status) + "; log:\n" +
                              observation_tail(record.stdout_log);
            if (record.exit_status != 0) {
                error = true;
                obs += "\nnon-zero exit status " + std::to_string(record.exit_status);
            }
            return obs;
        } catch (const Error& e) {
            error = true;
            return e.what();
        }
    }

    case ActionKind::report_final: {
        std::set<std::string> provided;
        for (const auto& entry : action.manifest)
            provided.insert(entry.kind);
        for (const auto& kind : objective_.deliverable_spec) {
            if (!provided.count(kind)) {
                error = true;
                return "missing deliverable kind '" + kind + "'";
            }
        }
        for (const auto& entry : action.manifest) {
            fs::path target;
            try {
                target = workspace_.resolve(entry.path);
            } catch (const Error& e) {
                error = true;
                return e.what();
            }
            if (!fs::exists(target)) {
                error = true;
                return "FilePathError: deliverable path does not exist: " + entry.path;
            }
        }
        result_.completed = true;
        result_.deliverables.clear();
        for (const auto& entry : action.manifest) {
            DeliverableEntry deliverable = entry;
            if (deliverable.provenance_steps.empty())
                deliverable.provenance_steps.push_back(ledger_.last_index() + 1);
            result_.deliverables.push_back(std::move(deliverable));
        }
        finished = true;
        std::string obs = "episode completed; deliverables:";
        for (const auto& entry : result_.deliverables)
            obs += " " + entry.kind + "=" + entry.path;
        return obs;
    }

    case ActionKind::halt:
        error = true;
        return "halt is a runtime record, not a policy action";
    }
    error = true;
    return "unhandled action";
}

EpisodeResult Episode::run() {
    if (objective_.goal_text.empty())
        fail(Errc::config_error, "objective goal_text is empty");
    if (objective_.deliverable_spec.empty())
        fail(Errc::config_error, "objective lists no deliverables");
    if (!objective_.dataset.root_path.empty() &&
        !fs::exists(workspace_.root / objective_.dataset.root_path))
        fail(Errc::config_error,
             "dataset root '" + objective_.dataset.root_path + "' does not exist at episode start");
    std::set<std::string> unique_ids(objective_.dataset.subject_ids.begin(),
                                     objective_.dataset.subject_ids.end());
    if (unique_ids.size() != objective_.dataset.subject_ids.size())
        fail(Errc::config_error, "dataset subject ids are not unique");

    start_ms_ = clock_.now_unix_ms();
    router_.begin_supervisor_turn();

    AgentState& supervisor = agents_[AgentRole::supervisor];
    std::string brief = "Objective: " + objective_.goal_text;
    brief += "\nDataset root: " + objective_.dataset.root_path;
    if (!objective_.dataset.subject_ids.empty())
        brief += " (" + std::to_string(objective_.dataset.subject_ids.size()) + " subjects)";
    brief += "\nRequired deliverables:";
    for (const auto& kind : objective_.deliverable_spec)
        brief += " " + kind;
    supervisor.transcript.push_back({"user", brief});

    if (ablation_ == Ablation::single_agent) {
        try {
            supervisor.selection = select_for(AgentRole::supervisor, objective_.goal_text);
            supervisor.has_selection = true;
        } catch (const Error&) {
            // selection failure surfaces on first primitive use instead
        }
    }

    AgentRole current = AgentRole::supervisor;
    for (;;) {
        ModelRequest request = build_request(current);
        ModelResponse response;
        try {
            response = policy_.complete(request);
        } catch (const Error& e) {
            Action halt;
            halt.kind = ActionKind::halt;
            halt.halt_reason = halt_reason_to_string(HaltReason::policy_failure);
            append_step(current, halt, e.what(), std::nullopt, false);
            ledger_.close();
            result_.halt = HaltReason::policy_failure;
            result_.halt_detail = e.what();
            return result_;
        }

        bool error = false;
        bool finished = false;
        AgentRole next_agent = current;
        std::string observation;
        Action action;
        bool parsed = true;
        try {
            action = parse_action(response.content);
        } catch (const Error& e) {
            parsed = false;
            action.kind = ActionKind::run_command;
            action.command = "";
            observation = std::string("ToolPrimitiveMisuse: unparsable action: ") + e.what();
            error = true;
        }
        if (parsed) {
            if (!action_allowed(current, action.kind, ablation_)) {
                error = true;
                observation = std::string("DisallowedAction: ") +
                              agent_role_to_string(current) + " may not " +
                              action_kind_to_string(action.kind) + " under " +
                              ablation_to_string(ablation_) + " config";
            } else {
                observation = apply_action(current, action, error, next_agent, finished);
            }
        }

        agents_[current].transcript.push_back({"assistant", response.content});
        agents_[current].transcript.push_back({"observation", observation});
        Usage step_usage = response.usage;
        step_usage += pending_selection_usage_;
        pending_selection_usage_ = {};
        append_step(current, action, observation, step_usage, error);
        ++steps_taken_;

        if (finished) {
            ledger_.close();
            return result_;
        }

        Usage total = accumulate_usage(ledger_);
        std::int64_t last_ts = ledger_.steps().back().timestamp_ms;
        BudgetVerdict verdict = enforce_budget(steps_taken_, last_ts - start_ms_, total.cost,
                                               budget_);
        if (verdict.halt) {
            Action halt;
            halt.kind = ActionKind::halt;
            halt.halt_reason = halt_reason_to_string(verdict.reason);
            TraceStep step;
            step.index = ledger_.last_index() + 1;
            step.agent = current;
            step.action_json = action_to_json(halt);
            step.observation = verdict.detail;
            step.timestamp_ms = last_ts;
            ErrorMark mark;
            mark.category = ErrorCategory::scalability_resource;
            mark.note = verdict.detail;
            step.error = mark;
            ledger_.append(std::move(step));
            ledger_.close();
            result_.halt = verdict.reason;
            result_.halt_detail = verdict.detail;
            return result_;
        }

        if (next_agent != current) {
            if (next_agent == AgentRole::supervisor)
                router_.begin_supervisor_turn();
            current = next_agent;
        }
    }
}

EpisodeResult run_episode(const Objective& objective, const Registry& registry,
                          PolicyBackend& policy, const Budget& budget,
                          const EpisodeConfig& config, WorkspaceLayout workspace, Clock& clock,
                          TraceLedger& ledger) {
    Episode episode(objective, registry, policy, budget, config.ablation, std::move(workspace),
                    clock, ledger, config);
    return episode.run();
}

} // namespace nexus
