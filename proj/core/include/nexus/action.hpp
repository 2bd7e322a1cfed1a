#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace nexus {

/// The roles in an episode. Exactly one supervisor orchestrates; the others
/// act only when dispatched.
enum class AgentRole { supervisor, data_awareness, quality_control, processing, downstream_analysis };

AgentRole agent_role_from_string(const std::string& text);
const char* agent_role_to_string(AgentRole role);

/// Everything an agent can do in one ReAct step. `halt` is appended by the
/// runtime itself when a budget trips, never emitted by a policy.
enum class ActionKind {
    send_message,
    write_todos,
    synthesize_program,
    execute_program,
    invoke_primitive,
    read_file,
    write_file,
    run_command,
    report_final,
    halt,
};

ActionKind action_kind_from_string(const std::string& text);
const char* action_kind_to_string(ActionKind kind);

struct TodoItem {
    std::string text;
    bool done = false;
};

struct DeliverableEntry {
    std::string kind;
    std::string path; // workspace-relative
    std::vector<int> provenance_steps;
};

struct JobArrayRequest {
    std::string subjects_file;
    std::string per_subject_command; // {subject} placeholder; defaults to "sh <path> {subject}"
    int max_parallel = 4;
    std::string log_dir = "logs";
};

/// Parsed policy action. Which fields are meaningful depends on `kind`; the
/// canonical JSON form is what lands in the trace ledger.
struct Action {
    ActionKind kind = ActionKind::run_command;

    // send_message
    std::optional<AgentRole> to;
    std::string body;

    // write_todos
    std::vector<TodoItem> todos;

    // synthesize_program / execute_program
    std::string path;   // workspace-relative script path
    std::string source; // program text (synthesize only)
    std::vector<std::string> declared_primitives;
    std::string entry_kind = "single_run"; // or "per_subject"
    std::string pipeline;                  // optional pipeline label
    std::string refinement;                // optional refinement-round label
    std::optional<JobArrayRequest> job_array;

    // invoke_primitive
    std::string primitive;
    std::map<std::string, std::string> args;

    // read_file / write_file
    std::string content;

    // run_command
    std::string command;

    // report_final
    std::vector<DeliverableEntry> manifest;

    // halt
    std::string halt_reason;
};

/// Parses the model's textual action (a JSON object with an "action" key).
/// Throws ParseError when the text is not a well-formed action.
Action parse_action(const std::string& text);

/// Canonical single-line JSON used for ledger storage and replay diffing.
std::string action_to_json(const Action& action);

} // namespace nexus
