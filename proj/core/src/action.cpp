#include "nexus/action.hpp"

#include "nexus/error.hpp"

#include <nlohmann/json.hpp>

using nlohmann::json;

namespace nexus {

AgentRole agent_role_from_string(const std::string& text) {
    if (text == "supervisor")
        return AgentRole::supervisor;
    if (text == "data_awareness")
        return AgentRole::data_awareness;
    if (text == "quality_control")
        return AgentRole::quality_control;
    if (text == "processing")
        return AgentRole::processing;
    if (text == "downstream_analysis")
        return AgentRole::downstream_analysis;
    fail(Errc::parse_error, "unknown agent role '" + text + "'");
}

const char* agent_role_to_string(AgentRole role) {
    switch (role) {
    case AgentRole::supervisor: return "supervisor";
    case AgentRole::data_awareness: return "data_awareness";
    case AgentRole::quality_control: return "quality_control";
    case AgentRole::processing: return "processing";
    case AgentRole::downstream_analysis: return "downstream_analysis";
    }
    return "?";
}

ActionKind action_kind_from_string(const std::string& text) {
    if (text == "send_message")
        return ActionKind::send_message;
    if (text == "write_todos")
        return ActionKind::write_todos;
    if (text == "synthesize_program")
        return ActionKind::synthesize_program;
    if (text == "execute_program")
        return ActionKind::execute_program;
    if (text == "invoke_primitive")
        return ActionKind::invoke_primitive;
    if (text == "read_file")
        return ActionKind::read_file;
    if (text == "write_file")
        return ActionKind::write_file;
    if (text == "run_command")
        return ActionKind::run_command;
    if (text == "report_final")
        return ActionKind::report_final;
    if (text == "halt")
        return ActionKind::halt;
    fail(Errc::parse_error, "unknown action '" + text + "'");
}

const char* action_kind_to_string(ActionKind kind) {
    switch (kind) {
    case ActionKind::send_message: return "send_message";
    case ActionKind::write_todos: return "write_todos";
    case ActionKind::synthesize_program: return "synthesize_program";
    case ActionKind::execute_program: return "execute_program";
    case ActionKind::invoke_primitive: return "invoke_primitive";
    case ActionKind::read_file: return "read_file";
    case ActionKind::write_file: return "write_file";
    case ActionKind::run_command: return "run_command";
    case ActionKind::report_final: return "report_final";
    case ActionKind::halt: return "halt";
    }
    return "?";
}

Action parse_action(const std::string& text) {
    json record;
    auto brace = text.find('{');
    if (brace == std::string::npos)
        fail(Errc::parse_error, "no action object in policy output");
    try {
        record = json::parse(text.substr(brace));
    } catch (const json::exception& e) {
        fail(Errc::parse_error, std::string("bad action JSON: ") + e.what());
    }
    if (!record.is_object() || !record.contains("action"))
        fail(Errc::parse_error, "action object lacks an \"action\" key");

    Action action;
    try {
        action.kind = action_kind_from_string(record.at("action").get<std::string>());
        switch (action.kind) {
        case ActionKind::send_message:
            action.to = agent_role_from_string(record.at("to").get<std::string>());
            action.body = record.at("body").get<std::string>();
            break;
        case ActionKind::write_todos:
            for (const auto& item : record.at("items")) {
                TodoItem todo;
                if (item.is_string()) {
                    todo.text = item.get<std::string>();
                } else {
                    todo.text = item.at("text").get<std::string>();
                    if (item.contains("status"))
                        todo.done = item.at("status").get<std::string>() == "done";
                }
                action.todos.push_back(std::move(todo));
            }
            break;
        case ActionKind::synthesize_program:
            action.path = record.at("path").get<std::string>();
            action.source = record.at("source").get<std::string>();
            if (record.contains("declared_primitives")) {
                for (const auto& name : record.at("declared_primitives"))
                    action.declared_primitives.push_back(name.get<std::string>());
            }
            if (record.contains("entry_kind"))
                action.entry_kind = record.at("entry_kind").get<std::string>();
            if (record.contains("pipeline"))
                action.pipeline = record.at("pipeline").get<std::string>();
            break;
        case ActionKind::execute_program:
            action.path = record.at("path").get<std::string>();
            if (record.contains("job_array")) {
                const json& ja = record.at("job_array");
                JobArrayRequest request;
                request.subjects_file = ja.at("subjects_file").get<std::string>();
                if (ja.contains("per_subject_command"))
                    request.per_subject_command = ja.at("per_subject_command").get<std::string>();
                if (ja.contains("max_parallel"))
                    request.max_parallel = ja.at("max_parallel").get<int>();
                if (ja.contains("log_dir"))
                    request.log_dir = ja.at("log_dir").get<std::string>();
                action.job_array = request;
            }
            if (record.contains("refinement"))
                action.refinement = record.at("refinement").get<std::string>();
            break;
        case ActionKind::invoke_primitive:
            action.primitive = record.at("name").get<std::string>();
            if (record.contains("args")) {
                for (auto& [key, value] : record.at("args").items())
                    action.args[key] =
                        value.is_string() ? value.get<std::string>() : value.dump();
            }
            break;
        case ActionKind::read_file:
            action.path = record.at("path").get<std::string>();
            break;
        case ActionKind::write_file:
            action.path = record.at("path").get<std::string>();
            action.content = record.at("content").get<std::string>();
            break;
        case ActionKind::run_command:
            action.command = record.at("command").get<std::string>();
            break;
        case ActionKind::report_final:
            for (const auto& entry : record.at("manifest")) {
                DeliverableEntry deliverable;
                deliverable.kind = entry.at("kind").get<std::string>();
                deliverable.path = entry.at("path").get<std::string>();
                if (entry.contains("steps")) {
                    for (const auto& step : entry.at("steps"))
                        deliverable.provenance_steps.push_back(step.get<int>());
                }
                action.manifest.push_back(std::move(deliverable));
            }
            if (record.contains("body"))
                action.body = record.at("body").get<std::string>();
            break;
        case ActionKind::halt:
            action.halt_reason = record.value("reason", "");
            break;
        }
    } catch (const json::exception& e) {
        fail(Errc::parse_error, std::string("bad action fields: ") + e.what());
    }
    return action;
}

std::string action_to_json(const Action& action) {
    json record;
    record["action"] = action_kind_to_string(action.kind);
    switch (action.kind) {
    case ActionKind::send_message:
        record["to"] = agent_role_to_string(*action.to);
        record["body"] = action.body;
        break;
    case ActionKind::write_todos: {
        json items = json::array();
        for (const auto& todo : action.todos)
            items.push_back({{"text", todo.text}, {"status", todo.done ? "done" : "pending"}});
        record["items"] = items;
        break;
    }
    case ActionKind::synthesize_program:
        record["path"] = action.path;
        record["source"] = action.source;
        record["declared_primitives"] = action.declared_primitives;
        record["entry_kind"] = action.entry_kind;
        if (!action.pipeline.empty())
            record["pipeline"] = action.pipeline;
        break;
    case ActionKind::execute_program:
        record["path"] = action.path;
        if (action.job_array) {
            record["job_array"] = {{"subjects_file", action.job_array->subjects_file},
                                   {"per_subject_command", action.job_array->per_subject_command},
                                   {"max_parallel", action.job_array->max_parallel},
                                   {"log_dir", action.job_array->log_dir}};
        }
        if (!action.refinement.empty())
            record["refinement"] = action.refinement;
        break;
    case ActionKind::invoke_primitive:
        record["name"] = action.primitive;
        record["args"] = action.args;
        break;
    case ActionKind::read_file:
        record["path"] = action.path;
        break;
    case ActionKind::write_file:
        record["path"] = action.path;
        record["content"] = action.content;
        break;
    case ActionKind::run_command:
        record["command"] = action.command;
        break;
    case ActionKind::report_final: {
        json manifest = json::array();
        for (const auto& deliverable : action.manifest)
            manifest.push_back({{"kind", deliverable.kind},
                                {"path", deliverable.path},
                                {"steps", deliverable.provenance_steps}});
        record["manifest"] = manifest;
        if (!action.body.empty())
            record["body"] = action.body;
        break;
    }
    case ActionKind::halt:
        record["reason"] = action.halt_reason;
        break;
    }
    return record.dump(-1, ' ', false, json::error_handler_t::replace);
}

} // namespace nexus
