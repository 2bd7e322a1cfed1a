#pragma once

#include <stdexcept>
#include <string>

namespace nexus {

/// Every failure surfaced by the library carries one of these codes so that
/// callers (and tests) can branch on the condition rather than on message text.
enum class Errc {
    // registry
    missing_field,
    invalid_name,
    empty_schema,
    duplicate_name,
    parse_error,
    not_found,

    // jit selection
    policy_failure,
    unknown_name,

    // runtime
    budget_exhausted,
    routing_violation,
    fanout_violation,
    disallowed_action,
    workspace_violation,

    // policy adapter
    script_exhausted,
    script_mismatch,
    transport_error,
    io_failure,

    // sandbox
    undeclared_primitive,
    empty_program,
    timeout,
    output_overflow,
    spawn_failure,
    executor_unavailable,
    subjects_file_missing,
    sample_too_large,

    // qc
    dim_mismatch,
    both_empty,
    degenerate_entropy,
    zero_variance,
    label_absent,
    no_subject_column,
    too_few_values,
    malformed_judge_output,
    turn_limit_without_verdict,
    no_steps,

    // agreement
    length_mismatch,
    empty_input,

    // trace ledger
    index_gap,
    immutability_violation,
    unclassifiable,
    ledger_open,

    // configuration / cli
    config_error,
};

const char* errc_name(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(errc_name(code)) + ": " + message), code_(code) {}

    Errc code() const { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
    throw Error(code, message);
}

} // namespace nexus
