#include "nexus/error.hpp"

namespace nexus {

const char* errc_name(Errc code) {
    switch (code) {
    case Errc::missing_field: return "MissingField";
    case Errc::invalid_name: return "InvalidName";
    case Errc::empty_schema: return "EmptySchema";
    case Errc::duplicate_name: return "DuplicateName";
    case Errc::parse_error: return "ParseError";
    case Errc::not_found: return "NotFound";
    case Errc::policy_failure: return "PolicyFailure";
    case Errc::unknown_name: return "UnknownName";
    case Errc::budget_exhausted: return "BudgetExhausted";
    case Errc::routing_violation: return "RoutingViolation";
    case Errc::fanout_violation: return "FanoutViolation";
    case Errc::disallowed_action: return "DisallowedAction";
    case Errc::workspace_violation: return "WorkspaceViolation";
    case Errc::script_exhausted: return "ScriptExhausted";
    case Errc::script_mismatch: return "ScriptMismatch";
    case Errc::transport_error: return "TransportError";
    case Errc::io_failure: return "IOFailure";
    case Errc::undeclared_primitive: return "UndeclaredPrimitive";
    case Errc::empty_program: return "EmptyProgram";
    case Errc::timeout: return "Timeout";
    case Errc::output_overflow: return "OutputOverflow";
    case Errc::spawn_failure: return "SpawnFailure";
    case Errc::executor_unavailable: return "ExecutorUnavailable";
    case Errc::subjects_file_missing: return "SubjectsFileMissing";
    case Errc::sample_too_large: return "SampleTooLarge";
    case Errc::dim_mismatch: return "DimMismatch";
    case Errc::both_empty: return "BothEmpty";
    case Errc::degenerate_entropy: return "DegenerateEntropy";
    case Errc::zero_variance: return "ZeroVariance";
    case Errc::label_absent: return "LabelAbsent";
    case Errc::no_subject_column: return "NoSubjectColumn";
    case Errc::too_few_values: return "TooFewValues";
    case Errc::malformed_judge_output: return "MalformedJudgeOutput";
    case Errc::turn_limit_without_verdict: return "TurnLimitWithoutVerdict";
    case Errc::no_steps: return "NoSteps";
    case Errc::length_mismatch: return "LengthMismatch";
    case Errc::empty_input: return "Empty";
    case Errc::index_gap: return "IndexGap";
    case Errc::immutability_violation: return "ImmutabilityViolation";
    case Errc::unclassifiable: return "Unclassifiable";
    case Errc::ledger_open: return "LedgerOpen";
    case Errc::config_error: return "ConfigError";
    }
    return "UnknownError";
}

} // namespace nexus
