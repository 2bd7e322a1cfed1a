#include "nexus/clock.hpp"
#include "nexus/error.hpp"
#include "nexus/policy.hpp"
#include "nexus/registry.hpp"
#include "nexus/runtime.hpp"
#include "nexus/trace.hpp"
#include "nexus/util.hpp"

#include "support/helpers.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

using namespace nexus;
using nlohmann::json;

namespace {

std::string act(const json& record) {
    return record.dump();
}

ScriptEntry entry(AgentRole agent, const json& action, const std::string& match = "") {
    ScriptEntry e;
    e.agent = agent;
    e.decision_point = DecisionPoint::react_step;
    e.match = match;
    e.response = act(action);
    e.usage = {100, 10, 0.001};
    return e;
}

struct EpisodeHarness {
    testing::TempDir tmp;
    WorkspaceLayout workspace;
    Registry registry;
    Objective objective;

    explicit EpisodeHarness(const std::string& tag)
        : tmp(tag), workspace(WorkspaceLayout::create(tmp.path() / "ws")),
          registry(load_card_dir(testing::source_dir() / "fixtures/demo/cards")) {
        objective.goal_text = "produce a model from the mock cohort";
        objective.dataset.root_path = "dataset";
        objective.deliverable_spec = {"model"};
        std::filesystem::create_directories(workspace.root / "dataset");
        write_text_file_atomic(workspace.root / "dataset/subjects.txt", "sub-01\nsub-02\n");
    }

    EpisodeResult run(std::vector<ScriptEntry> script, Ablation ablation = Ablation::full,
                      TraceLedger* out_ledger = nullptr, Budget budget = {}) {
        ScriptedPolicy policy(std::move(script));
        ManualClock clock(1700000000000, 1000);
        TraceLedger local;
        TraceLedger& ledger = out_ledger ? *out_ledger : local;
        EpisodeConfig config;
        config.ablation = ablation;
        Episode episode(objective, registry, policy, budget, ablation, workspace, clock, ledger,
                        config);
        return episode.run();
    }
};

} // namespace

TEST_CASE("enforce_budget thresholds are inclusive") {
    Budget budget; // 500 steps, 12 h

    SUBCASE("499 steps after one hour continues") {
        BudgetVerdict verdict = enforce_budget(499, 3600 * 1000, 0.0, budget);
        CHECK_FALSE(verdict.halt);
    }
    SUBCASE("500 steps halts with StepLimit") {
        BudgetVerdict verdict = enforce_budget(500, 3600 * 1000, 0.0, budget);
        CHECK(verdict.halt);
        CHECK(verdict.reason == HaltReason::step_limit);
    }
    SUBCASE("12h plus one second halts with TimeLimit") {
        BudgetVerdict verdict = enforce_budget(10, (12 * 3600 + 1) * 1000LL, 0.0, budget);
        CHECK(verdict.halt);
        CHECK(verdict.reason == HaltReason::time_limit);
    }
    SUBCASE("cost ceiling halts when configured") {
        budget.max_cost = 1.0;
        CHECK(enforce_budget(1, 1000, 0.5, budget).halt == false);
        BudgetVerdict verdict = enforce_budget(1, 1000, 1.0, budget);
        CHECK(verdict.halt);
        CHECK(verdict.reason == HaltReason::cost_limit);
    }
}

TEST_CASE("router enforces hub-and-spoke and single dispatch per turn") {
    Router router;
    router.begin_supervisor_turn();

    SUBCASE("supervisor to sub-agent is allowed") {
        CHECK_NOTHROW(router.route({AgentRole::supervisor, AgentRole::quality_control, "go", 1}));
    }
    SUBCASE("sub-agent to supervisor is allowed") {
        CHECK_NOTHROW(router.route({AgentRole::quality_control, AgentRole::supervisor, "do", 1}));
    }
    SUBCASE("sub-agent to sub-agent is a routing violation") {
        try {
            router.route({AgentRole::quality_control, AgentRole::processing, "psst", 1});
            FAIL("expected RoutingViolation");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::routing_violation);
        }
    }
    SUBCASE("second dispatch in one turn is a fanout violation") {
        router.route({AgentRole::supervisor, AgentRole::processing, "one", 1});
        try {
            router.route({AgentRole::supervisor, AgentRole::quality_control, "two", 1});
            FAIL("expected FanoutViolation");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::fanout_violation);
        }
        router.begin_supervisor_turn();
        CHECK_NOTHROW(router.route({AgentRole::supervisor, AgentRole::quality_control, "ok", 2}));
    }
}

TEST_CASE("capability matrix by role and ablation") {
    CHECK(action_allowed(AgentRole::processing, ActionKind::synthesize_program, Ablation::full));
    CHECK(action_allowed(AgentRole::supervisor, ActionKind::report_final, Ablation::full));
    CHECK_FALSE(action_allowed(AgentRole::data_awareness, ActionKind::execute_program,
                               Ablation::full));
    CHECK_FALSE(action_allowed(AgentRole::processing, ActionKind::report_final, Ablation::full));
    // flat tool calling: program synthesis is disabled
    CHECK_FALSE(action_allowed(AgentRole::processing, ActionKind::synthesize_program,
                               Ablation::no_code_centric));
    CHECK(action_allowed(AgentRole::processing, ActionKind::invoke_primitive,
                         Ablation::no_code_centric));
    // primitive removal: invoke_primitive is disabled
    CHECK_FALSE(action_allowed(AgentRole::processing, ActionKind::invoke_primitive,
                               Ablation::no_primitives));
    // single agent: only the supervisor acts, and has nobody to message
    CHECK_FALSE(action_allowed(AgentRole::processing, ActionKind::run_command,
                               Ablation::single_agent));
    CHECK(action_allowed(AgentRole::supervisor, ActionKind::synthesize_program,
                         Ablation::single_agent));
    CHECK_FALSE(action_allowed(AgentRole::supervisor, ActionKind::send_message,
                               Ablation::single_agent));
}

TEST_CASE("a sub-agent message to a sub-agent is recorded as a routing violation") {
    EpisodeHarness harness("routing");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "quality_control"}, {"body", "inspect this"}}),
        entry(AgentRole::quality_control,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "hey processing"}}),
        entry(AgentRole::quality_control,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "done"}}),
    };
    TraceLedger ledger;
    EpisodeResult result = harness.run(std::move(script), Ablation::full, &ledger);
    CHECK_FALSE(result.completed); // script exhausts afterwards
    REQUIRE(ledger.size() >= 2);
    const TraceStep& violation = ledger.steps()[1];
    CHECK(violation.error.has_value());
    CHECK(violation.observation.find("RoutingViolation") != std::string::npos);
    CHECK(violation.error->category == ErrorCategory::instruction_violation);
}

TEST_CASE("disallowed actions are flagged without ending the episode") {
    EpisodeHarness harness("disallowed");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "data_awareness"}, {"body", "profile it"}}),
        entry(AgentRole::data_awareness,
              {{"action", "execute_program"}, {"path", "scripts/x.sh"}}),
        entry(AgentRole::data_awareness,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "profiled"}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::full, &ledger);
    const TraceStep& flagged = ledger.steps()[1];
    CHECK(flagged.error.has_value());
    CHECK(flagged.observation.find("DisallowedAction") != std::string::npos);
    CHECK(flagged.error->category == ErrorCategory::tool_primitive_misuse);
}

TEST_CASE("flat tool-calling ablation rejects program synthesis") {
    EpisodeHarness harness("nocode");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "go"}}),
        entry(AgentRole::processing,
              {{"action", "synthesize_program"},
               {"path", "scripts/p.sh"},
               {"source", "echo hi"}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::no_code_centric, &ledger);
    const TraceStep& flagged = ledger.steps()[1];
    CHECK(flagged.error.has_value());
    CHECK(flagged.observation.find("DisallowedAction") != std::string::npos);
    CHECK(flagged.observation.find("no_code_centric") != std::string::npos);
}

TEST_CASE("no-primitives ablation rejects declared primitives") {
    EpisodeHarness harness("noprim");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "go"}}),
        entry(AgentRole::processing,
              {{"action", "synthesize_program"},
               {"path", "scripts/p.sh"},
               {"source", "echo hi"},
               {"declared_primitives", {"fsl_normalize_func_to_mni"}}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::no_primitives, &ledger);
    const TraceStep& flagged = ledger.steps()[1];
    CHECK(flagged.error.has_value());
    CHECK(flagged.observation.find("UndeclaredPrimitive") != std::string::npos);
}

TEST_CASE("single-agent episodes keep every step on the supervisor") {
    EpisodeHarness harness("single");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor, {{"action", "write_todos"}, {"items", {"plan the work"}}}),
        entry(AgentRole::supervisor,
              {{"action", "write_file"}, {"path", "models/model.txt"}, {"content", "weights"}}),
        entry(AgentRole::supervisor,
              {{"action", "report_final"},
               {"manifest", {{{"kind", "model"}, {"path", "models/model.txt"}}}}}),
    };
    TraceLedger ledger;
    EpisodeResult result = harness.run(std::move(script), Ablation::single_agent, &ledger);
    CHECK(result.completed);
    for (const TraceStep& step : ledger.steps())
        CHECK(step.agent == AgentRole::supervisor);
}

TEST_CASE("no-jit ablation injects the entire family index on dispatch") {
    EpisodeHarness harness("nojit");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "just one thing"}}),
        entry(AgentRole::processing,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "ok"}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::no_jit, &ledger);
    const TraceStep& dispatch = ledger.steps()[0];
    // the demo registry has two processing cards; both must be injected
    CHECK(dispatch.observation.find(
              "injected=[afni_normalize_fmri_to_mni,fsl_normalize_func_to_mni]") !=
          std::string::npos);
}

TEST_CASE("invoke_primitive renders the card template and runs it") {
    EpisodeHarness harness("invoke");
    std::vector<ScriptEntry> script = {
        // the instruction names the card verbatim, forcing it into the selection
        entry(AgentRole::supervisor,
              {{"action", "send_message"},
               {"to", "processing"},
               {"body", "use afni_normalize_fmri_to_mni on sub-01"}}),
        entry(AgentRole::processing,
              {{"action", "invoke_primitive"},
               {"name", "afni_normalize_fmri_to_mni"},
               {"args", {{"subject", "sub-01"}}}}),
        entry(AgentRole::processing,
              {{"action", "invoke_primitive"},
               {"name", "run_mriqc"}, // qc-family card, never in processing's selection
               {"args", {{"subject", "sub-01"}}}}),
        entry(AgentRole::processing,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "done"}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::full, &ledger);

    const TraceStep& ok = ledger.steps()[1];
    CHECK_FALSE(ok.error.has_value());
    CHECK(ok.observation.find("exit 0") != std::string::npos);
    CHECK(ok.observation.find("step afni_normalize sub-01 has completed") != std::string::npos);
    CHECK(std::filesystem::exists(harness.workspace.root /
                                  "derivatives/pipeline_b/sub-01/bold_mni.txt"));

    const TraceStep& misuse = ledger.steps()[2];
    CHECK(misuse.error.has_value());
    CHECK(misuse.observation.find("ToolPrimitiveMisuse") != std::string::npos);
    CHECK(misuse.error->category == ErrorCategory::tool_primitive_misuse);
}

TEST_CASE("a failing script is recorded and classified, then recovery is tracked") {
    EpisodeHarness harness("failscript");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "run the step"}}),
        entry(AgentRole::processing,
              {{"action", "synthesize_program"},
               {"path", "scripts/broken.sh"},
               {"source", "echo 'Traceback (most recent call last):'\nexit 1"}}),
        entry(AgentRole::processing, {{"action", "execute_program"}, {"path", "scripts/broken.sh"}}),
        entry(AgentRole::processing,
              {{"action", "synthesize_program"},
               {"path", "scripts/fixed.sh"},
               {"source", "echo 'step 01 has completed'"}}),
        entry(AgentRole::processing, {{"action", "execute_program"}, {"path", "scripts/fixed.sh"}}),
        entry(AgentRole::processing,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "recovered"}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::full, &ledger);

    const TraceStep& failure = ledger.steps()[2];
    CHECK(failure.error.has_value());
    CHECK(failure.error->category == ErrorCategory::codegen_execution);
    CHECK(failure.observation.find("exit 1") != std::string::npos);

    // the clean rerun of the same action kind marks the failure as recovered
    auto events = ledger.error_events();
    REQUIRE(events.size() == 1);
    CHECK(events[0].step_index == 3);
    CHECK(events[0].recovered);
}

TEST_CASE("todo statuses only move pending to done") {
    EpisodeHarness harness("todos");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "write_todos"},
               {"items", {{{"text", "step one"}, {"status", "done"}}}}}),
        entry(AgentRole::supervisor,
              {{"action", "write_todos"},
               {"items", {{{"text", "step one"}, {"status", "pending"}}}}}),
    };
    TraceLedger ledger;
    harness.run(std::move(script), Ablation::full, &ledger);
    CHECK_FALSE(ledger.steps()[0].error.has_value());
    CHECK(ledger.steps()[1].error.has_value());
    CHECK(ledger.steps()[1].observation.find("cannot move back to pending") != std::string::npos);
}

TEST_CASE("report_final validates deliverable kinds and paths") {
    EpisodeHarness harness("manifest");
    std::vector<ScriptEntry> script = {
        entry(AgentRole::supervisor,
              {{"action", "report_final"},
               {"manifest", {{{"kind", "model"}, {"path", "models/nope.txt"}}}}}),
        entry(AgentRole::supervisor,
              {{"action", "send_message"}, {"to", "processing"}, {"body", "write the model"}}),
        entry(AgentRole::processing,
              {{"action", "write_file"}, {"path", "models/model.txt"}, {"content", "w"}}),
        entry(AgentRole::processing,
              {{"action", "send_message"}, {"to", "supervisor"}, {"body", "model written"}}),
        entry(AgentRole::supervisor,
              {{"action", "report_final"},
               {"manifest", {{{"kind", "model"}, {"path", "models/model.txt"}}}}}),
    };
    TraceLedger ledger;
    EpisodeResult result = harness.run(std::move(script), Ablation::full, &ledger);
    CHECK(result.completed);
    CHECK(ledger.steps()[0].error.has_value()); // missing path rejected first
    REQUIRE(result.deliverables.size() == 1);
    CHECK(result.deliverables[0].kind == "model");
    CHECK(result.deliverables[0].provenance_steps == std::vector<int>{5});
}

TEST_CASE("episode config file parses the documented keys") {
    testing::TempDir tmp("config");
    write_text_file_atomic(tmp.path() / "config.json", R"({
      "budget": {"max_react_steps": 123, "max_wall_clock_seconds": 456, "max_cost": 7.5},
      "ablation": "no_jit",
      "workspace_root": "ws",
      "policy": "script.jsonl",
      "selector": "model",
      "seed": 9,
      "exec": {"wall_seconds": 12.5, "output_bytes": 2048}
    })");
    EpisodeConfig config = load_episode_config(tmp.path() / "config.json");
    CHECK(config.budget.max_react_steps == 123);
    CHECK(config.budget.max_wall_clock_seconds == 456);
    CHECK(config.budget.max_cost == doctest::Approx(7.5));
    CHECK(config.ablation == Ablation::no_jit);
    CHECK(config.workspace_root == std::filesystem::path("ws"));
    CHECK(config.policy == "script.jsonl");
    CHECK(config.selector == "model");
    CHECK(config.seed == 9);
    CHECK(config.exec_limits.wall_seconds == doctest::Approx(12.5));
    CHECK(config.exec_limits.output_bytes == 2048);

    write_text_file_atomic(tmp.path() / "bad.json", R"({"ablation": "bogus"})");
    CHECK_THROWS_AS(load_episode_config(tmp.path() / "bad.json"), Error);
}

TEST_CASE("model-backed selection flows through the policy at select_tools") {
    EpisodeHarness harness("modelsel");
    std::vector<ScriptEntry> script;
    script.push_back(entry(AgentRole::supervisor,
                           {{"action", "send_message"},
                            {"to", "processing"},
                            {"body", "normalize the sample"}}));
    ScriptEntry selector;
    selector.agent = AgentRole::processing;
    selector.decision_point = DecisionPoint::select_tools;
    selector.response = R"(["afni_normalize_fmri_to_mni"])";
    selector.usage = {60, 6, 0.0005};
    script.push_back(selector);
    script.push_back(entry(AgentRole::processing,
                           {{"action", "send_message"}, {"to", "supervisor"}, {"body", "done"}}));

    ScriptedPolicy policy(std::move(script));
    ManualClock clock(1700000000000, 1000);
    TraceLedger ledger;
    EpisodeConfig config;
    config.selector = "model";
    Episode episode(harness.objective, harness.registry, policy, Budget{}, Ablation::full,
                    harness.workspace, clock, ledger, config);
    episode.run();
    CHECK(ledger.steps()[0].observation.find("injected=[afni_normalize_fmri_to_mni]") !=
          std::string::npos);
    // the selection call's token spend is folded into the dispatch step
    CHECK(ledger.steps()[0].usage->prompt_tokens == 160);
}

TEST_CASE("policy failure closes the ledger with a halt record") {
    EpisodeHarness harness("exhaust");
    TraceLedger ledger;
    EpisodeResult result = harness.run({}, Ablation::full, &ledger); // empty script
    CHECK_FALSE(result.completed);
    CHECK(result.halt == HaltReason::policy_failure);
    REQUIRE(ledger.size() == 1);
    CHECK(ledger.closed());
    CHECK(json::parse(ledger.steps()[0].action_json).at("action") == "halt");
}

TEST_CASE("trace-based budget enforcement reads steps, clock and cost") {
    TraceLedger ledger;
    TraceStep step;
    step.index = 1;
    step.agent = AgentRole::supervisor;
    Action todo;
    todo.kind = ActionKind::write_todos;
    step.action_json = action_to_json(todo);
    step.observation = "ok";
    step.timestamp_ms = 1000;
    ledger.append(std::move(step));

    Budget budget;
    budget.max_wall_clock_seconds = 10;
    ManualClock clock(12001, 0); // 11.001 s after the first step
    BudgetVerdict verdict = enforce_budget(ledger, budget, clock);
    CHECK(verdict.halt);
    CHECK(verdict.reason == HaltReason::time_limit);
}
