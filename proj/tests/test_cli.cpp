#include "nexus/agreement.hpp"
#include "nexus/trace.hpp"
#include "nexus/util.hpp"
#include "nexus/voxel.hpp"

#include "support/helpers.hpp"

#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>

#ifndef NEXUS_CLI_PATH
#define NEXUS_CLI_PATH "nexus"
#endif

using namespace nexus;
using nlohmann::json;

namespace {

struct CliResult {
    int exit_code = -1;
    std::string output; // stdout + stderr
};

CliResult run_cli(const std::string& args, const std::filesystem::path& capture_dir) {
    std::filesystem::create_directories(capture_dir);
    auto capture = capture_dir / "cli_output.txt";
    std::string command =
        std::string(NEXUS_CLI_PATH) + " " + args + " > " + capture.string() + " 2>&1";
    int status = std::system(command.c_str());
    CliResult result;
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    result.output = read_text_file(capture);
    return result;
}

std::string demo_flags(const std::filesystem::path& out) {
    auto demo = testing::source_dir() / "fixtures/demo";
    return "run --objective " + (demo / "objective.json").string() + " --dataset " +
           (demo / "dataset").string() + " --cards " + (demo / "cards").string() +
           " --policy scripted --config " + (demo / "config.json").string() + " --out " +
           out.string() + " --clock manual:1700000000000:1000";
}

} // namespace

TEST_CASE("run completes the demo episode and writes the three outputs") {
    testing::TempDir tmp("cli_run");
    CliResult result = run_cli(demo_flags(tmp.path() / "out"), tmp.path());
    CHECK(result.exit_code == 0);
    CHECK(std::filesystem::exists(tmp.path() / "out/trace.jsonl"));
    CHECK(std::filesystem::exists(tmp.path() / "out/deliverables.json"));
    CHECK(std::filesystem::exists(tmp.path() / "out/run_stats.tsv"));

    json deliverables = json::parse(read_text_file(tmp.path() / "out/deliverables.json"));
    CHECK(deliverables.at("completed") == true);
    CHECK(deliverables.at("deliverables").size() == 3);

    std::string stats = read_text_file(tmp.path() / "out/run_stats.tsv");
    CHECK(stats.find("n_interactions\t18") != std::string::npos);
    CHECK(stats.find("n_scripts\t10") != std::string::npos);
    CHECK(stats.find("n_pipelines_explored\t2") != std::string::npos);
    CHECK(stats.find("n_errors\t0") != std::string::npos);

    SUBCASE("outputs are byte-identical across reruns") {
        std::string first = read_text_file(tmp.path() / "out/trace.jsonl");
        CliResult again = run_cli(demo_flags(tmp.path() / "out"), tmp.path());
        CHECK(again.exit_code == 0);
        CHECK(read_text_file(tmp.path() / "out/trace.jsonl") == first);
    }

    SUBCASE("a recorded session replays to the same trace") {
        std::string reference = read_text_file(tmp.path() / "out/trace.jsonl");
        auto session = tmp.path() / "session.jsonl";
        CliResult recorded = run_cli(demo_flags(tmp.path() / "out_rec") + " --record " +
                                         session.string(),
                                     tmp.path());
        CHECK(recorded.exit_code == 0);
        REQUIRE(std::filesystem::exists(session));

        CliResult replayed = run_cli(demo_flags(tmp.path() / "out_replay") + " --script " +
                                         session.string(),
                                     tmp.path());
        CHECK(replayed.exit_code == 0);
        CHECK(read_text_file(tmp.path() / "out_replay/trace.jsonl") == reference);
    }
}

TEST_CASE("run with a missing cards directory exits 2 and names the flag") {
    testing::TempDir tmp("cli_badcards");
    auto demo = testing::source_dir() / "fixtures/demo";
    std::string args = "run --objective " + (demo / "objective.json").string() + " --dataset " +
                       (demo / "dataset").string() + " --cards /nonexistent/cards" +
                       " --policy scripted --config " + (demo / "config.json").string() +
                       " --out " + (tmp.path() / "out").string();
    CliResult result = run_cli(args, tmp.path());
    CHECK(result.exit_code == 2);
    CHECK(result.output.find("--cards") != std::string::npos);
}

TEST_CASE("run exits 3 on budget exhaustion with a complete trace") {
    testing::TempDir tmp("cli_budget");
    auto demo = testing::source_dir() / "fixtures/demo";
    auto loop = testing::source_dir() / "fixtures/loop";
    std::string args = "run --objective " + (demo / "objective.json").string() + " --dataset " +
                       (demo / "dataset").string() + " --cards " + (demo / "cards").string() +
                       " --policy scripted --config " + (loop / "config.json").string() +
                       " --out " + (tmp.path() / "out").string() +
                       " --clock manual:1700000000000:1000";
    CliResult result = run_cli(args, tmp.path());
    CHECK(result.exit_code == 3);

    TraceLedger ledger = TraceLedger::read(tmp.path() / "out/trace.jsonl");
    CHECK(ledger.closed());
    CHECK(ledger.size() == 501); // 500 steps + halt record
    CHECK(json::parse(ledger.steps().back().action_json).at("reason") == "StepLimit");
}

TEST_CASE("qc screen flags the planted outlier") {
    testing::TempDir tmp("cli_screen");
    std::string table = "subject_id\tsnr_total\n";
    const double values[] = {10, 11, 12, 11, 10, 12, 11, 10, 11, 50};
    for (int i = 0; i < 10; ++i)
        table += "sub-" + std::to_string(i + 1) + "\t" + std::to_string(values[i]) + "\n";
    write_text_file_atomic(tmp.path() / "metrics.tsv", table);

    CliResult result = run_cli("qc screen --table " + (tmp.path() / "metrics.tsv").string() +
                                   " --metric snr_total --rule iqr --out " +
                                   (tmp.path() / "out").string(),
                               tmp.path());
    CHECK(result.exit_code == 0);
    json flagged = json::parse(read_text_file(tmp.path() / "out/flagged.json"));
    REQUIRE(flagged.at("flagged").size() == 1);
    CHECK(flagged.at("flagged")[0] == "sub-10");

    SUBCASE("top-K rule flags ceil(fraction*N) low values") {
        CliResult topk = run_cli("qc screen --table " + (tmp.path() / "metrics.tsv").string() +
                                     " --metric snr_total --rule topk --fraction 0.15 "
                                     "--direction low_bad --out " +
                                     (tmp.path() / "out_topk").string(),
                                 tmp.path());
        CHECK(topk.exit_code == 0);
        json low = json::parse(read_text_file(tmp.path() / "out_topk/flagged.json"));
        CHECK(low.at("flagged").size() == 2); // ceil(1.5)
    }
}

TEST_CASE("qc checkpoint runs the two-stage judgment on a cohort manifest") {
    testing::TempDir tmp("cli_ckpt");
    auto cohort_dir = tmp.path() / "cohort";
    std::filesystem::create_directories(cohort_dir);

    // aligned grids for everyone except sub-09
    json manifest;
    manifest["subjects"] = json::array();
    const double good_dice[] = {0.94, 0.95, 0.96, 0.94, 0.95, 0.96, 0.95, 0.94, 0.96, 0.95};
    int good_index = 0;
    for (int i = 1; i <= 12; ++i) {
        char id[8];
        std::snprintf(id, sizeof(id), "s%02d", i);
        bool planted = i == 7 || i == 9;
        VoxelGrid image = testing::cube_grid(12, 1.0);
        VoxelGrid mask = testing::box_mask(12, 3, 9);
        VoxelGrid ref = i == 9 ? testing::box_mask(12, 6, 12) : testing::box_mask(12, 3, 9);
        write_grid_json(image, cohort_dir / (std::string(id) + "_image.json"));
        write_grid_json(mask, cohort_dir / (std::string(id) + "_mask.json"));
        write_grid_json(ref, cohort_dir / (std::string(id) + "_ref.json"));
        json subject;
        subject["id"] = id;
        subject["grids"] = {{"image", std::string(id) + "_image.json"},
                            {"mask", std::string(id) + "_mask.json"},
                            {"reference_mask", std::string(id) + "_ref.json"}};
        subject["metrics"] = {{"dice", planted ? 0.30 : good_dice[good_index++]}};
        manifest["subjects"].push_back(subject);
    }
    write_text_file_atomic(cohort_dir / "cohort.json", manifest.dump(2));
    write_text_file_atomic(tmp.path() / "cc.json", R"({
      "checkpoints": [{
        "name": "fmri_to_t1w",
        "metrics": ["dice"],
        "rule": {"kind": "iqr", "multiplier": 1.5},
        "visualization": "mask_contour_montage"
      }]
    })");

    CliResult result = run_cli(
        "qc checkpoint --cohort " + (cohort_dir / "cohort.json").string() +
            " --config " + (tmp.path() / "cc.json").string() +
            " --checkpoint fmri_to_t1w --out " + (tmp.path() / "out").string(),
        tmp.path());
    CHECK(result.exit_code == 0);

    std::string tsv = read_text_file(tmp.path() / "out/verdicts.tsv");
    int fails = 0;
    std::istringstream lines(tsv);
    std::string line;
    while (std::getline(lines, line))
        fails += line.find("\tFAIL\t") != std::string::npos;
    CHECK(fails == 1);
    json verdicts = json::parse(read_text_file(tmp.path() / "out/verdicts.json"));
    CHECK(verdicts.at("verdicts").at("s09").at("y") == "FAIL");
    CHECK(verdicts.at("verdicts").at("s07").at("y") == "PASS");
    CHECK(verdicts.at("flagged").size() == 2);
}

TEST_CASE("qc metrics surfaces grid dimension mismatches as exit 2") {
    testing::TempDir tmp("cli_dims");
    auto cohort_dir = tmp.path() / "cohort";
    std::filesystem::create_directories(cohort_dir);
    write_grid_json(testing::cube_grid(8, 1.0), cohort_dir / "image.json");
    write_grid_json(testing::box_mask(6, 1, 4), cohort_dir / "mask.json"); // wrong dims
    json manifest;
    manifest["subjects"] = {{{"id", "s01"},
                             {"grids", {{"image", "image.json"},
                                        {"reference", "mask.json"}}}}};
    write_text_file_atomic(cohort_dir / "cohort.json", manifest.dump());

    // dims differ between image and reference: a schema error, exit 2
    CliResult result = run_cli("qc metrics --cohort " + (cohort_dir / "cohort.json").string() +
                                   " --checkpoint t1w_to_mni --out " +
                                   (tmp.path() / "out").string(),
                               tmp.path());
    CHECK(result.exit_code == 2);
    CHECK(result.output.find("DimMismatch") != std::string::npos);

    // matching dims but a constant image: nmi is degenerate, reported missing
    write_grid_json(testing::cube_grid(8, 1.0), cohort_dir / "mask.json");
    CliResult ok = run_cli("qc metrics --cohort " + (cohort_dir / "cohort.json").string() +
                               " --checkpoint t1w_to_mni --out " + (tmp.path() / "out").string(),
                           tmp.path());
    CHECK(ok.exit_code == 0);
    std::string tsv = read_text_file(tmp.path() / "out/metrics.tsv");
    CHECK(tsv.find("s01\t\t") != std::string::npos); // blank nmi/ncc cells
}

TEST_CASE("qc judge renders and judges one visualization") {
    testing::TempDir tmp("cli_judge");
    write_grid_json(testing::cube_grid(12, 1.0), tmp.path() / "base.json");
    write_grid_json(testing::box_mask(12, 3, 9), tmp.path() / "mask.json");
    write_grid_json(testing::box_mask(12, 6, 12), tmp.path() / "ref.json");
    json viz = {{"subject", "s09"},
                {"step", "coreg"},
                {"kind", "mask_contour_montage"},
                {"base", "base.json"},
                {"mask", "mask.json"},
                {"reference_mask", "ref.json"}};
    write_text_file_atomic(tmp.path() / "viz.json", viz.dump());

    CliResult result = run_cli("qc judge --viz " + (tmp.path() / "viz.json").string() +
                                   " --threshold 0.05 --out " + (tmp.path() / "out").string(),
                               tmp.path());
    CHECK(result.exit_code == 0);
    json verdict = json::parse(read_text_file(tmp.path() / "out/verdict.json"));
    CHECK(verdict.at("verdict") == "REJECTED");
}

TEST_CASE("agree reproduces the pass-rate cell and rejects misaligned raters") {
    testing::TempDir tmp("cli_agree");
    auto write_ratings = [&](const std::string& name, int fails, int total = 160) {
        std::string csv = "item_id,label\n";
        for (int i = 0; i < total; ++i)
            csv += "item" + std::to_string(i) + "," + (i < fails ? "FAIL" : "PASS") + "\n";
        write_text_file_atomic(tmp.path() / name, csv);
    };
    write_ratings("system.csv", 6);
    write_ratings("r1.csv", 6); // rater 1: 154/160 PASS
    write_ratings("r2.csv", 0);
    write_ratings("r3.csv", 10);

    CliResult result = run_cli(
        "agree --system " + (tmp.path() / "system.csv").string() + " --raters " +
            (tmp.path() / "r1.csv").string() + " " + (tmp.path() / "r2.csv").string() + " " +
            (tmp.path() / "r3.csv").string() + " --checkpoint raw_data --out " +
            (tmp.path() / "out").string(),
        tmp.path());
    CHECK(result.exit_code == 0);

    std::string pass_rates = read_text_file(tmp.path() / "out/pass_rates.tsv");
    CHECK(pass_rates.find("rater1\t96.2% (154/160)") != std::string::npos);
    CHECK(pass_rates.find("rater2\t100.0% (160/160)") != std::string::npos);

    std::string agreement = read_text_file(tmp.path() / "out/agreement.tsv");
    CHECK(agreement.find("raw_data\trater1\t1.000000") != std::string::npos);

    SUBCASE("a rater file missing one item exits 2") {
        write_ratings("short.csv", 0, 159);
        CliResult bad = run_cli(
            "agree --system " + (tmp.path() / "system.csv").string() + " --raters " +
                (tmp.path() / "short.csv").string() + " " + (tmp.path() / "r2.csv").string() +
                " " + (tmp.path() / "r3.csv").string() + " --checkpoint raw_data --out " +
                (tmp.path() / "out2").string(),
            tmp.path());
        CHECK(bad.exit_code == 2);
    }
}

TEST_CASE("stats summarizes ledgers and detects corruption") {
    testing::TempDir tmp("cli_stats");

    // five deterministic single-run ledgers differing in interaction count
    std::vector<std::string> paths;
    const long interactions[] = {18, 32, 25, 25, 25};
    for (int run = 0; run < 5; ++run) {
        auto path = tmp.path() / ("trace" + std::to_string(run) + ".jsonl");
        TraceLedger ledger(path);
        int index = 0;
        for (long i = 0; i < interactions[run]; ++i) {
            TraceStep step;
            step.index = ++index;
            step.agent = AgentRole::supervisor;
            Action action;
            action.kind = ActionKind::send_message;
            action.to = AgentRole::supervisor;
            action.body = "note " + std::to_string(i);
            step.action_json = action_to_json(action);
            step.observation = "delivered to supervisor";
            step.usage = Usage{1000, 100, 0.01};
            step.timestamp_ms = 1700000000000 + index * 1000;
            ledger.append(std::move(step));
        }
        TraceStep final_step;
        final_step.index = ++index;
        final_step.agent = AgentRole::supervisor;
        Action report;
        report.kind = ActionKind::report_final;
        report.manifest = {};
        final_step.action_json = action_to_json(report);
        final_step.observation = "episode completed";
        final_step.timestamp_ms = 1700000000000 + index * 1000;
        ledger.append(std::move(final_step));
        ledger.close();
        paths.push_back(path.string());
    }

    std::string args = "stats --traces";
    for (const auto& path : paths)
        args += " " + path;
    args += " --out " + (tmp.path() / "out").string();
    CliResult result = run_cli(args, tmp.path());
    CHECK(result.exit_code == 0);
    std::string summary = read_text_file(tmp.path() / "out/summary.tsv");
    CHECK(summary.find("n_interactions\t25.0\t18\t32\t25.0 (18–32)") != std::string::npos);
    std::string errors = read_text_file(tmp.path() / "out/errors.tsv");
    CHECK(errors.find("category\terrors\trecovered") != std::string::npos);

    SUBCASE("a tampered ledger line is reported with its line number") {
        std::string text = read_text_file(paths[0]);
        auto pos = text.find("note 2");
        REQUIRE(pos != std::string::npos);
        text.replace(pos, 6, "note X");
        write_text_file_atomic(tmp.path() / "tampered.jsonl", text);
        CliResult bad = run_cli("stats --traces " + (tmp.path() / "tampered.jsonl").string() +
                                    " --out " + (tmp.path() / "out2").string(),
                                tmp.path());
        CHECK(bad.exit_code == 2);
        CHECK(bad.output.find(":3:") != std::string::npos);
        CHECK(bad.output.find("checksum") != std::string::npos);
    }
}
