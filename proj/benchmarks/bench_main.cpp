// Microbenchmarks for the hot paths: registration metrics over voxel grids,
// lexical tool ranking, agreement statistics, and ledger appends.

#include "nexus/agreement.hpp"
#include "nexus/jit.hpp"
#include "nexus/qc.hpp"
#include "nexus/registry.hpp"
#include "nexus/trace.hpp"
#include "nexus/util.hpp"
#include "nexus/voxel.hpp"

#include <benchmark/benchmark.h>

using namespace nexus;

namespace {

VoxelGrid random_grid(int n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    VoxelGrid grid = VoxelGrid::filled({n, n, n}, {1, 1, 1}, 0.0);
    for (double& v : grid.values)
        v = rng.unit() * 100.0;
    return grid;
}

VoxelGrid random_mask(int n, std::uint64_t seed) {
    SplitMix64 rng(seed);
    VoxelGrid grid = VoxelGrid::filled({n, n, n}, {1, 1, 1}, 0.0);
    for (double& v : grid.values)
        v = rng.below(3) == 0 ? 1.0 : 0.0;
    grid.values[0] = 1.0;
    return grid;
}

Registry fixture_registry(std::size_t n) {
    std::vector<PrimitiveCard> cards;
    for (std::size_t i = 0; i < n; ++i) {
        PrimitiveCard card;
        card.name = "tool_" + std::to_string(i);
        card.module = "tool_lib.bench";
        card.description = "benchmark primitive number " + std::to_string(i) +
                           " for masks warps and registration";
        card.detailed_schema = "Parameters:\n- input_file: path\n- output_dir: path";
        card.family = static_cast<Family>(i % 3);
        cards.push_back(std::move(card));
    }
    return Registry::from_cards(std::move(cards));
}

void BM_dice(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    VoxelGrid a = random_mask(n, 1);
    VoxelGrid b = random_mask(n, 2);
    for (auto _ : state)
        benchmark::DoNotOptimize(compute_dice(a, b));
    state.SetItemsProcessed(state.iterations() * a.values.size());
}
BENCHMARK(BM_dice)->Arg(16)->Arg(64);

void BM_nmi(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    VoxelGrid a = random_grid(n, 3);
    VoxelGrid b = random_grid(n, 4);
    for (auto _ : state)
        benchmark::DoNotOptimize(compute_nmi(a, b, 64));
    state.SetItemsProcessed(state.iterations() * a.values.size());
}
BENCHMARK(BM_nmi)->Arg(16)->Arg(64);

void BM_ncc(benchmark::State& state) {
    int n = static_cast<int>(state.range(0));
    VoxelGrid a = random_grid(n, 5);
    VoxelGrid b = random_grid(n, 6);
    for (auto _ : state)
        benchmark::DoNotOptimize(compute_ncc(a, b));
    state.SetItemsProcessed(state.iterations() * a.values.size());
}
BENCHMARK(BM_ncc)->Arg(16)->Arg(64);

void BM_lexical_rank(benchmark::State& state) {
    Registry registry = fixture_registry(static_cast<std::size_t>(state.range(0)));
    auto index = compact_index(registry);
    std::string instruction = "warp the masks to template space and check registration quality";
    for (auto _ : state)
        benchmark::DoNotOptimize(lexical_rank(instruction, index, 8));
}
BENCHMARK(BM_lexical_rank)->Arg(41)->Arg(256);

void BM_gwet_ac1(benchmark::State& state) {
    SplitMix64 rng(7);
    std::vector<Label> a, b;
    for (long i = 0; i < state.range(0); ++i) {
        a.push_back(rng.below(2) ? Label::pass : Label::fail);
        b.push_back(rng.below(2) ? Label::pass : Label::fail);
    }
    for (auto _ : state)
        benchmark::DoNotOptimize(gwet_ac1(a, b));
}
BENCHMARK(BM_gwet_ac1)->Arg(160)->Arg(4096);

void BM_screen_iqr(benchmark::State& state) {
    SplitMix64 rng(9);
    std::map<std::string, double> values;
    for (long i = 0; i < state.range(0); ++i)
        values["sub-" + std::to_string(i)] = rng.unit();
    for (auto _ : state)
        benchmark::DoNotOptimize(screen_iqr(values, 1.5));
}
BENCHMARK(BM_screen_iqr)->Arg(160)->Arg(2000);

void BM_ledger_append(benchmark::State& state) {
    Action action;
    action.kind = ActionKind::run_command;
    action.command = "echo bench";
    std::string action_json = action_to_json(action);
    for (auto _ : state) {
        state.PauseTiming();
        TraceLedger ledger; // in-memory
        state.ResumeTiming();
        for (int i = 1; i <= 100; ++i) {
            TraceStep step;
            step.index = i;
            step.agent = AgentRole::processing;
            step.action_json = action_json;
            step.observation = "exit 0";
            step.timestamp_ms = i;
            ledger.append(std::move(step));
        }
        benchmark::DoNotOptimize(ledger.size());
    }
    state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_ledger_append);

} // namespace

BENCHMARK_MAIN();
