#include <benchmark/benchmark.h>

#include "selfdebias/simulator.hpp"
#include "selfdebias/strategies.hpp"

using namespace selfdebias;

namespace {

SimulatorProfile bench_profile() {
    SimulatorProfile profile;
    profile.p_target = 0.3;
    profile.p_nontarget = 0.1;
    profile.p_unknown = 0.6;
    return profile;
}

}  // namespace

static void BM_SimulateFirstTurn(benchmark::State& state) {
    const auto records = synthetic_records(16);
    const SimulatorProfile profile = bench_profile();
    std::vector<std::vector<ChatMessage>> turns;
    for (const auto& rec : records) {
        turns.push_back({{Role::User, std::string(kAnswerInstruction) + "\n" +
                                          render_question_block(rec)}});
    }
    std::size_t i = 0;
    for (auto _ : state) {
        Rng rng = derive_stream(9, {i});
        benchmark::DoNotOptimize(
            simulate_turn(profile, turns[i % turns.size()], records[i % records.size()], rng));
        ++i;
    }
}
BENCHMARK(BM_SimulateFirstTurn);

static void BM_BaselineTranscript(benchmark::State& state) {
    const auto records = synthetic_records(16);
    SimulatorBackend backend(bench_profile(), 3);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            run_baseline(backend, records[i % records.size()], {}, "bench"));
        ++i;
    }
}
BENCHMARK(BM_BaselineTranscript);

static void BM_RepromptingTranscript(benchmark::State& state) {
    const auto records = synthetic_records(16);
    SimulatorBackend backend(bench_profile(), 3);
    std::size_t i = 0;
    for (auto _ : state) {
        benchmark::DoNotOptimize(
            run_reprompting(backend, records[i % records.size()], {}, "bench"));
        ++i;
    }
}
BENCHMARK(BM_RepromptingTranscript);
