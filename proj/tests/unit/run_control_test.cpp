#include <fstream>

#include "doctest.h"
#include "selfdebias/run_control.hpp"
#include "test_util.hpp"

using namespace selfdebias;
using sdb_test::TempDir;

namespace {

// Fails the first `budget` second-turn requests (3-message payloads),
// leaving their conversations half-finished in the cache.
class TurnTwoOutageBackend : public ChatBackend {
public:
    TurnTwoOutageBackend(ChatBackend& inner, std::size_t budget)
        : inner_(inner), budget_(budget) {}

    ChatResponse complete(const ChatRequest& request, const TurnContext& ctx) override {
        if (request.messages.size() == 3 && failed_.fetch_add(1) < budget_)
            throw std::runtime_error("injected turn-two outage");
        return inner_.complete(request, ctx);
    }

private:
    ChatBackend& inner_;
    std::size_t budget_;
    std::atomic<std::size_t> failed_{0};
};

RunConfig sim_config(const TempDir& tmp, std::uint64_t seed = 5) {
    RunConfig config;
    config.backend = BackendKind::Simulated;
    config.profile_path = sdb_test::profile_dir() / "uniform_bias.json";
    config.seed = seed;
    config.bootstrap_reps = 50;
    config.cache_dir = tmp.path() / "cache";
    config.out_dir = tmp.path() / "out";
    config.endpoint.max_in_flight = 4;
    return config;
}

std::map<std::string, std::string> table_files(const std::vector<std::filesystem::path>& files) {
    std::map<std::string, std::string> by_name;
    for (const auto& path : files) {
        if (path.extension() == ".json") continue;  // metadata carries timestamps
        by_name[path.filename().string()] = sdb_test::read_file(path);
    }
    return by_name;
}

}  // namespace

TEST_CASE("config precedence: file overrides defaults, unknown keys rejected") {
    RunConfig config;
    overlay_config_json(config, R"({"temperature": 0.5, "reps": 250, "backend": "remote",
                                    "model": "gpt-x", "strategies": ["baseline"],
                                    "groups": ["religion", "age"], "seed": 9})");
    CHECK(config.temperature == 0.5);
    CHECK(config.bootstrap_reps == 250);
    CHECK(config.backend == BackendKind::Remote);
    CHECK(config.endpoint.model_name == "gpt-x");
    CHECK(config.strategies == std::vector<Strategy>{Strategy::Baseline});
    CHECK(config.groups ==
          std::vector<SocialGroup>{SocialGroup::Religion, SocialGroup::Age});
    CHECK(config.seed == 9);
    CHECK(config.max_tokens == 25);  // untouched default

    CHECK_THROWS_AS(overlay_config_json(config, R"({"tempreture": 1})"), ConfigError);
    CHECK_THROWS_AS(overlay_config_json(config, "[1,2]"), ConfigError);
}

TEST_CASE("cache entries survive a JSON round trip") {
    const auto records = synthetic_records(1);
    CacheEntry entry;
    entry.example_id = records[0].example_id;
    entry.strategy = Strategy::Reprompting;
    entry.run_id = "run-1";
    entry.record = records[0];
    entry.completed = true;
    entry.transcript.example_id = records[0].example_id;
    entry.transcript.strategy = Strategy::Reprompting;
    entry.transcript.messages = {{Role::User, "q"}, {Role::Assistant, "(A)"},
                                 {Role::User, "again"}, {Role::Assistant, "(B)"}};
    entry.transcript.first_answer_raw = "(A)";
    entry.transcript.final_answer_raw = "(B)";
    entry.transcript.run_id = "run-1";

    const CacheEntry parsed = cache_entry_from_json(cache_entry_to_json(entry));
    CHECK(parsed.example_id == entry.example_id);
    CHECK(parsed.strategy == entry.strategy);
    CHECK(parsed.completed);
    CHECK(parsed.record.options[0].role == entry.record.options[0].role);
    CHECK(parsed.record.stereotyped_groups == entry.record.stereotyped_groups);
    CHECK(parsed.transcript.messages.size() == 4);
    CHECK(parsed.transcript.first_answer_raw == entry.transcript.first_answer_raw);
}

TEST_CASE("a corrupt trailing cache line is skipped with a warning") {
    TempDir tmp("cache-corrupt");
    const auto records = synthetic_records(2);
    const auto file = tmp.path() / "r.cache.jsonl";
    {
        CacheWriter writer(file);
        CacheEntry entry;
        entry.example_id = records[0].example_id;
        entry.strategy = Strategy::Baseline;
        entry.record = records[0];
        entry.completed = true;
        entry.transcript.final_answer_raw = "(A)";
        entry.transcript.messages = {{Role::User, "q"}, {Role::Assistant, "(A)"}};
        writer.append(entry);
    }
    {
        std::ofstream out(file, std::ios::app);
        out << R"({"example_id": 2, "strategy": "Base)";  // crash mid-write
    }

    const CacheLoadResult loaded = load_cache(file);
    CHECK(loaded.entries.size() == 1);
    REQUIRE(loaded.warnings.size() == 1);
    CHECK(loaded.warnings[0].find("skipping") != std::string::npos);
}

TEST_CASE("execute_run issues 1/2/2 turns per strategy and caches everything") {
    TempDir tmp("run-counts");
    RunConfig config = sim_config(tmp);
    const auto records = synthetic_records(100);

    SimulatorBackend inner(load_profile(config.profile_path), config.seed);
    sdb_test::CountingBackend counting(inner);
    const RunOutcome outcome = execute_run(config, counting, records);

    // 100 baseline + 200 explanation + 200 reprompting requests
    CHECK(counting.calls == 500);
    CHECK(outcome.stats.requests_issued == 500);
    CHECK(outcome.stats.requests_failed == 0);
    CHECK(outcome.stats.transcripts_completed == 300);
    CHECK(outcome.stats.ok());

    // warm rerun: no backend requests at all
    sdb_test::CountingBackend counting2(inner);
    const RunOutcome rerun = execute_run(config, counting2, records);
    CHECK(counting2.calls == 0);
    CHECK(rerun.stats.cache_hits == 300);
    CHECK(rerun.stats.transcripts_completed == 300);

    // identical tables both times
    CHECK(table_files(outcome.files_written) == table_files(rerun.files_written));
}

TEST_CASE("interrupted runs resume from cache to byte-identical reports") {
    const auto records = synthetic_records(40);

    TempDir clean("run-clean");
    RunConfig clean_config = sim_config(clean);
    SimulatorBackend clean_backend(load_profile(clean_config.profile_path),
                                   clean_config.seed);
    const RunOutcome uninterrupted = execute_run(clean_config, clean_backend, records);

    TempDir flaky_dir("run-flaky");
    RunConfig flaky_config = sim_config(flaky_dir);
    SimulatorBackend inner(load_profile(flaky_config.profile_path), flaky_config.seed);
    TurnTwoOutageBackend flaky(inner, 13);  // splits 13 two-turn conversations
    const RunOutcome first = execute_run(flaky_config, flaky, records);
    CHECK(first.stats.transcripts_failed == 13);
    CHECK(first.stats.transcripts_completed == 120 - 13);

    // the resumed run must only issue the turns that are not banked in the
    // cache: completed transcripts cost zero, partials exactly one turn
    const auto cached = load_cache(flaky_config.cache_dir /
                                   (flaky_config.effective_run_id() + ".cache.jsonl"));
    std::size_t banked_requests = 0;
    std::size_t partials = 0;
    for (const auto& [key, entry] : cached.entries) {
        if (entry.completed) {
            banked_requests += entry.strategy == Strategy::Baseline ? 1 : 2;
        } else {
            banked_requests += 1;
            ++partials;
        }
    }
    CHECK(partials == 13);

    const RunOutcome resumed = execute_run(flaky_config, inner, records);
    CHECK(resumed.stats.transcripts_failed == 0);
    const std::size_t total_turns = 40 + 80 + 80;
    CHECK(resumed.stats.requests_issued == total_turns - banked_requests);
    CHECK(resumed.stats.requests_issued == 13);
    CHECK(table_files(resumed.files_written) == table_files(uninterrupted.files_written));
}

TEST_CASE("score over a run's cache reproduces the run's own tables") {
    TempDir tmp("score");
    RunConfig config = sim_config(tmp);
    const auto records = synthetic_records(30);
    SimulatorBackend backend(load_profile(config.profile_path), config.seed);
    const RunOutcome run = execute_run(config, backend, records);

    const RunOutcome scored =
        cmd_score(config.cache_dir, std::nullopt, tmp.path() / "rescored");
    CHECK(table_files(scored.files_written) == table_files(run.files_written));
    CHECK(scored.report.run_id == run.report.run_id);

    // identical bytes across repeated score invocations
    const RunOutcome scored2 =
        cmd_score(config.cache_dir, std::nullopt, tmp.path() / "rescored2");
    CHECK(table_files(scored2.files_written) == table_files(scored.files_written));
}

TEST_CASE("deleting one group's cache entries marks its rows skipped") {
    TempDir tmp("score-skip");
    RunConfig config = sim_config(tmp);
    config.strategies = {Strategy::Baseline};
    const auto records = synthetic_records(18);  // two records per group
    SimulatorBackend backend(load_profile(config.profile_path), config.seed);
    execute_run(config, backend, records);

    // drop every Age entry from the cache file
    const auto cache_file = config.cache_dir / (config.effective_run_id() + ".cache.jsonl");
    std::vector<std::string> kept;
    {
        std::ifstream in(cache_file);
        std::string line;
        while (std::getline(in, line)) {
            if (line.find("\"category\":\"Age\"") == std::string::npos) kept.push_back(line);
        }
    }
    {
        std::ofstream out(cache_file, std::ios::trunc);
        for (const auto& line : kept) out << line << '\n';
    }

    const RunOutcome scored = cmd_score(config.cache_dir, std::nullopt, tmp.path() / "out2");
    const CellStats& age = scored.report.cells.at(Strategy::Baseline).at(SocialGroup::Age);
    CHECK(age.skipped);
    const std::string summary = emit_summary(scored.report, TableFormat::Markdown);
    CHECK(summary.find("| Age | Baseline | skipped | |") != std::string::npos);
}

TEST_CASE("score on an empty or missing cache reports EmptyCacheError") {
    TempDir tmp("score-empty");
    CHECK_THROWS_AS(cmd_score(tmp.path(), std::nullopt, tmp.path()), EmptyCacheError);
}

TEST_CASE("validate-dataset counts groups and lists role failures") {
    const ValidationSummary summary =
        validate_dataset(sdb_test::data_dir() / "bbq_sample.jsonl", false);
    CHECK(summary.total == 7);
    CHECK(summary.counts.at(SocialGroup::Age) == 3);
    CHECK(summary.role_failures.empty());

    const ValidationSummary failures =
        validate_dataset(sdb_test::data_dir() / "bbq_role_failures.jsonl", false);
    CHECK(failures.total == 4);
    CHECK(failures.role_failures.size() == 3);
    const std::string text = format_validation(failures);
    CHECK(text.find("example 101") != std::string::npos);
    CHECK(text.find("example 102") != std::string::npos);
    CHECK(text.find("example 103") != std::string::npos);
}

TEST_CASE("validate-dataset against reference counts reports per-group deltas") {
    const ValidationSummary summary =
        validate_dataset(sdb_test::data_dir() / "bbq_sample.jsonl", true);
    CHECK(summary.checked_reference);
    CHECK(!summary.matches_reference);
    CHECK(summary.deltas.at(SocialGroup::Age) == 3 - 1840);
    const std::string text = format_validation(summary);
    CHECK(text.find("DO NOT match") != std::string::npos);
}

TEST_CASE("temp-sweep evaluates one fixed subset per temperature") {
    TempDir tmp("sweep");
    RunConfig config = sim_config(tmp);
    config.bootstrap_reps = 40;

    // build a small gender-identity dataset file
    const auto records = synthetic_records(30, SocialGroup::GenderIdentity);
    const auto dataset = tmp.path() / "gender.jsonl";
    sdb_test::write_bbq_jsonl(dataset, records);
    config.dataset = dataset;

    const TempSweepResult result =
        cmd_temp_sweep(config, {0.0, 0.5, 1.0}, 10, SocialGroup::GenderIdentity);
    CHECK(result.files_written.size() == 9);  // 3 temps x 3 strategies
    REQUIRE(result.results.size() == 3);

    // the simulator ignores temperature, so intervals trivially overlap
    for (Strategy s : config.strategies) {
        const BiasResult& a = result.results.at(0.0).at(s);
        const BiasResult& b = result.results.at(0.5).at(s);
        const BiasResult& c = result.results.at(1.0).at(s);
        CHECK(a.ci_low <= b.ci_high);
        CHECK(b.ci_low <= a.ci_high);
        CHECK(b.ci_low <= c.ci_high);
        CHECK(c.ci_low <= b.ci_high);
    }

    // sample too large fails before any request
    CHECK_THROWS_AS(cmd_temp_sweep(config, {0.0}, 1000, SocialGroup::GenderIdentity),
                    SampleTooLargeError);
}

TEST_CASE("simulate runs the pipeline over synthetic records") {
    TempDir tmp("simulate");
    RunConfig config = sim_config(tmp);
    config.bootstrap_reps = 40;
    const SimulateResult result = cmd_simulate(config, 90);

    CHECK(result.expected_first_turn == doctest::Approx(0.2));
    CHECK(result.observed.size() == 3);
    CHECK(result.outcome.stats.ok());
    // identity correction: all three strategies estimate the same bias
    for (const auto& [strategy, score] : result.observed) {
        CHECK(std::abs(score - 0.2) < 0.2);  // loose: n is small here
    }
}

TEST_CASE("configured refusal rates show up in the refusal table") {
    TempDir tmp("refusals");
    RunConfig config = sim_config(tmp);
    config.profile_path = sdb_test::profile_dir() / "with_refusals.json";  // p_refusal = 0.05
    config.strategies = {Strategy::Baseline};
    config.bootstrap_reps = 20;

    const auto records = synthetic_records(2000, SocialGroup::Age);
    SimulatorBackend backend(load_profile(config.profile_path), config.seed);
    const RunOutcome outcome = execute_run(config, backend, records);

    const CellStats& cell = outcome.report.cells.at(Strategy::Baseline).at(SocialGroup::Age);
    CHECK(cell.answered + cell.dropped == 2000);
    CHECK(std::abs(cell.refusal_percent() - 5.0) <= 1.5);
}

TEST_CASE("prepare_records applies group filter and sampling") {
    TempDir tmp("prepare");
    RunConfig config = sim_config(tmp);
    const auto records = synthetic_records(45);
    const auto dataset = tmp.path() / "mixed.jsonl";
    sdb_test::write_bbq_jsonl(dataset, records);
    config.dataset = dataset;
    config.groups = {SocialGroup::Age, SocialGroup::Religion};

    auto selected = prepare_records(config);
    CHECK(selected.size() == 10);  // 45 records cycle 9 groups: 5 per group
    for (const auto& rec : selected) {
        CHECK((rec.category == SocialGroup::Age || rec.category == SocialGroup::Religion));
    }

    config.sample = 4;
    selected = prepare_records(config);
    CHECK(selected.size() == 4);
}
