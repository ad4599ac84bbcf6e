#pragma once
// Run orchestration: configuration, the transcript cache with resume, the
// scoring path shared by `run` and `score`, dataset validation, the
// temperature sweep and the simulator validation run.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "selfdebias/bbq.hpp"
#include "selfdebias/chat.hpp"
#include "selfdebias/client.hpp"
#include "selfdebias/reporting.hpp"
#include "selfdebias/simulator.hpp"
#include "selfdebias/strategies.hpp"

namespace selfdebias {

enum class BackendKind { Remote, Simulated };

struct RunConfig {
    std::filesystem::path dataset;
    std::vector<Strategy> strategies = {Strategy::Baseline, Strategy::Explanation,
                                        Strategy::Reprompting};
    std::vector<SocialGroup> groups;  // empty = all groups in the dataset
    BackendKind backend = BackendKind::Simulated;
    EndpointConfig endpoint;
    std::filesystem::path profile_path;  // simulated backend
    double temperature = 1.0;
    int max_tokens = 25;
    int explanation_max_tokens = 100;
    int bootstrap_reps = 1000;
    std::uint64_t seed = 0;
    std::optional<std::size_t> sample;
    std::filesystem::path cache_dir = "cache";
    std::filesystem::path out_dir = "out";
    std::string run_id;  // defaults to "run-<seed>"
    bool verbose = false;

    std::string effective_run_id() const {
        return run_id.empty() ? "run-" + std::to_string(seed) : run_id;
    }
    GenerationParams generation_params() const {
        return {temperature, max_tokens, explanation_max_tokens};
    }
};

// Reads a JSON config file; keys mirror the CLI flags. Unknown keys are
// rejected. CLI flags override file values, which override defaults.
RunConfig load_config_file(const std::filesystem::path& path);
void overlay_config_json(RunConfig& config, const std::string& json_text);

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct EmptyCacheError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One cached conversation. The record snapshot makes a cache file
// self-contained: `score` re-parses and re-classifies without the dataset.
struct CacheEntry {
    long long example_id = 0;
    Strategy strategy = Strategy::Baseline;
    std::string run_id;
    BbqRecord record;
    Transcript transcript;
    bool completed = false;
};

using CacheKey = std::pair<long long, Strategy>;

struct CacheLoadResult {
    std::map<CacheKey, CacheEntry> entries;  // last entry per key wins
    std::vector<std::string> warnings;       // skipped corrupt lines etc.
};

// Loads a JSONL cache file. Corrupt lines (e.g. a truncated trailing
// line after a crash) are skipped with a warning, never fatal.
CacheLoadResult load_cache(const std::filesystem::path& file);

// Append-only JSONL writer; safe for concurrent workers.
class CacheWriter {
public:
    explicit CacheWriter(const std::filesystem::path& file);
    void append(const CacheEntry& entry);

private:
    std::mutex mutex_;
    std::ofstream out_;
};

std::string cache_entry_to_json(const CacheEntry& entry);
CacheEntry cache_entry_from_json(const std::string& line);

// Run metadata persisted next to the cache so `score` can rebuild the
// report grid without re-running anything.
struct RunMeta {
    std::string run_id;
    BackendKind backend = BackendKind::Simulated;
    std::string model_name;
    double temperature = 1.0;
    int max_tokens = 25;
    int explanation_max_tokens = 100;
    int bootstrap_reps = 1000;
    std::uint64_t seed = 0;
    std::vector<Strategy> strategies;
    std::vector<SocialGroup> groups;
    std::string dataset;
    std::optional<std::size_t> sample;
    std::string started_at;
    std::size_t role_failures = 0;
};

struct RunStats {
    std::size_t transcripts_total = 0;
    std::size_t transcripts_completed = 0;
    std::size_t transcripts_failed = 0;
    std::size_t cache_hits = 0;
    std::size_t requests_issued = 0;
    std::size_t requests_failed = 0;

    // The run is acceptable while at most 10% of requests failed.
    bool ok() const { return requests_failed * 10 <= requests_issued; }
};

struct RunOutcome {
    RunReport report;
    RunStats stats;
    std::vector<std::filesystem::path> files_written;
};

// Loads, filters and role-resolves the dataset per the config (group
// filter and sampling included). Failures are reported, not fatal.
std::vector<BbqRecord> prepare_records(const RunConfig& config,
                                       std::vector<RoleFailure>* failures = nullptr);

// The run engine: executes every selected strategy over `records` against
// `backend` with cache/resume, then scores and writes all report files.
// `role_failures` is carried into the run metadata.
RunOutcome execute_run(const RunConfig& config, ChatBackend& backend,
                       const std::vector<BbqRecord>& records,
                       std::size_t role_failures = 0);

// `run`: prepare_records + backend from config + execute_run.
RunOutcome cmd_run(const RunConfig& config);

// `score`: rebuild the report from a cache directory alone. Deterministic:
// identical cache and seed give byte-identical report files.
RunOutcome cmd_score(const std::filesystem::path& cache_dir,
                     const std::optional<std::string>& run_id = std::nullopt,
                     const std::optional<std::filesystem::path>& out_dir = std::nullopt);

// Report construction shared by run and score.
RunReport build_report(const RunMeta& meta, const std::map<CacheKey, CacheEntry>& entries,
                       const std::string& finished_at);

void write_meta(const RunMeta& meta, const std::filesystem::path& cache_dir);
RunMeta load_meta(const std::filesystem::path& cache_dir, const std::string& run_id);

// Writes <run_id>.<table>.{md,csv}, <run_id>.bootstrap.csv and
// <run_id>.report.json under out_dir; returns the paths.
std::vector<std::filesystem::path> write_report_files(const RunReport& report,
                                                      const std::filesystem::path& out_dir);

std::string report_to_json(const RunReport& report);
RunReport report_from_json(const std::string& text);

// `validate-dataset`.
struct ValidationSummary {
    std::map<SocialGroup, std::size_t> counts;  // ambiguous records per group
    std::size_t total = 0;
    std::vector<RoleFailure> role_failures;
    bool checked_reference = false;
    bool matches_reference = false;
    std::map<SocialGroup, long long> deltas;  // observed - reference
};

ValidationSummary validate_dataset(const std::filesystem::path& path,
                                   bool expect_reference_counts);
std::string format_validation(const ValidationSummary& summary);

// `temp-sweep`: one fixed subset of `group` questions evaluated at each
// temperature for all selected strategies; per-temperature bootstrap
// distributions are exported for plotting.
struct TempSweepResult {
    std::vector<double> temperatures;
    std::map<double, std::map<Strategy, BiasResult>> results;
    std::vector<std::filesystem::path> files_written;
};

TempSweepResult cmd_temp_sweep(const RunConfig& config, const std::vector<double>& temps,
                               std::size_t n = 250,
                               SocialGroup group = SocialGroup::GenderIdentity);

// `simulate`: pipeline validation against synthetic records. Runs the
// selected strategies with the simulator backend and reports recovered
// scores next to the profile's closed-form expectations.
struct SimulateResult {
    RunOutcome outcome;
    double expected_first_turn = 0.0;
    double expected_after_correction = 0.0;
    std::map<Strategy, double> observed;  // aggregate score per strategy
};

SimulateResult cmd_simulate(const RunConfig& config, std::size_t n);

}  // namespace selfdebias
