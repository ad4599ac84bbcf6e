// Command-line entry point: run the evaluation protocols over BBQ
// questions, re-score cached transcripts, re-emit report tables, sweep
// the temperature setting, validate a dataset, or exercise the pipeline
// against the offline simulator.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "selfdebias/run_control.hpp"

namespace sdb = selfdebias;

namespace {

struct RunFlags {
    std::string config_file;
    std::string dataset;
    std::vector<std::string> strategies;
    std::vector<std::string> groups;
    std::string backend;
    std::string profile;
    std::string base_url;
    std::string model;
    std::string api_key_env;
    double temperature = 1.0;
    int max_tokens = 25;
    int explanation_max_tokens = 100;
    int reps = 1000;
    std::uint64_t seed = 0;
    std::size_t sample = 0;
    int max_in_flight = 4;
    int max_retries = 3;
    std::string cache_dir;
    std::string out_dir;
    std::string run_id;
    bool verbose = false;
};

void add_run_options(CLI::App* cmd, RunFlags& flags) {
    cmd->add_option("--config", flags.config_file, "JSON config file (flags override it)");
    cmd->add_option("--dataset", flags.dataset, "BBQ JSONL file or directory");
    cmd->add_option("--strategy", flags.strategies,
                    "baseline|explanation|reprompting (repeatable)");
    cmd->add_option("--group", flags.groups, "social group filter (repeatable)");
    cmd->add_option("--backend", flags.backend, "remote|simulated");
    cmd->add_option("--profile", flags.profile, "simulator profile JSON");
    cmd->add_option("--base-url", flags.base_url, "chat-completion endpoint base URL");
    cmd->add_option("--model", flags.model, "model name sent on the wire");
    cmd->add_option("--api-key-env", flags.api_key_env,
                    "environment variable holding the API key");
    cmd->add_option("--temperature", flags.temperature, "sampling temperature");
    cmd->add_option("--max-tokens", flags.max_tokens, "token limit for answer turns");
    cmd->add_option("--explanation-max-tokens", flags.explanation_max_tokens,
                    "token limit for the explanation turn");
    cmd->add_option("--reps", flags.reps, "bootstrap replications");
    cmd->add_option("--seed", flags.seed, "run seed");
    cmd->add_option("--sample", flags.sample, "evaluate a random subset of this size");
    cmd->add_option("--max-in-flight", flags.max_in_flight, "concurrent request bound");
    cmd->add_option("--max-retries", flags.max_retries, "retries per request");
    cmd->add_option("--cache-dir", flags.cache_dir, "transcript cache directory");
    cmd->add_option("--out-dir", flags.out_dir, "report output directory");
    cmd->add_option("--run-id", flags.run_id, "run identifier (default run-<seed>)");
    cmd->add_flag("--verbose", flags.verbose, "log requests and failures");
}

sdb::RunConfig build_config(const CLI::App* cmd, const RunFlags& flags) {
    sdb::RunConfig config;
    if (cmd->count("--config") > 0) config = sdb::load_config_file(flags.config_file);

    auto given = [&](const char* name) { return cmd->count(name) > 0; };

    if (given("--dataset")) config.dataset = flags.dataset;
    if (given("--strategy")) {
        config.strategies.clear();
        for (const auto& name : flags.strategies) {
            const auto s = sdb::strategy_from_string(name);
            if (!s) throw sdb::ConfigError("unknown strategy '" + name + "'");
            config.strategies.push_back(*s);
        }
    }
    if (given("--group")) {
        config.groups.clear();
        for (const auto& name : flags.groups) {
            const auto g = sdb::group_from_string(name);
            if (!g) throw sdb::ConfigError("unknown social group '" + name + "'");
            config.groups.push_back(*g);
        }
    }
    if (given("--backend")) {
        if (flags.backend == "remote") config.backend = sdb::BackendKind::Remote;
        else if (flags.backend == "simulated" || flags.backend == "sim")
            config.backend = sdb::BackendKind::Simulated;
        else throw sdb::ConfigError("backend must be 'remote' or 'simulated'");
    }
    if (given("--profile")) config.profile_path = flags.profile;
    if (given("--base-url")) config.endpoint.base_url = flags.base_url;
    if (given("--model")) config.endpoint.model_name = flags.model;
    if (given("--api-key-env")) config.endpoint.api_key_env = flags.api_key_env;
    if (given("--temperature")) config.temperature = flags.temperature;
    if (given("--max-tokens")) config.max_tokens = flags.max_tokens;
    if (given("--explanation-max-tokens"))
        config.explanation_max_tokens = flags.explanation_max_tokens;
    if (given("--reps")) config.bootstrap_reps = flags.reps;
    if (given("--seed")) config.seed = flags.seed;
    if (given("--sample")) config.sample = flags.sample;
    if (given("--max-in-flight")) config.endpoint.max_in_flight = flags.max_in_flight;
    if (given("--max-retries")) config.endpoint.max_retries = flags.max_retries;
    if (given("--cache-dir")) config.cache_dir = flags.cache_dir;
    if (given("--out-dir")) config.out_dir = flags.out_dir;
    if (given("--run-id")) config.run_id = flags.run_id;
    if (flags.verbose) config.verbose = true;
    return config;
}

void print_stats(const sdb::RunStats& stats) {
    std::printf("transcripts: %zu total, %zu completed (%zu from cache), %zu failed\n",
                stats.transcripts_total, stats.transcripts_completed, stats.cache_hits,
                stats.transcripts_failed);
    std::printf("requests: %zu issued, %zu failed\n", stats.requests_issued,
                stats.requests_failed);
}

int run_command(const RunFlags& flags, const CLI::App* cmd) {
    const sdb::RunConfig config = build_config(cmd, flags);
    const sdb::RunOutcome outcome = sdb::cmd_run(config);
    std::cout << sdb::emit_summary(outcome.report, sdb::TableFormat::Markdown) << '\n';
    print_stats(outcome.stats);
    for (const auto& path : outcome.files_written) std::printf("wrote %s\n", path.c_str());
    return outcome.stats.ok() ? 0 : 2;
}

int score_command(const std::string& cache_dir, const std::string& run_id,
                  const std::string& out_dir) {
    const sdb::RunOutcome outcome = sdb::cmd_score(
        cache_dir, run_id.empty() ? std::nullopt : std::make_optional(run_id),
        out_dir.empty() ? std::nullopt
                        : std::make_optional(std::filesystem::path(out_dir)));
    std::cout << sdb::emit_summary(outcome.report, sdb::TableFormat::Markdown) << '\n';
    for (const auto& path : outcome.files_written) std::printf("wrote %s\n", path.c_str());
    return 0;
}

int report_command(const std::string& report_file, const std::string& table,
                   const std::string& format_name) {
    std::ifstream in(report_file);
    if (!in) {
        std::fprintf(stderr, "cannot open %s\n", report_file.c_str());
        return 1;
    }
    std::ostringstream buffer;
    buffer << in.rdbuf();
    const sdb::RunReport report = sdb::report_from_json(buffer.str());

    const sdb::TableFormat format =
        format_name == "csv" ? sdb::TableFormat::Csv : sdb::TableFormat::Markdown;
    if (table == "summary") std::cout << sdb::emit_summary(report, format);
    else if (table == "refusals") std::cout << sdb::emit_refusals(report, format);
    else if (table == "transitions") std::cout << sdb::emit_transitions(report, format);
    else if (table == "tokens") std::cout << sdb::emit_tokens(report, format);
    else {
        std::fprintf(stderr, "unknown table '%s'\n", table.c_str());
        return 1;
    }
    return 0;
}

int temp_sweep_command(const RunFlags& flags, const CLI::App* cmd,
                       const std::vector<double>& temps, std::size_t n,
                       const std::string& group_name) {
    const sdb::RunConfig config = build_config(cmd, flags);
    const auto group = sdb::group_from_string(group_name);
    if (!group) throw sdb::ConfigError("unknown social group '" + group_name + "'");

    const sdb::TempSweepResult result = sdb::cmd_temp_sweep(config, temps, n, *group);
    std::printf("%-12s %-14s %-8s %s\n", "temperature", "technique", "score", "95% CI");
    for (const auto& [temp, by_strategy] : result.results) {
        for (const auto& [strategy, bias] : by_strategy) {
            std::printf("%-12g %-14s %-8.3f (%.3f, %.3f)\n", temp, sdb::to_string(strategy),
                        bias.score, bias.ci_low, bias.ci_high);
        }
    }
    for (const auto& path : result.files_written) std::printf("wrote %s\n", path.c_str());
    return 0;
}

int validate_command(const std::string& dataset, bool expect_counts) {
    const sdb::ValidationSummary summary = sdb::validate_dataset(dataset, expect_counts);
    std::cout << sdb::format_validation(summary);
    if (expect_counts && !summary.matches_reference) return 1;
    return 0;
}

int simulate_command(const RunFlags& flags, const CLI::App* cmd, std::size_t n) {
    sdb::RunConfig config = build_config(cmd, flags);
    config.backend = sdb::BackendKind::Simulated;
    const sdb::SimulateResult result = sdb::cmd_simulate(config, n);

    std::printf("expected first-turn bias: %.4f\n", result.expected_first_turn);
    std::printf("expected bias after correction: %.4f\n", result.expected_after_correction);
    for (const auto& [strategy, score] : result.observed) {
        std::printf("observed %-14s %.4f\n", sdb::to_string(strategy), score);
    }
    print_stats(result.outcome.stats);
    for (const auto& path : result.outcome.files_written)
        std::printf("wrote %s\n", path.c_str());
    return result.outcome.stats.ok() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Zero-shot self-debias evaluation harness for BBQ multiple-choice questions"};
    app.require_subcommand(1);

    RunFlags run_flags;
    CLI::App* run = app.add_subcommand("run", "execute strategies over a dataset and score");
    add_run_options(run, run_flags);

    std::string score_cache_dir = "cache";
    std::string score_run_id;
    std::string score_out_dir;
    CLI::App* score = app.add_subcommand("score", "re-score cached transcripts");
    score->add_option("--cache-dir", score_cache_dir, "cache directory")->required();
    score->add_option("--run-id", score_run_id, "run to score (default: the only cached run)");
    score->add_option("--out-dir", score_out_dir, "report output directory");

    std::string report_file;
    std::string report_table = "summary";
    std::string report_format = "md";
    CLI::App* report = app.add_subcommand("report", "re-emit tables from a report JSON");
    report->add_option("--report", report_file, "<run_id>.report.json path")->required();
    report->add_option("--table", report_table, "summary|refusals|transitions|tokens");
    report->add_option("--format", report_format, "md|csv");

    RunFlags sweep_flags;
    std::vector<double> sweep_temps = {0.0, 0.5, 1.0};
    std::size_t sweep_n = 250;
    std::string sweep_group = "gender_identity";
    CLI::App* sweep = app.add_subcommand("temp-sweep",
                                         "evaluate one fixed subset at several temperatures");
    add_run_options(sweep, sweep_flags);
    sweep->add_option("--temps", sweep_temps, "temperatures to compare");
    sweep->add_option("--n", sweep_n, "subset size");
    sweep->add_option("--sweep-group", sweep_group, "social group to sample from");

    std::string validate_dataset_path;
    bool expect_counts = false;
    CLI::App* validate = app.add_subcommand("validate-dataset",
                                            "check dataset counts and role resolution");
    validate->add_option("--dataset", validate_dataset_path, "BBQ JSONL file or directory")
        ->required();
    validate->add_flag("--expect-paper-counts", expect_counts,
                       "fail unless ambiguous counts match the published BBQ release");

    RunFlags sim_flags;
    std::size_t sim_n = 2000;
    CLI::App* simulate = app.add_subcommand("simulate",
                                            "validate the pipeline against the simulator");
    add_run_options(simulate, sim_flags);
    simulate->add_option("--n", sim_n, "number of synthetic questions");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed()) return run_command(run_flags, run);
        if (score->parsed()) return score_command(score_cache_dir, score_run_id, score_out_dir);
        if (report->parsed()) return report_command(report_file, report_table, report_format);
        if (sweep->parsed())
            return temp_sweep_command(sweep_flags, sweep, sweep_temps, sweep_n, sweep_group);
        if (validate->parsed()) return validate_command(validate_dataset_path, expect_counts);
        if (simulate->parsed()) return simulate_command(sim_flags, simulate, sim_n);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
