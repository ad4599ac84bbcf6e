#pragma once
// Serialization of run results into the summary / refusal / transition /
// token tables, plus the bootstrap-distribution export for plotting.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdebias/metrics.hpp"
#include "selfdebias/strategies.hpp"

namespace selfdebias {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// One (group, technique) cell. A cell is skipped when the run produced no
// completed transcripts for it.
struct CellStats {
    bool skipped = true;
    BiasResult bias;
    std::size_t answered = 0;  // scored outcomes (refusals excluded)
    std::size_t dropped = 0;   // refusals

    double refusal_percent() const {
        const std::size_t total = answered + dropped;
        return total == 0 ? 0.0 : 100.0 * static_cast<double>(dropped) / static_cast<double>(total);
    }
};

struct TokenEstimate {
    double input = 0.0;
    double output = 0.0;
    double total() const { return input + output; }
};

struct RunReport {
    // run metadata
    std::string run_id;
    std::string model_name;
    std::string backend;
    double temperature = 1.0;
    int max_tokens = 25;
    int explanation_max_tokens = 100;
    std::uint64_t seed = 0;
    int bootstrap_reps = 1000;
    std::string started_at;
    std::string finished_at;
    std::size_t role_failures = 0;

    // the (group, technique) grid this run was asked to cover
    std::vector<Strategy> strategies;
    std::vector<SocialGroup> groups;

    std::map<Strategy, std::map<SocialGroup, CellStats>> cells;
    std::map<Strategy, CellStats> overall;

    // answer-correction analysis; Explanation pairs against the Baseline
    // run, Reprompting against its own first answer
    std::map<Strategy, std::map<SocialGroup, TransitionTable>> transitions;
    std::map<Strategy, TransitionTable> transitions_overall;

    std::map<Strategy, TokenEstimate> tokens;
};

enum class TableFormat { Markdown, Csv };

// One row per (group, technique) plus Overall rows; scores to three
// decimals, CI rendered "(lo, hi)" in Markdown and split into ci_low /
// ci_high columns in CSV. Skipped cells keep their row with empty values.
std::string emit_summary(const RunReport& report, TableFormat format);

// Percentage of dropped (refused) questions per group and technique, one
// decimal place.
std::string emit_refusals(const RunReport& report, TableFormat format);

// The C->C / C->I / I->C / I->I correction table per group and technique,
// one decimal place.
std::string emit_transitions(const RunReport& report, TableFormat format);

// Input/output token estimates per technique plus totals.
std::string emit_tokens(const RunReport& report, TableFormat format);

// CSV with columns social_group,technique,replicate_index,score; one row
// per bootstrap replicate per cell (Overall cells included).
void export_bootstrap(const RunReport& report, const std::filesystem::path& path);

// Token estimate from transcripts: input ~ words * 2048 / 1500 over every
// request payload (history is re-sent each turn), output bounded by the
// per-turn token limit.
std::map<Strategy, TokenEstimate> token_cost_estimate(std::span<const Transcript> transcripts,
                                                      const GenerationParams& params);

// Whitespace-delimited word count used by the token heuristic.
std::size_t word_count(std::string_view text);

// Fixed-decimal formatting used across the tables ("%.3f" etc.).
std::string format_fixed(double value, int decimals);

}  // namespace selfdebias
