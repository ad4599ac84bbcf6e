#include "selfdebias/reporting.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

namespace selfdebias {

std::string format_fixed(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", decimals, value);
    return buf;
}

std::size_t word_count(std::string_view text) {
    std::size_t words = 0;
    bool in_word = false;
    for (char c : text) {
        const bool space = c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
        if (!space && !in_word) ++words;
        in_word = !space;
    }
    return words;
}

namespace {

constexpr const char* kOverallLabel = "Overall";

const CellStats* find_cell(const RunReport& report, Strategy strategy, SocialGroup group) {
    const auto strat_it = report.cells.find(strategy);
    if (strat_it == report.cells.end()) return nullptr;
    const auto cell_it = strat_it->second.find(group);
    if (cell_it == strat_it->second.end()) return nullptr;
    return &cell_it->second;
}

const CellStats* find_overall(const RunReport& report, Strategy strategy) {
    const auto it = report.overall.find(strategy);
    return it == report.overall.end() ? nullptr : &it->second;
}

void summary_row(std::string& out, TableFormat format, const char* group_name,
                 Strategy strategy, const CellStats* cell) {
    // a cell whose every answer was a refusal has no score to print
    const bool have = cell != nullptr && !cell->skipped && cell->answered > 0;
    if (format == TableFormat::Markdown) {
        out += "| ";
        out += group_name;
        out += " | ";
        out += to_string(strategy);
        if (have) {
            out += " | " + format_fixed(cell->bias.score, 3) + " | (" +
                   format_fixed(cell->bias.ci_low, 3) + ", " +
                   format_fixed(cell->bias.ci_high, 3) + ") |\n";
        } else {
            out += " | skipped | |\n";
        }
    } else {
        out += group_name;
        out += ',';
        out += to_string(strategy);
        if (have) {
            out += ',' + format_fixed(cell->bias.score, 3) + ',' +
                   format_fixed(cell->bias.ci_low, 3) + ',' +
                   format_fixed(cell->bias.ci_high, 3) + '\n';
        } else {
            out += ",,,\n";
        }
    }
}

}  // namespace

std::string emit_summary(const RunReport& report, TableFormat format) {
    std::string out;
    if (format == TableFormat::Markdown) {
        out += "| Social Group | Technique | Bias Score | 95% CI |\n";
        out += "|---|---|---|---|\n";
    } else {
        out += "social_group,technique,bias_score,ci_low,ci_high\n";
    }
    for (SocialGroup group : report.groups) {
        for (Strategy strategy : report.strategies) {
            summary_row(out, format, to_string(group), strategy,
                        find_cell(report, strategy, group));
        }
    }
    for (Strategy strategy : report.strategies) {
        summary_row(out, format, kOverallLabel, strategy, find_overall(report, strategy));
    }
    return out;
}

std::string emit_refusals(const RunReport& report, TableFormat format) {
    std::string out;
    if (format == TableFormat::Markdown) {
        out += "| Social Group |";
        for (Strategy s : report.strategies) {
            out += ' ';
            out += to_string(s);
            out += " |";
        }
        out += '\n';
        out += "|---|";
        for (std::size_t i = 0; i < report.strategies.size(); ++i) out += "---|";
        out += '\n';

        auto row = [&](const char* name, auto cell_of) {
            out += "| ";
            out += name;
            out += " |";
            for (Strategy s : report.strategies) {
                const CellStats* cell = cell_of(s);
                out += ' ';
                if (cell != nullptr && !cell->skipped)
                    out += format_fixed(cell->refusal_percent(), 1) + "%";
                else
                    out += "skipped";
                out += " |";
            }
            out += '\n';
        };
        for (SocialGroup group : report.groups) {
            row(to_string(group), [&](Strategy s) { return find_cell(report, s, group); });
        }
        row(kOverallLabel, [&](Strategy s) { return find_overall(report, s); });
    } else {
        out += "social_group,technique,refusal_percent\n";
        auto row = [&](const char* name, Strategy s, const CellStats* cell) {
            out += name;
            out += ',';
            out += to_string(s);
            out += ',';
            if (cell != nullptr && !cell->skipped)
                out += format_fixed(cell->refusal_percent(), 1);
            out += '\n';
        };
        for (SocialGroup group : report.groups) {
            for (Strategy s : report.strategies) row(to_string(group), s, find_cell(report, s, group));
        }
        for (Strategy s : report.strategies) row(kOverallLabel, s, find_overall(report, s));
    }
    return out;
}

namespace {

std::vector<Strategy> debias_strategies(const RunReport& report) {
    std::vector<Strategy> out;
    for (Strategy s : report.strategies) {
        if (s != Strategy::Baseline) out.push_back(s);
    }
    return out;
}

const TransitionTable* find_transition(const RunReport& report, Strategy strategy,
                                       const SocialGroup* group) {
    if (group == nullptr) {
        const auto it = report.transitions_overall.find(strategy);
        return it == report.transitions_overall.end() ? nullptr : &it->second;
    }
    const auto strat_it = report.transitions.find(strategy);
    if (strat_it == report.transitions.end()) return nullptr;
    const auto it = strat_it->second.find(*group);
    return it == strat_it->second.end() ? nullptr : &it->second;
}

void transition_row(std::string& out, TableFormat format, const char* group_name,
                    Strategy strategy, const TransitionTable* table) {
    const bool have = table != nullptr && table->included > 0;
    if (format == TableFormat::Markdown) {
        out += "| ";
        out += group_name;
        out += " | ";
        out += to_string(strategy);
        if (have) {
            out += " | " + format_fixed(table->pct_cc(), 1) + "% | " +
                   format_fixed(table->pct_ci(), 1) + "% | " +
                   format_fixed(table->pct_ic(), 1) + "% | " +
                   format_fixed(table->pct_ii(), 1) + "% |\n";
        } else {
            out += " | skipped | | | |\n";
        }
    } else {
        out += group_name;
        out += ',';
        out += to_string(strategy);
        if (have) {
            out += ',' + format_fixed(table->pct_cc(), 1) + ',' +
                   format_fixed(table->pct_ci(), 1) + ',' + format_fixed(table->pct_ic(), 1) +
                   ',' + format_fixed(table->pct_ii(), 1) + ',' +
                   std::to_string(table->included) + ',' + std::to_string(table->excluded) +
                   '\n';
        } else {
            out += ",,,,,,\n";
        }
    }
}

}  // namespace

std::string emit_transitions(const RunReport& report, TableFormat format) {
    std::string out;
    if (format == TableFormat::Markdown) {
        out += "| Social Group | Technique | C->C | C->I | I->C | I->I |\n";
        out += "|---|---|---|---|---|---|\n";
    } else {
        out += "social_group,technique,c_to_c,c_to_i,i_to_c,i_to_i,included,excluded\n";
    }
    const std::vector<Strategy> strategies = debias_strategies(report);
    for (SocialGroup group : report.groups) {
        for (Strategy s : strategies) {
            transition_row(out, format, to_string(group), s, find_transition(report, s, &group));
        }
    }
    for (Strategy s : strategies) {
        transition_row(out, format, kOverallLabel, s, find_transition(report, s, nullptr));
    }
    return out;
}

std::string emit_tokens(const RunReport& report, TableFormat format) {
    TokenEstimate total;
    for (const auto& [strategy, estimate] : report.tokens) {
        (void)strategy;
        total.input += estimate.input;
        total.output += estimate.output;
    }

    auto cell = [&](double v) { return std::to_string(static_cast<long long>(std::llround(v))); };

    std::string out;
    if (format == TableFormat::Markdown) {
        out += "| |";
        for (Strategy s : report.strategies) {
            out += ' ';
            out += to_string(s);
            out += " |";
        }
        out += " Total |\n|---|";
        for (std::size_t i = 0; i < report.strategies.size() + 1; ++i) out += "---|";
        out += '\n';

        auto row = [&](const char* name, auto value_of) {
            out += "| ";
            out += name;
            out += " |";
            for (Strategy s : report.strategies) {
                const auto it = report.tokens.find(s);
                out += ' ';
                out += cell(it == report.tokens.end() ? 0.0 : value_of(it->second));
                out += " |";
            }
            out += ' ';
            out += cell(value_of(total));
            out += " |\n";
        };
        row("Input", [](const TokenEstimate& t) { return t.input; });
        row("Output", [](const TokenEstimate& t) { return t.output; });
        row("Total", [](const TokenEstimate& t) { return t.total(); });
    } else {
        out += "technique,input_tokens,output_tokens,total_tokens\n";
        for (Strategy s : report.strategies) {
            const auto it = report.tokens.find(s);
            const TokenEstimate t = it == report.tokens.end() ? TokenEstimate{} : it->second;
            out += std::string(to_string(s)) + ',' + cell(t.input) + ',' + cell(t.output) +
                   ',' + cell(t.total()) + '\n';
        }
        out += std::string("Total,") + cell(total.input) + ',' + cell(total.output) + ',' +
               cell(total.total()) + '\n';
    }
    return out;
}

void export_bootstrap(const RunReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");

    out << "social_group,technique,replicate_index,score\n";
    auto emit_cell = [&](const char* group_name, Strategy strategy, const CellStats* cell) {
        if (cell == nullptr || cell->skipped) return;
        for (std::size_t i = 0; i < cell->bias.replicates.size(); ++i) {
            out << group_name << ',' << to_string(strategy) << ',' << i << ','
                << format_fixed(cell->bias.replicates[i], 6) << '\n';
        }
    };
    for (SocialGroup group : report.groups) {
        for (Strategy strategy : report.strategies) {
            emit_cell(to_string(group), strategy, find_cell(report, strategy, group));
        }
    }
    for (Strategy strategy : report.strategies) {
        emit_cell(kOverallLabel, strategy, find_overall(report, strategy));
    }
    if (!out) throw IoError("failed writing " + path.string());
}

std::map<Strategy, TokenEstimate> token_cost_estimate(std::span<const Transcript> transcripts,
                                                      const GenerationParams& params) {
    std::map<Strategy, double> words;
    std::map<Strategy, TokenEstimate> estimates;
    for (const auto& t : transcripts) {
        double request_words = 0.0;
        std::size_t running_words = 0;
        bool first_assistant = true;
        for (std::size_t i = 0; i < t.messages.size(); ++i) {
            if (t.messages[i].role == Role::Assistant) {
                // the request that produced this reply re-sent all prior messages
                request_words += static_cast<double>(running_words);
                const bool explanation_turn =
                    t.strategy == Strategy::Explanation && first_assistant;
                estimates[t.strategy].output +=
                    explanation_turn ? params.explanation_max_tokens : params.max_tokens;
                first_assistant = false;
            }
            running_words += word_count(t.messages[i].content);
        }
        words[t.strategy] += request_words;
    }
    for (auto& [strategy, estimate] : estimates) {
        estimate.input = words[strategy] * 2048.0 / 1500.0;
    }
    return estimates;
}

}  // namespace selfdebias
