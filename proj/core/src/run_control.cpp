#include "selfdebias/run_control.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "selfdebias/parsing.hpp"

namespace selfdebias {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------
// JSON (de)serialization of cached records and transcripts
// ---------------------------------------------------------------------

const char* role_name(OptionRole role) {
    switch (role) {
        case OptionRole::Target: return "target";
        case OptionRole::NonTarget: return "nontarget";
        case OptionRole::Unknown: return "unknown";
    }
    return "?";
}

OptionRole role_from_name(const std::string& name) {
    if (name == "target") return OptionRole::Target;
    if (name == "nontarget") return OptionRole::NonTarget;
    if (name == "unknown") return OptionRole::Unknown;
    throw ConfigError("unknown option role '" + name + "'");
}

json record_to_json(const BbqRecord& rec) {
    json options = json::array();
    for (const auto& opt : rec.options) {
        json o{{"text", opt.text}, {"info", opt.info}};
        if (opt.role) o["role"] = role_name(*opt.role);
        options.push_back(std::move(o));
    }
    return json{
        {"example_id", rec.example_id},
        {"category", to_string(rec.category)},
        {"question_polarity", rec.question_polarity == Polarity::Negative ? "neg" : "nonneg"},
        {"context_condition",
         rec.context_condition == ContextCondition::Ambiguous ? "ambig" : "disambig"},
        {"context", rec.context},
        {"question", rec.question},
        {"options", std::move(options)},
        {"label", rec.label},
        {"stereotyped_groups", rec.stereotyped_groups},
    };
}

BbqRecord record_from_json(const json& obj) {
    BbqRecord rec;
    rec.example_id = obj.at("example_id").get<long long>();
    const auto group = group_from_string(obj.at("category").get<std::string>());
    if (!group) throw ConfigError("unknown social group in cache record");
    rec.category = *group;
    rec.question_polarity = obj.at("question_polarity").get<std::string>() == "neg"
                                ? Polarity::Negative
                                : Polarity::NonNegative;
    rec.context_condition = obj.at("context_condition").get<std::string>() == "ambig"
                                ? ContextCondition::Ambiguous
                                : ContextCondition::Disambiguated;
    rec.context = obj.at("context").get<std::string>();
    rec.question = obj.at("question").get<std::string>();
    const json& options = obj.at("options");
    if (!options.is_array() || options.size() != 3)
        throw ConfigError("cache record must have exactly 3 options");
    for (int i = 0; i < 3; ++i) {
        rec.options[i].text = options[i].at("text").get<std::string>();
        rec.options[i].info = options[i].at("info").get<std::vector<std::string>>();
        if (options[i].contains("role"))
            rec.options[i].role = role_from_name(options[i].at("role").get<std::string>());
    }
    rec.label = obj.at("label").get<int>();
    rec.stereotyped_groups = obj.at("stereotyped_groups").get<std::vector<std::string>>();
    return rec;
}

json messages_to_json(const std::vector<ChatMessage>& messages) {
    json out = json::array();
    for (const auto& m : messages) {
        out.push_back({{"role", m.role == Role::User ? "user" : "assistant"},
                       {"content", m.content}});
    }
    return out;
}

std::vector<ChatMessage> messages_from_json(const json& arr) {
    std::vector<ChatMessage> out;
    for (const auto& m : arr) {
        out.push_back({m.at("role").get<std::string>() == "user" ? Role::User : Role::Assistant,
                       m.at("content").get<std::string>()});
    }
    return out;
}

json transcript_to_json(const Transcript& t) {
    json obj{
        {"example_id", t.example_id},
        {"strategy", to_string(t.strategy)},
        {"messages", messages_to_json(t.messages)},
        {"final_answer_raw", t.final_answer_raw},
        {"run_id", t.run_id},
        {"started_at", t.started_at},
        {"finished_at", t.finished_at},
    };
    if (t.first_answer_raw) obj["first_answer_raw"] = *t.first_answer_raw;
    if (t.explanation_raw) obj["explanation_raw"] = *t.explanation_raw;
    return obj;
}

Transcript transcript_from_json(const json& obj) {
    Transcript t;
    t.example_id = obj.at("example_id").get<long long>();
    const auto strategy = strategy_from_string(obj.at("strategy").get<std::string>());
    if (!strategy) throw ConfigError("unknown strategy in cached transcript");
    t.strategy = *strategy;
    t.messages = messages_from_json(obj.at("messages"));
    t.final_answer_raw = obj.at("final_answer_raw").get<std::string>();
    t.run_id = obj.value("run_id", "");
    t.started_at = obj.value("started_at", "");
    t.finished_at = obj.value("finished_at", "");
    if (obj.contains("first_answer_raw"))
        t.first_answer_raw = obj.at("first_answer_raw").get<std::string>();
    if (obj.contains("explanation_raw"))
        t.explanation_raw = obj.at("explanation_raw").get<std::string>();
    return t;
}

}  // namespace

std::string cache_entry_to_json(const CacheEntry& entry) {
    const json obj{
        {"example_id", entry.example_id},
        {"strategy", to_string(entry.strategy)},
        {"run_id", entry.run_id},
        {"completed", entry.completed},
        {"record", record_to_json(entry.record)},
        {"transcript", transcript_to_json(entry.transcript)},
    };
    return obj.dump();
}

CacheEntry cache_entry_from_json(const std::string& line) {
    const json obj = json::parse(line);
    CacheEntry entry;
    entry.example_id = obj.at("example_id").get<long long>();
    const auto strategy = strategy_from_string(obj.at("strategy").get<std::string>());
    if (!strategy) throw ConfigError("unknown strategy in cache entry");
    entry.strategy = *strategy;
    entry.run_id = obj.value("run_id", "");
    entry.completed = obj.at("completed").get<bool>();
    entry.record = record_from_json(obj.at("record"));
    entry.transcript = transcript_from_json(obj.at("transcript"));
    return entry;
}

CacheLoadResult load_cache(const std::filesystem::path& file) {
    CacheLoadResult result;
    std::ifstream in(file);
    if (!in) return result;

    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            CacheEntry entry = cache_entry_from_json(line);
            const CacheKey key{entry.example_id, entry.strategy};
            const auto it = result.entries.find(key);
            if (it != result.entries.end() && it->second.completed && !entry.completed) {
                // never let a stale partial shadow a completed entry
                continue;
            }
            result.entries.insert_or_assign(key, std::move(entry));
        } catch (const std::exception& e) {
            result.warnings.push_back(file.filename().string() + ":" + std::to_string(line_no) +
                                      ": skipping unreadable cache line (" + e.what() + ")");
        }
    }
    return result;
}

CacheWriter::CacheWriter(const std::filesystem::path& file)
    : out_(file, std::ios::app) {
    if (!out_) throw IoError("cannot open cache file for append: " + file.string());
}

void CacheWriter::append(const CacheEntry& entry) {
    const std::string line = cache_entry_to_json(entry);
    std::lock_guard<std::mutex> lock(mutex_);
    out_ << line << '\n';
    out_.flush();
}

// ---------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------

namespace {

std::vector<Strategy> strategies_from_json(const json& arr) {
    std::vector<Strategy> out;
    for (const auto& item : arr) {
        const auto s = strategy_from_string(item.get<std::string>());
        if (!s) throw ConfigError("unknown strategy '" + item.get<std::string>() + "'");
        out.push_back(*s);
    }
    return out;
}

std::vector<SocialGroup> groups_from_json(const json& arr) {
    std::vector<SocialGroup> out;
    for (const auto& item : arr) {
        const auto g = group_from_string(item.get<std::string>());
        if (!g) throw ConfigError("unknown social group '" + item.get<std::string>() + "'");
        out.push_back(*g);
    }
    return out;
}

}  // namespace

void overlay_config_json(RunConfig& config, const std::string& json_text) {
    json obj;
    try {
        obj = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!obj.is_object()) throw ConfigError("config must be a JSON object");

    for (const auto& [key, value] : obj.items()) {
        if (key == "dataset") config.dataset = value.get<std::string>();
        else if (key == "strategies") config.strategies = strategies_from_json(value);
        else if (key == "groups") config.groups = groups_from_json(value);
        else if (key == "backend") {
            const std::string name = value.get<std::string>();
            if (name == "remote") config.backend = BackendKind::Remote;
            else if (name == "simulated" || name == "sim") config.backend = BackendKind::Simulated;
            else throw ConfigError("backend must be 'remote' or 'simulated'");
        }
        else if (key == "profile") config.profile_path = value.get<std::string>();
        else if (key == "base_url") config.endpoint.base_url = value.get<std::string>();
        else if (key == "api_key_env") config.endpoint.api_key_env = value.get<std::string>();
        else if (key == "model") config.endpoint.model_name = value.get<std::string>();
        else if (key == "request_timeout_ms")
            config.endpoint.request_timeout = std::chrono::milliseconds(value.get<long long>());
        else if (key == "max_retries") config.endpoint.max_retries = value.get<int>();
        else if (key == "max_in_flight") config.endpoint.max_in_flight = value.get<int>();
        else if (key == "temperature") config.temperature = value.get<double>();
        else if (key == "max_tokens") config.max_tokens = value.get<int>();
        else if (key == "explanation_max_tokens")
            config.explanation_max_tokens = value.get<int>();
        else if (key == "reps") config.bootstrap_reps = value.get<int>();
        else if (key == "seed") config.seed = value.get<std::uint64_t>();
        else if (key == "sample") config.sample = value.get<std::size_t>();
        else if (key == "cache_dir") config.cache_dir = value.get<std::string>();
        else if (key == "out_dir") config.out_dir = value.get<std::string>();
        else if (key == "run_id") config.run_id = value.get<std::string>();
        else if (key == "verbose") config.verbose = value.get<bool>();
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

RunConfig load_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path.string());
    std::ostringstream buffer;
    buffer << in.rdbuf();
    RunConfig config;
    overlay_config_json(config, buffer.str());
    return config;
}

// ---------------------------------------------------------------------
// Run metadata
// ---------------------------------------------------------------------

namespace {

json meta_to_json(const RunMeta& meta) {
    json strategies = json::array();
    for (Strategy s : meta.strategies) strategies.push_back(to_string(s));
    json groups = json::array();
    for (SocialGroup g : meta.groups) groups.push_back(to_string(g));
    json obj{
        {"run_id", meta.run_id},
        {"backend", meta.backend == BackendKind::Remote ? "remote" : "simulated"},
        {"model_name", meta.model_name},
        {"temperature", meta.temperature},
        {"max_tokens", meta.max_tokens},
        {"explanation_max_tokens", meta.explanation_max_tokens},
        {"bootstrap_reps", meta.bootstrap_reps},
        {"seed", meta.seed},
        {"strategies", std::move(strategies)},
        {"groups", std::move(groups)},
        {"dataset", meta.dataset},
        {"started_at", meta.started_at},
        {"role_failures", meta.role_failures},
    };
    if (meta.sample) obj["sample"] = *meta.sample;
    return obj;
}

RunMeta meta_from_json(const json& obj) {
    RunMeta meta;
    meta.run_id = obj.at("run_id").get<std::string>();
    meta.backend = obj.at("backend").get<std::string>() == "remote" ? BackendKind::Remote
                                                                    : BackendKind::Simulated;
    meta.model_name = obj.value("model_name", "");
    meta.temperature = obj.value("temperature", 1.0);
    meta.max_tokens = obj.value("max_tokens", 25);
    meta.explanation_max_tokens = obj.value("explanation_max_tokens", 100);
    meta.bootstrap_reps = obj.value("bootstrap_reps", 1000);
    meta.seed = obj.value("seed", std::uint64_t{0});
    meta.strategies = strategies_from_json(obj.at("strategies"));
    meta.groups = groups_from_json(obj.at("groups"));
    meta.dataset = obj.value("dataset", "");
    meta.started_at = obj.value("started_at", "");
    meta.role_failures = obj.value("role_failures", std::size_t{0});
    if (obj.contains("sample")) meta.sample = obj.at("sample").get<std::size_t>();
    return meta;
}

std::filesystem::path meta_path(const std::filesystem::path& cache_dir,
                                const std::string& run_id) {
    return cache_dir / (run_id + ".meta.json");
}

std::filesystem::path cache_path(const std::filesystem::path& cache_dir,
                                 const std::string& run_id) {
    return cache_dir / (run_id + ".cache.jsonl");
}

}  // namespace

void write_meta(const RunMeta& meta, const std::filesystem::path& cache_dir) {
    std::ofstream out(meta_path(cache_dir, meta.run_id));
    if (!out) throw IoError("cannot write run metadata under " + cache_dir.string());
    out << meta_to_json(meta).dump(2) << '\n';
}

RunMeta load_meta(const std::filesystem::path& cache_dir, const std::string& run_id) {
    std::ifstream in(meta_path(cache_dir, run_id));
    if (!in) throw EmptyCacheError("no run metadata for '" + run_id + "' under " +
                                   cache_dir.string());
    json obj;
    try {
        obj = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("run metadata is not valid JSON: ") + e.what());
    }
    return meta_from_json(obj);
}

// ---------------------------------------------------------------------
// Report construction
// ---------------------------------------------------------------------

RunReport build_report(const RunMeta& meta, const std::map<CacheKey, CacheEntry>& entries,
                       const std::string& finished_at) {
    RunReport report;
    report.run_id = meta.run_id;
    report.model_name = meta.model_name;
    report.backend = meta.backend == BackendKind::Remote ? "remote" : "simulated";
    report.temperature = meta.temperature;
    report.max_tokens = meta.max_tokens;
    report.explanation_max_tokens = meta.explanation_max_tokens;
    report.seed = meta.seed;
    report.bootstrap_reps = meta.bootstrap_reps;
    report.started_at = meta.started_at;
    report.finished_at = finished_at;
    report.role_failures = meta.role_failures;
    report.strategies = meta.strategies;
    report.groups = meta.groups;

    const GenerationParams params{meta.temperature, meta.max_tokens,
                                  meta.explanation_max_tokens};
    std::vector<Transcript> completed_transcripts;

    // Baseline final answers indexed by example, for the Explanation
    // transition pairing (that protocol has no in-conversation first answer).
    std::map<long long, const CacheEntry*> baseline_by_example;
    for (const auto& [key, entry] : entries) {
        if (entry.strategy == Strategy::Baseline && entry.completed)
            baseline_by_example[entry.example_id] = &entry;
    }

    for (Strategy strategy : meta.strategies) {
        std::map<SocialGroup, std::vector<OutcomeKind>> outcomes;
        std::map<SocialGroup, std::size_t> answered;
        std::map<SocialGroup, std::size_t> dropped;
        std::map<SocialGroup, std::vector<TransitionPair>> pairs;
        std::vector<TransitionPair> pooled_pairs;

        for (const auto& [key, entry] : entries) {
            if (entry.strategy != strategy || !entry.completed) continue;
            const BbqRecord& record = entry.record;
            completed_transcripts.push_back(entry.transcript);

            const ParsedAnswer parsed =
                parse_answer(entry.transcript.final_answer_raw, record);
            if (const auto outcome = classify_outcome(parsed, record)) {
                outcomes[record.category].push_back(outcome->kind);
                ++answered[record.category];
            } else {
                ++dropped[record.category];
            }

            // transition pairing
            std::optional<ParsedAnswer> first;
            if (strategy == Strategy::Reprompting && entry.transcript.first_answer_raw) {
                first = parse_answer(*entry.transcript.first_answer_raw, record);
            } else if (strategy == Strategy::Explanation) {
                const auto it = baseline_by_example.find(entry.example_id);
                if (it != baseline_by_example.end())
                    first = parse_answer(it->second->transcript.final_answer_raw, record);
            }
            if (first) {
                TransitionPair pair;
                pair.first = *first;
                pair.first_correct =
                    !pair.first.is_refusal() && *pair.first.choice == record.label;
                pair.second = parsed;
                pair.second_correct = !parsed.is_refusal() && *parsed.choice == record.label;
                pairs[record.category].push_back(pair);
                pooled_pairs.push_back(std::move(pair));
            }
        }

        const PerGroupResults results =
            per_group_results(outcomes, strategy, meta.bootstrap_reps, meta.seed);

        std::size_t total_answered = 0;
        std::size_t total_dropped = 0;
        for (SocialGroup group : meta.groups) {
            CellStats cell;
            cell.answered = answered.count(group) ? answered.at(group) : 0;
            cell.dropped = dropped.count(group) ? dropped.at(group) : 0;
            cell.skipped = cell.answered + cell.dropped == 0;
            if (const auto it = results.by_group.find(group); it != results.by_group.end())
                cell.bias = it->second;
            total_answered += cell.answered;
            total_dropped += cell.dropped;
            report.cells[strategy][group] = std::move(cell);
        }

        CellStats overall;
        overall.answered = total_answered;
        overall.dropped = total_dropped;
        overall.skipped = total_answered + total_dropped == 0;
        overall.bias = results.aggregate;
        report.overall[strategy] = std::move(overall);

        if (strategy != Strategy::Baseline) {
            for (SocialGroup group : meta.groups) {
                const auto it = pairs.find(group);
                report.transitions[strategy][group] =
                    it == pairs.end() ? TransitionTable{} : transition_table(it->second);
            }
            report.transitions_overall[strategy] = transition_table(pooled_pairs);
        }
    }

    report.tokens = token_cost_estimate(completed_transcripts, params);
    return report;
}

// ---------------------------------------------------------------------
// Report persistence
// ---------------------------------------------------------------------

std::string report_to_json(const RunReport& report) {
    json strategies = json::array();
    for (Strategy s : report.strategies) strategies.push_back(to_string(s));
    json groups = json::array();
    for (SocialGroup g : report.groups) groups.push_back(to_string(g));

    auto cell_json = [](const std::string& group, Strategy strategy, const CellStats& cell) {
        json obj{{"social_group", group},
                 {"technique", to_string(strategy)},
                 {"skipped", cell.skipped},
                 {"answered", cell.answered},
                 {"dropped", cell.dropped}};
        if (!cell.skipped && cell.answered > 0) {
            obj["bias_score"] = cell.bias.score;
            obj["accuracy"] = cell.bias.accuracy;
            obj["ci_low"] = cell.bias.ci_low;
            obj["ci_high"] = cell.bias.ci_high;
        }
        return obj;
    };

    json cells = json::array();
    for (SocialGroup group : report.groups) {
        for (Strategy strategy : report.strategies) {
            const auto strat_it = report.cells.find(strategy);
            if (strat_it == report.cells.end()) continue;
            const auto it = strat_it->second.find(group);
            if (it == strat_it->second.end()) continue;
            cells.push_back(cell_json(to_string(group), strategy, it->second));
        }
    }
    for (Strategy strategy : report.strategies) {
        const auto it = report.overall.find(strategy);
        if (it != report.overall.end())
            cells.push_back(cell_json("Overall", strategy, it->second));
    }

    auto transition_json = [](const std::string& group, Strategy strategy,
                              const TransitionTable& t) {
        return json{{"social_group", group},
                    {"technique", to_string(strategy)},
                    {"cc", t.cc},
                    {"ci", t.ci},
                    {"ic", t.ic},
                    {"ii", t.ii},
                    {"included", t.included},
                    {"excluded", t.excluded}};
    };

    json transitions = json::array();
    for (const auto& [strategy, by_group] : report.transitions) {
        for (const auto& [group, table] : by_group)
            transitions.push_back(transition_json(to_string(group), strategy, table));
    }
    for (const auto& [strategy, table] : report.transitions_overall)
        transitions.push_back(transition_json("Overall", strategy, table));

    json tokens = json::object();
    for (const auto& [strategy, estimate] : report.tokens) {
        tokens[to_string(strategy)] = {{"input", estimate.input}, {"output", estimate.output}};
    }

    const json obj{
        {"run_id", report.run_id},
        {"model_name", report.model_name},
        {"backend", report.backend},
        {"temperature", report.temperature},
        {"max_tokens", report.max_tokens},
        {"explanation_max_tokens", report.explanation_max_tokens},
        {"seed", report.seed},
        {"bootstrap_reps", report.bootstrap_reps},
        {"started_at", report.started_at},
        {"finished_at", report.finished_at},
        {"role_failures", report.role_failures},
        {"strategies", strategies},
        {"groups", groups},
        {"cells", cells},
        {"transitions", transitions},
        {"tokens", tokens},
    };
    return obj.dump(2);
}

RunReport report_from_json(const std::string& text) {
    const json obj = json::parse(text);
    RunReport report;
    report.run_id = obj.at("run_id").get<std::string>();
    report.model_name = obj.value("model_name", "");
    report.backend = obj.value("backend", "");
    report.temperature = obj.value("temperature", 1.0);
    report.max_tokens = obj.value("max_tokens", 25);
    report.explanation_max_tokens = obj.value("explanation_max_tokens", 100);
    report.seed = obj.value("seed", std::uint64_t{0});
    report.bootstrap_reps = obj.value("bootstrap_reps", 1000);
    report.started_at = obj.value("started_at", "");
    report.finished_at = obj.value("finished_at", "");
    report.role_failures = obj.value("role_failures", std::size_t{0});
    report.strategies = strategies_from_json(obj.at("strategies"));
    report.groups = groups_from_json(obj.at("groups"));

    for (const auto& cell : obj.at("cells")) {
        const std::string group_name = cell.at("social_group").get<std::string>();
        const auto strategy = strategy_from_string(cell.at("technique").get<std::string>());
        if (!strategy) throw ConfigError("unknown technique in report");
        CellStats stats;
        stats.skipped = cell.at("skipped").get<bool>();
        stats.answered = cell.at("answered").get<std::size_t>();
        stats.dropped = cell.at("dropped").get<std::size_t>();
        if (cell.contains("bias_score")) {
            stats.bias.score = cell.at("bias_score").get<double>();
            stats.bias.accuracy = cell.value("accuracy", 0.0);
            stats.bias.ci_low = cell.at("ci_low").get<double>();
            stats.bias.ci_high = cell.at("ci_high").get<double>();
        }
        if (group_name == "Overall") {
            report.overall[*strategy] = std::move(stats);
        } else {
            const auto group = group_from_string(group_name);
            if (!group) throw ConfigError("unknown social group in report");
            report.cells[*strategy][*group] = std::move(stats);
        }
    }
    for (const auto& row : obj.at("transitions")) {
        const std::string group_name = row.at("social_group").get<std::string>();
        const auto strategy = strategy_from_string(row.at("technique").get<std::string>());
        if (!strategy) throw ConfigError("unknown technique in report");
        TransitionTable table;
        table.cc = row.at("cc").get<std::size_t>();
        table.ci = row.at("ci").get<std::size_t>();
        table.ic = row.at("ic").get<std::size_t>();
        table.ii = row.at("ii").get<std::size_t>();
        table.included = row.at("included").get<std::size_t>();
        table.excluded = row.at("excluded").get<std::size_t>();
        if (group_name == "Overall") {
            report.transitions_overall[*strategy] = table;
        } else {
            const auto group = group_from_string(group_name);
            if (!group) throw ConfigError("unknown social group in report");
            report.transitions[*strategy][*group] = table;
        }
    }
    if (obj.contains("tokens")) {
        for (const auto& [name, value] : obj.at("tokens").items()) {
            const auto strategy = strategy_from_string(name);
            if (!strategy) continue;
            report.tokens[*strategy] = {value.at("input").get<double>(),
                                        value.at("output").get<double>()};
        }
    }
    return report;
}

std::vector<std::filesystem::path> write_report_files(const RunReport& report,
                                                      const std::filesystem::path& out_dir) {
    std::filesystem::create_directories(out_dir);
    std::vector<std::filesystem::path> written;

    auto write_text = [&](const std::string& table, const char* ext, const std::string& text) {
        const std::filesystem::path path = out_dir / (report.run_id + "." + table + "." + ext);
        std::ofstream out(path);
        if (!out) throw IoError("cannot write " + path.string());
        out << text;
        written.push_back(path);
    };

    write_text("summary", "md", emit_summary(report, TableFormat::Markdown));
    write_text("summary", "csv", emit_summary(report, TableFormat::Csv));
    write_text("refusals", "md", emit_refusals(report, TableFormat::Markdown));
    write_text("refusals", "csv", emit_refusals(report, TableFormat::Csv));
    write_text("transitions", "md", emit_transitions(report, TableFormat::Markdown));
    write_text("transitions", "csv", emit_transitions(report, TableFormat::Csv));
    write_text("tokens", "md", emit_tokens(report, TableFormat::Markdown));
    write_text("tokens", "csv", emit_tokens(report, TableFormat::Csv));

    const std::filesystem::path bootstrap = out_dir / (report.run_id + ".bootstrap.csv");
    export_bootstrap(report, bootstrap);
    written.push_back(bootstrap);

    write_text("report", "json", report_to_json(report));
    return written;
}

// ---------------------------------------------------------------------
// Run execution
// ---------------------------------------------------------------------

std::vector<BbqRecord> prepare_records(const RunConfig& config,
                                       std::vector<RoleFailure>* failures) {
    const std::vector<BbqRecord> loaded = load_dataset(config.dataset);
    const std::vector<BbqRecord> ambiguous = filter_ambiguous(loaded);
    std::vector<BbqRecord> resolved = resolve_roles_all(ambiguous, failures);

    if (!config.groups.empty()) {
        const std::set<SocialGroup> wanted(config.groups.begin(), config.groups.end());
        std::erase_if(resolved,
                      [&](const BbqRecord& r) { return wanted.count(r.category) == 0; });
    }
    if (config.sample) {
        resolved = sample_subset(resolved, *config.sample, config.seed);
    }
    return resolved;
}

namespace {

// Counts every completion attempt issued to the real backend.
class CountingBackend : public ChatBackend {
public:
    CountingBackend(ChatBackend& inner, std::atomic<std::size_t>& issued,
                    std::atomic<std::size_t>& failed)
        : inner_(inner), issued_(issued), failed_(failed) {}

    ChatResponse complete(const ChatRequest& request, const TurnContext& ctx) override {
        issued_.fetch_add(1, std::memory_order_relaxed);
        try {
            return inner_.complete(request, ctx);
        } catch (...) {
            failed_.fetch_add(1, std::memory_order_relaxed);
            throw;
        }
    }

private:
    ChatBackend& inner_;
    std::atomic<std::size_t>& issued_;
    std::atomic<std::size_t>& failed_;
};

std::string backend_model_name(const RunConfig& config) {
    if (config.backend == BackendKind::Remote) return config.endpoint.model_name;
    return "simulator(" + config.profile_path.filename().string() + ")";
}

}  // namespace

RunOutcome execute_run(const RunConfig& config, ChatBackend& backend,
                       const std::vector<BbqRecord>& records, std::size_t role_failures) {
    RunOutcome outcome;
    const std::string run_id = config.effective_run_id();
    std::filesystem::create_directories(config.cache_dir);

    std::set<SocialGroup> present;
    for (const auto& rec : records) present.insert(rec.category);

    RunMeta meta;
    meta.run_id = run_id;
    meta.backend = config.backend;
    meta.model_name = backend_model_name(config);
    meta.temperature = config.temperature;
    meta.max_tokens = config.max_tokens;
    meta.explanation_max_tokens = config.explanation_max_tokens;
    meta.bootstrap_reps = config.bootstrap_reps;
    meta.seed = config.seed;
    meta.strategies = config.strategies;
    meta.groups.assign(present.begin(), present.end());
    meta.dataset = config.dataset.string();
    meta.sample = config.sample;
    meta.started_at = utc_timestamp_now();
    meta.role_failures = role_failures;
    write_meta(meta, config.cache_dir);

    const std::filesystem::path cache_file = cache_path(config.cache_dir, run_id);
    CacheLoadResult cached = load_cache(cache_file);
    for (const auto& warning : cached.warnings)
        std::fprintf(stderr, "[cache] %s\n", warning.c_str());

    struct Task {
        const BbqRecord* record;
        Strategy strategy;
        const Transcript* partial;  // resume point for two-turn protocols
    };
    std::vector<Task> tasks;
    for (Strategy strategy : config.strategies) {
        for (const auto& record : records) {
            const CacheKey key{record.example_id, strategy};
            const auto it = cached.entries.find(key);
            if (it != cached.entries.end() && it->second.completed) {
                ++outcome.stats.cache_hits;
                continue;
            }
            const Transcript* partial =
                it != cached.entries.end() ? &it->second.transcript : nullptr;
            tasks.push_back({&record, strategy, partial});
        }
    }
    outcome.stats.transcripts_total = config.strategies.size() * records.size();

    CacheWriter writer(cache_file);
    std::atomic<std::size_t> issued{0};
    std::atomic<std::size_t> failed{0};
    std::atomic<std::size_t> completed{0};
    std::atomic<std::size_t> transcript_failures{0};
    CountingBackend counted(backend, issued, failed);
    const GenerationParams params = config.generation_params();

    std::mutex failure_log_mutex;
    std::vector<std::string> failure_sample;
    auto note_failure = [&](const char* what) {
        transcript_failures.fetch_add(1);
        if (config.verbose) {
            std::fprintf(stderr, "[run] %s\n", what);
            return;
        }
        std::lock_guard<std::mutex> lock(failure_log_mutex);
        if (failure_sample.size() < 5) failure_sample.push_back(what);
    };

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= tasks.size()) break;
            const Task& task = tasks[i];
            try {
                Transcript t = run_strategy(counted, task.strategy, *task.record, params,
                                            run_id, task.partial);
                writer.append({task.record->example_id, task.strategy, run_id, *task.record,
                               std::move(t), true});
                completed.fetch_add(1);
            } catch (const PartialTranscriptError& e) {
                writer.append({task.record->example_id, task.strategy, run_id, *task.record,
                               e.partial, false});
                note_failure(e.what());
            } catch (const std::exception& e) {
                note_failure(e.what());
            }
        }
    };

    const std::size_t n_workers = std::max<std::size_t>(
        1, std::min<std::size_t>(static_cast<std::size_t>(config.endpoint.max_in_flight),
                                 tasks.empty() ? 1 : tasks.size()));
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (std::size_t i = 0; i < n_workers; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();

    outcome.stats.requests_issued = issued.load();
    outcome.stats.requests_failed = failed.load();
    outcome.stats.transcripts_completed = completed.load() + outcome.stats.cache_hits;
    outcome.stats.transcripts_failed = transcript_failures.load();

    if (!failure_sample.empty()) {
        for (const auto& line : failure_sample)
            std::fprintf(stderr, "[run] %s\n", line.c_str());
        if (outcome.stats.transcripts_failed > failure_sample.size())
            std::fprintf(stderr, "[run] ... and %zu more failures (rerun with --verbose)\n",
                         outcome.stats.transcripts_failed - failure_sample.size());
    }

    // Score what is durable in the cache, so run and score agree exactly.
    const CacheLoadResult final_cache = load_cache(cache_file);
    outcome.report = build_report(meta, final_cache.entries, utc_timestamp_now());
    outcome.files_written = write_report_files(outcome.report, config.out_dir);
    return outcome;
}

namespace {

std::unique_ptr<ChatBackend> make_backend(const RunConfig& config) {
    if (config.backend == BackendKind::Remote) {
        EndpointConfig endpoint = config.endpoint;
        endpoint.verbose = endpoint.verbose || config.verbose;
        return std::make_unique<RemoteBackend>(std::move(endpoint));
    }
    if (config.profile_path.empty())
        throw ConfigError("simulated backend requires --profile");
    return std::make_unique<SimulatorBackend>(load_profile(config.profile_path), config.seed);
}

}  // namespace

RunOutcome cmd_run(const RunConfig& config) {
    std::vector<RoleFailure> failures;
    const std::vector<BbqRecord> records = prepare_records(config, &failures);
    for (const auto& failure : failures)
        std::fprintf(stderr, "[ingest] example %lld excluded: %s\n", failure.example_id,
                     failure.reason.c_str());
    const auto backend = make_backend(config);
    return execute_run(config, *backend, records, failures.size());
}

RunOutcome cmd_score(const std::filesystem::path& cache_dir,
                     const std::optional<std::string>& run_id,
                     const std::optional<std::filesystem::path>& out_dir) {
    std::string id;
    if (run_id) {
        id = *run_id;
    } else {
        std::vector<std::string> found;
        if (std::filesystem::is_directory(cache_dir)) {
            for (const auto& entry : std::filesystem::directory_iterator(cache_dir)) {
                const std::string name = entry.path().filename().string();
                constexpr std::string_view suffix = ".cache.jsonl";
                if (name.size() > suffix.size() &&
                    name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0) {
                    found.push_back(name.substr(0, name.size() - suffix.size()));
                }
            }
        }
        if (found.empty()) throw EmptyCacheError("no cache files under " + cache_dir.string());
        if (found.size() > 1)
            throw ConfigError("multiple runs cached under " + cache_dir.string() +
                              "; pass --run-id");
        id = found.front();
    }

    const CacheLoadResult cache = load_cache(cache_path(cache_dir, id));
    for (const auto& warning : cache.warnings)
        std::fprintf(stderr, "[cache] %s\n", warning.c_str());
    if (cache.entries.empty())
        throw EmptyCacheError("cache for run '" + id + "' is empty");

    const RunMeta meta = load_meta(cache_dir, id);

    RunOutcome outcome;
    outcome.report = build_report(meta, cache.entries, utc_timestamp_now());
    outcome.stats.transcripts_total = cache.entries.size();
    for (const auto& [key, entry] : cache.entries)
        if (entry.completed) ++outcome.stats.transcripts_completed;
    outcome.files_written =
        write_report_files(outcome.report, out_dir.value_or(std::filesystem::path("out")));
    return outcome;
}

// ---------------------------------------------------------------------
// Dataset validation
// ---------------------------------------------------------------------

ValidationSummary validate_dataset(const std::filesystem::path& path,
                                   bool expect_reference_counts) {
    ValidationSummary summary;
    const std::vector<BbqRecord> records = load_dataset(path);
    const std::vector<BbqRecord> ambiguous = filter_ambiguous(records);
    resolve_roles_all(ambiguous, &summary.role_failures);
    summary.counts = group_counts(ambiguous);
    summary.total = ambiguous.size();

    if (expect_reference_counts) {
        summary.checked_reference = true;
        summary.matches_reference = true;
        for (const auto& [group, expected] : reference_ambiguous_counts()) {
            const long long delta = static_cast<long long>(summary.counts.at(group)) -
                                    static_cast<long long>(expected);
            summary.deltas[group] = delta;
            if (delta != 0) summary.matches_reference = false;
        }
    }
    return summary;
}

std::string format_validation(const ValidationSummary& summary) {
    std::ostringstream out;
    out << "Ambiguous questions per social group:\n";
    for (const auto& [group, count] : summary.counts) {
        out << "  " << to_string(group) << ": " << count;
        if (summary.checked_reference) {
            const long long delta = summary.deltas.at(group);
            if (delta != 0) out << "  (expected " << count - delta << ", delta " << delta << ")";
        }
        out << '\n';
    }
    out << "  Total: " << summary.total << '\n';
    if (!summary.role_failures.empty()) {
        out << "Role-resolution failures (" << summary.role_failures.size() << "):\n";
        for (const auto& failure : summary.role_failures)
            out << "  example " << failure.example_id << ": " << failure.reason << '\n';
    } else {
        out << "Role resolution succeeded on all ambiguous records.\n";
    }
    if (summary.checked_reference) {
        out << (summary.matches_reference ? "Counts match the published BBQ release.\n"
                                          : "Counts DO NOT match the published BBQ release.\n");
    }
    return out.str();
}

// ---------------------------------------------------------------------
// Temperature sweep and simulator validation
// ---------------------------------------------------------------------

namespace {

std::string format_temperature(double t) {
    std::string s = format_fixed(t, 3);
    while (!s.empty() && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
}

}  // namespace

TempSweepResult cmd_temp_sweep(const RunConfig& config, const std::vector<double>& temps,
                               std::size_t n, SocialGroup group) {
    RunConfig base = config;
    base.groups = {group};

    std::vector<RoleFailure> failures;
    std::vector<BbqRecord> pool = prepare_records(base, &failures);
    if (n > pool.size())
        throw SampleTooLargeError("temp-sweep sample " + std::to_string(n) +
                                  " exceeds pool of " + std::to_string(pool.size()));
    // One fixed subset shared by every temperature.
    const std::vector<BbqRecord> subset = sample_subset(pool, n, config.seed);

    TempSweepResult result;
    result.temperatures = temps;
    const std::string base_id = config.effective_run_id();

    for (double temp : temps) {
        RunConfig c = base;
        c.temperature = temp;
        c.sample.reset();  // already sampled
        c.run_id = base_id + "-t" + format_temperature(temp);
        const auto backend = make_backend(c);
        const RunOutcome outcome = execute_run(c, *backend, subset, failures.size());

        for (Strategy strategy : c.strategies) {
            const auto it = outcome.report.overall.find(strategy);
            if (it == outcome.report.overall.end() || it->second.skipped) continue;
            result.results[temp][strategy] = it->second.bias;

            // One bootstrap-distribution file per (temperature, technique).
            const std::filesystem::path path =
                c.out_dir / (c.run_id + "." + to_string(strategy) + ".bootstrap.csv");
            std::ofstream out(path);
            if (!out) throw IoError("cannot write " + path.string());
            out << "temperature,technique,replicate_index,score\n";
            const auto& replicates = it->second.bias.replicates;
            for (std::size_t i = 0; i < replicates.size(); ++i) {
                out << format_temperature(temp) << ',' << to_string(strategy) << ',' << i << ','
                    << format_fixed(replicates[i], 6) << '\n';
            }
            result.files_written.push_back(path);
        }
    }
    return result;
}

SimulateResult cmd_simulate(const RunConfig& config, std::size_t n) {
    if (config.profile_path.empty())
        throw ConfigError("simulate requires --profile");
    const SimulatorProfile profile = load_profile(config.profile_path);

    std::optional<SocialGroup> group;
    if (config.groups.size() == 1) group = config.groups.front();
    const std::vector<BbqRecord> records = synthetic_records(n, group);

    RunConfig c = config;
    c.backend = BackendKind::Simulated;
    SimulatorBackend backend(profile, c.seed);

    SimulateResult result;
    result.outcome = execute_run(c, backend, records);
    result.expected_first_turn =
        profile.p_refusal == 0.0 ? expected_bias(profile)
                                 : std::numeric_limits<double>::quiet_NaN();
    try {
        result.expected_after_correction = expected_bias_after_correction(profile);
    } catch (const std::exception&) {
        result.expected_after_correction = std::numeric_limits<double>::quiet_NaN();
    }
    for (Strategy strategy : c.strategies) {
        const auto it = result.outcome.report.overall.find(strategy);
        if (it != result.outcome.report.overall.end() && !it->second.skipped)
            result.observed[strategy] = it->second.bias.score;
    }
    return result;
}

}  // namespace selfdebias
