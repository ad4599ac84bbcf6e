#include "selfdebias/bbq.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"
#include "selfdebias/rng.hpp"

namespace selfdebias {

using nlohmann::json;

const char* to_string(SocialGroup g) {
    switch (g) {
        case SocialGroup::Age: return "Age";
        case SocialGroup::Disability: return "Disability";
        case SocialGroup::GenderIdentity: return "Gender Identity";
        case SocialGroup::Nationality: return "Nationality";
        case SocialGroup::PhysicalAppearance: return "Physical Appearance";
        case SocialGroup::RaceEthnicity: return "Race/Ethnicity";
        case SocialGroup::Religion: return "Religion";
        case SocialGroup::SexualOrientation: return "Sexual Orientation";
        case SocialGroup::SocioeconomicStatus: return "Socioeconomic Status";
    }
    return "?";
}

namespace {

// lowercase, alphanumerics only: "Gender_identity" -> "genderidentity",
// "low SES" -> "lowses". Used for every metadata string comparison.
std::string normalize_tag(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    for (char c : s) {
        if (std::isalnum(static_cast<unsigned char>(c)))
            out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
    return out;
}

const std::set<std::string>& unknown_markers() {
    // The dataset's closed set of unknown-answer phrasings, normalized.
    static const std::set<std::string> markers = {
        "unknown",
        "cantbedetermined",
        "cannotbedetermined",
        "cantanswer",
        "cannotanswer",
        "notknown",
        "notanswerable",
        "notenoughinfo",
        "notenoughinformation",
        "undetermined",
        "noanswer",
    };
    return markers;
}

bool is_unknown_option(const AnswerOption& option) {
    return std::any_of(option.info.begin(), option.info.end(), [](const std::string& tag) {
        return unknown_markers().count(normalize_tag(tag)) > 0;
    });
}

bool matches_stereotyped_groups(const AnswerOption& option,
                                const std::vector<std::string>& groups) {
    for (const auto& tag : option.info) {
        const std::string norm = normalize_tag(tag);
        if (norm.empty()) continue;
        for (const auto& g : groups) {
            if (normalize_tag(g) == norm) return true;
        }
    }
    return false;
}

}  // namespace

std::optional<SocialGroup> group_from_string(const std::string& name) {
    static const std::map<std::string, SocialGroup> lookup = {
        {"age", SocialGroup::Age},
        {"disability", SocialGroup::Disability},
        {"disabilitystatus", SocialGroup::Disability},
        {"gender", SocialGroup::GenderIdentity},
        {"genderidentity", SocialGroup::GenderIdentity},
        {"nationality", SocialGroup::Nationality},
        {"physicalappearance", SocialGroup::PhysicalAppearance},
        {"raceethnicity", SocialGroup::RaceEthnicity},
        {"race", SocialGroup::RaceEthnicity},
        {"religion", SocialGroup::Religion},
        {"sexualorientation", SocialGroup::SexualOrientation},
        {"ses", SocialGroup::SocioeconomicStatus},
        {"socioeconomicstatus", SocialGroup::SocioeconomicStatus},
    };
    const auto it = lookup.find(normalize_tag(name));
    if (it == lookup.end()) return std::nullopt;
    return it->second;
}

int BbqRecord::option_with_role(OptionRole role) const {
    for (int i = 0; i < 3; ++i) {
        if (options[i].role == role) return i;
    }
    throw RoleResolutionError(example_id, "record has no option with the requested role");
}

namespace {

[[noreturn]] void schema_fail(const std::string& file, int line, const std::string& field,
                              const std::string& detail) {
    std::ostringstream msg;
    msg << file << ":" << line << ": field '" << field << "': " << detail;
    throw SchemaError(file, line, field, msg.str());
}

const json& require_field(const json& obj, const char* field, const std::string& file, int line) {
    const auto it = obj.find(field);
    if (it == obj.end()) schema_fail(file, line, field, "missing");
    return *it;
}

std::string require_string(const json& obj, const char* field, const std::string& file, int line) {
    const json& v = require_field(obj, field, file, line);
    if (!v.is_string()) schema_fail(file, line, field, "expected a string");
    return v.get<std::string>();
}

long long require_int(const json& obj, const char* field, const std::string& file, int line) {
    const json& v = require_field(obj, field, file, line);
    if (!v.is_number_integer()) schema_fail(file, line, field, "expected an integer");
    return v.get<long long>();
}

std::vector<std::string> string_list(const json& v) {
    std::vector<std::string> out;
    if (v.is_string()) {
        out.push_back(v.get<std::string>());
        return out;
    }
    for (const auto& item : v) {
        if (item.is_string()) out.push_back(item.get<std::string>());
    }
    return out;
}

BbqRecord parse_record(const json& obj, const std::string& file, int line) {
    BbqRecord rec;
    rec.example_id = require_int(obj, "example_id", file, line);

    const std::string category = require_string(obj, "category", file, line);
    const auto group = group_from_string(category);
    if (!group) schema_fail(file, line, "category", "unrecognized social group '" + category + "'");
    rec.category = *group;

    const std::string polarity = require_string(obj, "question_polarity", file, line);
    if (polarity == "neg")
        rec.question_polarity = Polarity::Negative;
    else if (polarity == "nonneg")
        rec.question_polarity = Polarity::NonNegative;
    else
        schema_fail(file, line, "question_polarity", "expected 'neg' or 'nonneg', got '" + polarity + "'");

    const std::string condition = require_string(obj, "context_condition", file, line);
    if (condition == "ambig")
        rec.context_condition = ContextCondition::Ambiguous;
    else if (condition == "disambig")
        rec.context_condition = ContextCondition::Disambiguated;
    else
        schema_fail(file, line, "context_condition", "expected 'ambig' or 'disambig', got '" + condition + "'");

    rec.context = require_string(obj, "context", file, line);
    rec.question = require_string(obj, "question", file, line);

    static constexpr const char* kAnswerFields[3] = {"ans0", "ans1", "ans2"};
    for (int i = 0; i < 3; ++i) {
        rec.options[i].text = require_string(obj, kAnswerFields[i], file, line);
    }

    const long long label = require_int(obj, "label", file, line);
    if (label < 0 || label > 2) schema_fail(file, line, "label", "expected 0..2");
    rec.label = static_cast<int>(label);

    const json& info = require_field(obj, "answer_info", file, line);
    if (!info.is_object()) schema_fail(file, line, "answer_info", "expected an object");
    for (int i = 0; i < 3; ++i) {
        const auto it = info.find(kAnswerFields[i]);
        if (it == info.end())
            schema_fail(file, line, "answer_info", std::string("missing entry for ") + kAnswerFields[i]);
        rec.options[i].info = string_list(*it);
    }

    const json& meta = require_field(obj, "additional_metadata", file, line);
    if (!meta.is_object()) schema_fail(file, line, "additional_metadata", "expected an object");
    if (const auto it = meta.find("stereotyped_groups"); it != meta.end()) {
        rec.stereotyped_groups = string_list(*it);
    }
    return rec;
}

void load_file(const std::filesystem::path& path, std::vector<BbqRecord>& out) {
    std::ifstream in(path);
    if (!in) throw FileNotFoundError("cannot open dataset file: " + path.string());

    std::string line;
    int line_no = 0;
    const std::string name = path.filename().string();
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r\n") == std::string::npos) continue;
        json obj;
        try {
            obj = json::parse(line);
        } catch (const json::parse_error& e) {
            schema_fail(name, line_no, "<line>", std::string("malformed JSON: ") + e.what());
        }
        if (!obj.is_object()) schema_fail(name, line_no, "<line>", "expected a JSON object");
        out.push_back(parse_record(obj, name, line_no));
    }
}

}  // namespace

std::vector<BbqRecord> load_dataset(const std::filesystem::path& path) {
    std::vector<BbqRecord> records;
    if (std::filesystem::is_directory(path)) {
        std::vector<std::filesystem::path> files;
        for (const auto& entry : std::filesystem::directory_iterator(path)) {
            if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
                files.push_back(entry.path());
        }
        if (files.empty())
            throw FileNotFoundError("no .jsonl files under " + path.string());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) load_file(f, records);
    } else if (std::filesystem::exists(path)) {
        load_file(path, records);
    } else {
        throw FileNotFoundError("dataset path does not exist: " + path.string());
    }
    return records;
}

std::vector<BbqRecord> filter_ambiguous(const std::vector<BbqRecord>& records) {
    std::vector<BbqRecord> out;
    out.reserve(records.size());
    std::copy_if(records.begin(), records.end(), std::back_inserter(out),
                 [](const BbqRecord& r) {
                     return r.context_condition == ContextCondition::Ambiguous;
                 });
    return out;
}

BbqRecord resolve_roles(const BbqRecord& record) {
    BbqRecord out = record;

    int unknown_index = -1;
    for (int i = 0; i < 3; ++i) {
        if (is_unknown_option(out.options[i])) {
            if (unknown_index >= 0)
                throw RoleResolutionError(record.example_id,
                                          "multiple options carry the unknown marker");
            unknown_index = i;
        }
    }
    if (unknown_index < 0)
        throw RoleResolutionError(record.example_id, "no option carries the unknown marker");

    int target_index = -1;
    int nontarget_index = -1;
    for (int i = 0; i < 3; ++i) {
        if (i == unknown_index) continue;
        if (matches_stereotyped_groups(out.options[i], out.stereotyped_groups)) {
            if (target_index >= 0)
                throw RoleResolutionError(record.example_id,
                                          "both group options match stereotyped_groups");
            target_index = i;
        } else {
            nontarget_index = i;
        }
    }
    if (target_index < 0)
        throw RoleResolutionError(record.example_id,
                                  "neither group option matches stereotyped_groups");

    out.options[unknown_index].role = OptionRole::Unknown;
    out.options[target_index].role = OptionRole::Target;
    out.options[nontarget_index].role = OptionRole::NonTarget;

    // For ambiguous questions the labeled answer must be the unknown one;
    // a mismatch means the metadata is inconsistent, so flag it rather
    // than score on a guess.
    if (out.context_condition == ContextCondition::Ambiguous && out.label != unknown_index)
        throw RoleResolutionError(record.example_id,
                                  "ambiguous record's label is not the unknown option");
    return out;
}

std::vector<BbqRecord> resolve_roles_all(const std::vector<BbqRecord>& records,
                                         std::vector<RoleFailure>* failures) {
    std::vector<BbqRecord> out;
    out.reserve(records.size());
    for (const auto& rec : records) {
        try {
            out.push_back(resolve_roles(rec));
        } catch (const RoleResolutionError& e) {
            if (failures) failures->push_back({rec.example_id, e.what()});
        }
    }
    return out;
}

std::map<SocialGroup, std::size_t> group_counts(const std::vector<BbqRecord>& records) {
    std::map<SocialGroup, std::size_t> counts;
    for (SocialGroup g : kAllGroups) counts[g] = 0;
    for (const auto& rec : records) ++counts[rec.category];
    return counts;
}

std::vector<BbqRecord> sample_subset(const std::vector<BbqRecord>& records, std::size_t n,
                                     std::uint64_t seed) {
    if (n > records.size()) {
        throw SampleTooLargeError("sample size " + std::to_string(n) + " exceeds pool of " +
                                  std::to_string(records.size()));
    }
    std::vector<std::size_t> index(records.size());
    std::iota(index.begin(), index.end(), 0);

    // Partial Fisher-Yates with platform-stable draws.
    Rng rng = derive_stream(seed, {0x5ab5e7ULL});
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(bounded(rng, records.size() - i));
        std::swap(index[i], index[j]);
    }

    std::vector<BbqRecord> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(records[index[i]]);
    return out;
}

const std::map<SocialGroup, std::size_t>& reference_ambiguous_counts() {
    static const std::map<SocialGroup, std::size_t> counts = {
        {SocialGroup::Age, 1840},
        {SocialGroup::Disability, 782},
        {SocialGroup::GenderIdentity, 2812},
        {SocialGroup::Nationality, 1535},
        {SocialGroup::PhysicalAppearance, 773},
        {SocialGroup::RaceEthnicity, 3349},
        {SocialGroup::Religion, 600},
        {SocialGroup::SexualOrientation, 411},
        {SocialGroup::SocioeconomicStatus, 3454},
    };
    return counts;
}

}  // namespace selfdebias
