#pragma once
// BBQ dataset ingestion: JSONL loading, the ambiguous-context subset, and
// role resolution (target / non-target / unknown) from answer metadata.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfdebias {

enum class SocialGroup {
    Age,
    Disability,
    GenderIdentity,
    Nationality,
    PhysicalAppearance,
    RaceEthnicity,
    Religion,
    SexualOrientation,
    SocioeconomicStatus,
};

inline constexpr std::array<SocialGroup, 9> kAllGroups = {
    SocialGroup::Age,
    SocialGroup::Disability,
    SocialGroup::GenderIdentity,
    SocialGroup::Nationality,
    SocialGroup::PhysicalAppearance,
    SocialGroup::RaceEthnicity,
    SocialGroup::Religion,
    SocialGroup::SexualOrientation,
    SocialGroup::SocioeconomicStatus,
};

// Display name as used in report tables, e.g. "Race/Ethnicity".
const char* to_string(SocialGroup g);

// Accepts display names, BBQ file category strings ("Race_ethnicity",
// "SES", ...) and compact CLI spellings, case-insensitively.
std::optional<SocialGroup> group_from_string(const std::string& name);

enum class Polarity { Negative, NonNegative };
enum class ContextCondition { Ambiguous, Disambiguated };
enum class OptionRole { Target, NonTarget, Unknown };

struct AnswerOption {
    std::string text;                 // display string shown to the model
    std::vector<std::string> info;    // answer_info tags from the dataset
    std::optional<OptionRole> role;   // assigned by resolve_roles
};

struct BbqRecord {
    long long example_id = 0;
    SocialGroup category = SocialGroup::Age;
    Polarity question_polarity = Polarity::Negative;
    ContextCondition context_condition = ContextCondition::Ambiguous;
    std::string context;
    std::string question;
    std::array<AnswerOption, 3> options;
    int label = 0;  // index of the correct option
    std::vector<std::string> stereotyped_groups;

    bool roles_resolved() const {
        return options[0].role && options[1].role && options[2].role;
    }
    // Index of the option carrying `role`; requires resolved roles.
    int option_with_role(OptionRole role) const;
};

struct FileNotFoundError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct SchemaError : std::runtime_error {
    SchemaError(std::string file, int line, std::string field, const std::string& what)
        : std::runtime_error(what), file(std::move(file)), line(line), field(std::move(field)) {}
    std::string file;
    int line;  // 1-based line within the file
    std::string field;
};

struct RoleResolutionError : std::runtime_error {
    RoleResolutionError(long long example_id, const std::string& what)
        : std::runtime_error(what), example_id(example_id) {}
    long long example_id;
};

struct SampleTooLargeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Loads one JSONL file, or every *.jsonl file (sorted by name) when given
// a directory. Throws FileNotFoundError / SchemaError.
std::vector<BbqRecord> load_dataset(const std::filesystem::path& path);

// Records with an ambiguous context, original order preserved.
std::vector<BbqRecord> filter_ambiguous(const std::vector<BbqRecord>& records);

// Assigns Target / NonTarget / Unknown roles from the answer_info tags and
// stereotyped_groups metadata. Throws RoleResolutionError when the
// metadata does not identify exactly one unknown option and exactly one
// target, or when an ambiguous record's label is not the unknown option.
BbqRecord resolve_roles(const BbqRecord& record);

struct RoleFailure {
    long long example_id;
    std::string reason;
};

// resolve_roles over a list; failing records are dropped and reported.
std::vector<BbqRecord> resolve_roles_all(const std::vector<BbqRecord>& records,
                                         std::vector<RoleFailure>* failures = nullptr);

// Counts per social group; every group key is present (zero when absent).
std::map<SocialGroup, std::size_t> group_counts(const std::vector<BbqRecord>& records);

// Uniform sample of n records without replacement, deterministic under
// seed. Throws SampleTooLargeError when n exceeds the pool.
std::vector<BbqRecord> sample_subset(const std::vector<BbqRecord>& records,
                                     std::size_t n, std::uint64_t seed);

// Ambiguous-question counts of the published BBQ release, used by
// validate-dataset --expect-paper-counts.
const std::map<SocialGroup, std::size_t>& reference_ambiguous_counts();

}  // namespace selfdebias
