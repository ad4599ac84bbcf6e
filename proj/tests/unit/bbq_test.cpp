#include <algorithm>
#include <set>

#include "doctest.h"
#include "selfdebias/bbq.hpp"
#include "selfdebias/rng.hpp"
#include "selfdebias/simulator.hpp"
#include "test_util.hpp"

using namespace selfdebias;
using sdb_test::data_dir;

TEST_CASE("load_dataset reads the BBQ release schema") {
    const auto records = load_dataset(data_dir() / "bbq_sample.jsonl");
    REQUIRE(records.size() == 9);

    const BbqRecord& first = records.front();
    CHECK(first.example_id == 1);
    CHECK(first.category == SocialGroup::Age);
    CHECK(first.question_polarity == Polarity::Negative);
    CHECK(first.context_condition == ContextCondition::Ambiguous);
    CHECK(first.options[1].text == "My grandpa");
    CHECK(first.options[0].info == std::vector<std::string>{"Unknown", "unknown"});
    CHECK(first.label == 0);
    CHECK(first.stereotyped_groups == std::vector<std::string>{"old"});
}

TEST_CASE("load_dataset: empty file gives an empty list") {
    sdb_test::TempDir tmp("bbq-empty");
    const auto path = tmp.path() / "empty.jsonl";
    std::ofstream(path).close();
    CHECK(load_dataset(path).empty());
}

TEST_CASE("load_dataset: missing answer field names the field and line") {
    try {
        load_dataset(data_dir() / "bbq_bad_schema.jsonl");
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.field == "ans2");
        CHECK(e.line == 2);
    }
}

TEST_CASE("load_dataset: malformed JSON line reports its line number") {
    sdb_test::TempDir tmp("bbq-garbled");
    const auto path = tmp.path() / "garbled.jsonl";
    std::ofstream(path) << "{not json\n";
    try {
        load_dataset(path);
        FAIL("expected SchemaError");
    } catch (const SchemaError& e) {
        CHECK(e.line == 1);
    }
}

TEST_CASE("load_dataset: missing path") {
    CHECK_THROWS_AS(load_dataset(data_dir() / "no_such_file.jsonl"), FileNotFoundError);
}

TEST_CASE("load_dataset accepts a directory of jsonl files") {
    sdb_test::TempDir tmp("bbq-dir");
    sdb_test::write_bbq_jsonl(tmp.path() / "b.jsonl", synthetic_records(3));
    sdb_test::write_bbq_jsonl(tmp.path() / "a.jsonl", synthetic_records(2));
    const auto records = load_dataset(tmp.path());
    REQUIRE(records.size() == 5);
    // files load in name order
    CHECK(records[0].example_id == 1);
    CHECK(records[2].example_id == 1);
}

TEST_CASE("filter_ambiguous keeps ambiguous records in order and is idempotent") {
    const auto records = load_dataset(data_dir() / "bbq_sample.jsonl");
    const auto ambiguous = filter_ambiguous(records);
    CHECK(ambiguous.size() == 7);
    for (const auto& rec : ambiguous)
        CHECK(rec.context_condition == ContextCondition::Ambiguous);

    std::vector<long long> ids;
    for (const auto& rec : ambiguous) ids.push_back(rec.example_id);
    CHECK(ids == std::vector<long long>{1, 2, 3, 4, 5, 6, 31});

    const auto twice = filter_ambiguous(ambiguous);
    CHECK(twice.size() == ambiguous.size());
}

TEST_CASE("filter_ambiguous: all-disambiguated input gives an empty list") {
    auto records = load_dataset(data_dir() / "bbq_sample.jsonl");
    std::erase_if(records, [](const BbqRecord& r) {
        return r.context_condition == ContextCondition::Ambiguous;
    });
    CHECK(filter_ambiguous(records).empty());
}

TEST_CASE("resolve_roles on the tutoring example") {
    const auto records = load_dataset(data_dir() / "bbq_sample.jsonl");
    const auto it = std::find_if(records.begin(), records.end(),
                                 [](const BbqRecord& r) { return r.example_id == 31; });
    REQUIRE(it != records.end());

    const BbqRecord resolved = resolve_roles(*it);
    CHECK(resolved.options[0].role == OptionRole::NonTarget);
    CHECK(resolved.options[1].role == OptionRole::Unknown);
    CHECK(resolved.options[2].role == OptionRole::Target);
    CHECK(resolved.option_with_role(OptionRole::Unknown) == resolved.label);
}

TEST_CASE("resolve_roles failure modes") {
    const auto records = load_dataset(data_dir() / "bbq_role_failures.jsonl");
    REQUIRE(records.size() == 4);

    CHECK_THROWS_AS(resolve_roles(records[0]), RoleResolutionError);  // two unknown markers
    CHECK_THROWS_AS(resolve_roles(records[1]), RoleResolutionError);  // no stereotype match
    CHECK_THROWS_AS(resolve_roles(records[2]), RoleResolutionError);  // label not unknown
    CHECK_NOTHROW(resolve_roles(records[3]));

    std::vector<RoleFailure> failures;
    const auto resolved = resolve_roles_all(records, &failures);
    CHECK(resolved.size() == 1);
    CHECK(resolved[0].example_id == 104);
    REQUIRE(failures.size() == 3);
    CHECK(failures[0].example_id == 101);
}

TEST_CASE("resolved records carry each role exactly once") {
    for (const auto& rec : synthetic_records(30)) {
        std::set<OptionRole> roles;
        for (const auto& opt : rec.options) {
            REQUIRE(opt.role.has_value());
            roles.insert(*opt.role);
        }
        CHECK(roles.size() == 3);
    }
}

TEST_CASE("group_counts") {
    const auto ambiguous = filter_ambiguous(load_dataset(data_dir() / "bbq_sample.jsonl"));
    const auto counts = group_counts(ambiguous);
    CHECK(counts.size() == 9);
    CHECK(counts.at(SocialGroup::Age) == 3);
    CHECK(counts.at(SocialGroup::Religion) == 1);
    CHECK(counts.at(SocialGroup::GenderIdentity) == 2);
    CHECK(counts.at(SocialGroup::RaceEthnicity) == 1);
    CHECK(counts.at(SocialGroup::Nationality) == 0);

    std::size_t sum = 0;
    for (const auto& [group, count] : counts) sum += count;
    CHECK(sum == ambiguous.size());

    const auto zero = group_counts({});
    for (const auto& [group, count] : zero) CHECK(count == 0);
}

TEST_CASE("sample_subset is deterministic, injective and complete at n = size") {
    const auto pool = synthetic_records(200);

    const auto a = sample_subset(pool, 50, 7);
    const auto b = sample_subset(pool, 50, 7);
    REQUIRE(a.size() == 50);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].example_id == b[i].example_id);

    std::set<long long> ids;
    for (const auto& rec : a) ids.insert(rec.example_id);
    CHECK(ids.size() == 50);

    const auto all = sample_subset(pool, pool.size(), 11);
    std::set<long long> all_ids;
    for (const auto& rec : all) all_ids.insert(rec.example_id);
    CHECK(all_ids.size() == pool.size());

    CHECK_THROWS_AS(sample_subset(pool, pool.size() + 1, 3), SampleTooLargeError);

    const auto c = sample_subset(pool, 50, 8);
    bool any_difference = false;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c[i].example_id != a[i].example_id) any_difference = true;
    CHECK(any_difference);
}

TEST_CASE("group_from_string accepts dataset, display and CLI spellings") {
    CHECK(group_from_string("Race_ethnicity") == SocialGroup::RaceEthnicity);
    CHECK(group_from_string("Race/Ethnicity") == SocialGroup::RaceEthnicity);
    CHECK(group_from_string("SES") == SocialGroup::SocioeconomicStatus);
    CHECK(group_from_string("gender_identity") == SocialGroup::GenderIdentity);
    CHECK(group_from_string("Physical_appearance") == SocialGroup::PhysicalAppearance);
    CHECK(!group_from_string("martians").has_value());
}

TEST_CASE("reference counts total 15,556") {
    std::size_t total = 0;
    for (const auto& [group, count] : reference_ambiguous_counts()) total += count;
    CHECK(total == 15556);
}
