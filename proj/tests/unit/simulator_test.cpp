#include <array>
#include <cmath>

#include "doctest.h"
#include "selfdebias/client.hpp"
#include "selfdebias/metrics.hpp"
#include "selfdebias/parsing.hpp"
#include "selfdebias/simulator.hpp"
#include "selfdebias/strategies.hpp"
#include "test_util.hpp"

using namespace selfdebias;

namespace {

SimulatorProfile profile_3_1_6() {
    SimulatorProfile profile;
    profile.p_target = 0.3;
    profile.p_nontarget = 0.1;
    profile.p_unknown = 0.6;
    profile.p_refusal = 0.0;
    return profile;
}

std::vector<ChatMessage> first_answer_turn(const BbqRecord& rec) {
    return {{Role::User,
             std::string(kAnswerInstruction) + "\n" + render_question_block(rec)}};
}

}  // namespace

TEST_CASE("degenerate profiles pick the configured option") {
    const auto records = synthetic_records(4);
    const BbqRecord& rec = records[0];  // Negative polarity: biased = target

    SimulatorProfile all_unknown;
    all_unknown.p_unknown = 1.0;
    Rng rng(1);
    const ChatResponse unknown = simulate_turn(all_unknown, first_answer_turn(rec), rec, rng);
    const ParsedAnswer parsed = parse_answer(unknown.text, rec);
    REQUIRE(parsed.choice.has_value());
    CHECK(*parsed.choice == rec.option_with_role(OptionRole::Unknown));
    CHECK(*parsed.choice == rec.label);

    SimulatorProfile all_target;
    all_target.p_target = 1.0;
    all_target.p_unknown = 0.0;
    Rng rng2(1);
    const ChatResponse biased = simulate_turn(all_target, first_answer_turn(rec), rec, rng2);
    const auto outcome = classify_outcome(parse_answer(biased.text, rec), rec);
    REQUIRE(outcome.has_value());
    CHECK(outcome->kind == OutcomeKind::Biased);
}

TEST_CASE("refusal replies never parse to a letter") {
    SimulatorProfile refuser;
    refuser.p_unknown = 0.0;
    refuser.p_refusal = 1.0;
    for (const auto& rec : synthetic_records(9)) {
        Rng rng(3);
        const ChatResponse response = simulate_turn(refuser, first_answer_turn(rec), rec, rng);
        CHECK(response.text == kRefusalReply);
        CHECK(parse_answer(response.text, rec).is_refusal());
    }
}

TEST_CASE("reprompt turns sample from the correction row of the first outcome") {
    const auto records = synthetic_records(2);
    const BbqRecord& rec = records[0];

    SimulatorProfile profile = profile_3_1_6();
    // Biased answers always correct to Unknown on the second turn.
    profile.correction[0] = {0.0, 0.0, 1.0, 0.0};

    const bool target_biased = rec.question_polarity == Polarity::Negative;
    const int biased_idx =
        rec.option_with_role(target_biased ? OptionRole::Target : OptionRole::NonTarget);
    std::string first_reply = "(";
    first_reply += option_letter(biased_idx);
    first_reply += ") ";
    first_reply += rec.options[biased_idx].text;

    std::vector<ChatMessage> conversation = first_answer_turn(rec);
    conversation.push_back({Role::Assistant, first_reply});
    conversation.push_back({Role::User, std::string(kRepromptInstruction)});

    Rng rng(17);
    const ChatResponse second = simulate_turn(profile, conversation, rec, rng);
    const ParsedAnswer parsed = parse_answer(second.text, rec);
    REQUIRE(parsed.choice.has_value());
    CHECK(*parsed.choice == rec.option_with_role(OptionRole::Unknown));
}

TEST_CASE("identity correction repeats the first outcome on reprompt") {
    const auto records = synthetic_records(6);
    const SimulatorProfile profile = profile_3_1_6();
    for (const auto& rec : records) {
        for (SimOutcome first : {SimOutcome::Biased, SimOutcome::CounterBiased,
                                 SimOutcome::Unknown}) {
            // Build the first reply for this outcome by asking a degenerate profile.
            SimulatorProfile degenerate;
            degenerate.p_target = first == SimOutcome::Biased ? 1.0 : 0.0;
            degenerate.p_nontarget = first == SimOutcome::CounterBiased ? 1.0 : 0.0;
            degenerate.p_unknown = first == SimOutcome::Unknown ? 1.0 : 0.0;
            Rng rng_first(5);
            const ChatResponse reply =
                simulate_turn(degenerate, first_answer_turn(rec), rec, rng_first);

            std::vector<ChatMessage> conversation = first_answer_turn(rec);
            conversation.push_back({Role::Assistant, reply.text});
            conversation.push_back({Role::User, std::string(kRepromptInstruction)});
            Rng rng_second(23);
            const ChatResponse second = simulate_turn(profile, conversation, rec, rng_second);
            CHECK(second.text == reply.text);
        }
    }
}

TEST_CASE("first-turn frequencies match the profile at n = 10,000") {
    const SimulatorProfile profile = profile_3_1_6();
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];

    std::array<std::size_t, 4> counts{};
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_stream(99, {i});
        const ChatResponse response = simulate_turn(profile, first_answer_turn(rec), rec, rng);
        const auto outcome = classify_outcome(parse_answer(response.text, rec), rec);
        if (!outcome) {
            ++counts[3];
        } else if (outcome->kind == OutcomeKind::Biased) {
            ++counts[0];
        } else if (outcome->kind == OutcomeKind::CounterBiased) {
            ++counts[1];
        } else {
            ++counts[2];
        }
    }
    CHECK(std::abs(static_cast<double>(counts[0]) / n - 0.3) <= 0.02);
    CHECK(std::abs(static_cast<double>(counts[1]) / n - 0.1) <= 0.02);
    CHECK(std::abs(static_cast<double>(counts[2]) / n - 0.6) <= 0.02);
    CHECK(counts[3] == 0);
}

TEST_CASE("correction frequencies match the configured row at n = 10,000") {
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];

    SimulatorProfile profile = profile_3_1_6();
    profile.correction[0] = {0.2, 0.1, 0.7, 0.0};  // row for Biased first answers

    const bool target_biased = rec.question_polarity == Polarity::Negative;
    const int biased_idx =
        rec.option_with_role(target_biased ? OptionRole::Target : OptionRole::NonTarget);
    std::string first_reply = "(";
    first_reply += option_letter(biased_idx);
    first_reply += ") ";
    first_reply += rec.options[biased_idx].text;

    std::vector<ChatMessage> conversation = first_answer_turn(rec);
    conversation.push_back({Role::Assistant, first_reply});
    conversation.push_back({Role::User, std::string(kRepromptInstruction)});

    std::array<std::size_t, 3> counts{};
    const std::size_t n = 10000;
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_stream(123, {i});
        const ChatResponse second = simulate_turn(profile, conversation, rec, rng);
        const auto outcome = classify_outcome(parse_answer(second.text, rec), rec);
        REQUIRE(outcome.has_value());
        if (outcome->kind == OutcomeKind::Biased) ++counts[0];
        else if (outcome->kind == OutcomeKind::CounterBiased) ++counts[1];
        else ++counts[2];
    }
    CHECK(std::abs(static_cast<double>(counts[0]) / n - 0.2) <= 0.03);
    CHECK(std::abs(static_cast<double>(counts[1]) / n - 0.1) <= 0.03);
    CHECK(std::abs(static_cast<double>(counts[2]) / n - 0.7) <= 0.03);
}

TEST_CASE("expected bias closed form") {
    SimulatorProfile profile;
    profile.p_target = 1.0;
    profile.p_unknown = 0.0;
    CHECK(expected_bias(profile) == 1.0);

    profile = SimulatorProfile{};  // all unknown
    CHECK(expected_bias(profile) == 0.0);

    CHECK(expected_bias(profile_3_1_6()) == doctest::Approx(0.2).epsilon(1e-12));

    SimulatorProfile with_refusals = profile_3_1_6();
    with_refusals.p_unknown = 0.55;
    with_refusals.p_refusal = 0.05;
    CHECK_THROWS_AS(expected_bias(with_refusals), std::invalid_argument);
}

TEST_CASE("empirical score converges to the closed form over 20 seeds") {
    const SimulatorProfile profile = profile_3_1_6();
    const double expected = expected_bias(profile);
    const std::size_t n = 1000;
    const auto records = synthetic_records(n);

    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        SimulatorBackend backend(profile, seed);
        OutcomeSet set;
        for (const auto& rec : records) {
            ChatRequest request;
            request.messages = first_answer_turn(rec);
            const ChatResponse response =
                backend.complete(request, {&rec, Strategy::Baseline});
            const auto outcome = classify_outcome(parse_answer(response.text, rec), rec);
            REQUIRE(outcome.has_value());
            set.outcomes.push_back(outcome->kind);
        }
        const double score = bias_score(set);
        CHECK(std::abs(score - expected) <= 3.0 * std::sqrt(1.0 / static_cast<double>(n)));
    }
}

TEST_CASE("expected bias cross-checked against 100,000 simulated outcomes") {
    const SimulatorProfile profile = profile_3_1_6();
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];

    OutcomeSet set;
    const std::size_t n = 100000;
    set.outcomes.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = derive_stream(2024, {i});
        const ChatResponse response = simulate_turn(profile, first_answer_turn(rec), rec, rng);
        const auto outcome = classify_outcome(parse_answer(response.text, rec), rec);
        REQUIRE(outcome.has_value());
        set.outcomes.push_back(outcome->kind);
    }
    CHECK(std::abs(bias_score(set) - expected_bias(profile)) < 0.006);  // ~3 sigma
}

TEST_CASE("complete_simulated is a transparent adapter onto simulate_turn") {
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];
    const SimulatorProfile profile = profile_3_1_6();

    // all-unknown degenerate: reply is the unknown option's letter form
    SimulatorProfile all_unknown;
    all_unknown.p_unknown = 1.0;
    ChatRequest request;
    request.messages = first_answer_turn(rec);
    Rng rng(4);
    const ChatResponse degenerate = complete_simulated(all_unknown, request, rec, rng);
    const ParsedAnswer parsed = parse_answer(degenerate.text, rec);
    REQUIRE(parsed.choice.has_value());
    CHECK(*parsed.choice == rec.label);

    // same rng state twice: identical response
    Rng a(99);
    Rng b(99);
    CHECK(complete_simulated(profile, request, rec, a).text ==
          complete_simulated(profile, request, rec, b).text);

    // a three-message conversation reaches the simulator intact: the
    // adapter answers the reprompt turn, which only exists at 3 messages
    ChatRequest reprompt;
    reprompt.messages = first_answer_turn(rec);
    reprompt.messages.push_back({Role::Assistant, degenerate.text});
    reprompt.messages.push_back({Role::User, std::string(kRepromptInstruction)});
    Rng c(5);
    const ChatResponse second = complete_simulated(profile, reprompt, rec, c);
    CHECK(!second.text.empty());

    Rng d(5);
    CHECK(simulate_turn(profile, reprompt.messages, rec, d).text == second.text);
}

TEST_CASE("uniform profile across nine groups: every group's score sits in every CI") {
    const SimulatorProfile profile = profile_3_1_6();
    std::map<SocialGroup, std::vector<OutcomeKind>> outcomes;

    const auto records = synthetic_records(1800);  // 200 per group
    SimulatorBackend backend(profile, 31);
    for (const auto& rec : records) {
        ChatRequest request;
        request.messages = first_answer_turn(rec);
        const ChatResponse response = backend.complete(request, {&rec, Strategy::Baseline});
        const auto outcome = classify_outcome(parse_answer(response.text, rec), rec);
        REQUIRE(outcome.has_value());
        outcomes[rec.category].push_back(outcome->kind);
    }

    const PerGroupResults results =
        per_group_results(outcomes, Strategy::Baseline, 300, 31);
    REQUIRE(results.by_group.size() == 9);
    for (const auto& [group_a, result_a] : results.by_group) {
        for (const auto& [group_b, result_b] : results.by_group) {
            CHECK(result_a.score >= result_b.ci_low);
            CHECK(result_a.score <= result_b.ci_high);
        }
    }
}

TEST_CASE("expected bias after correction") {
    SimulatorProfile profile = profile_3_1_6();
    profile.correction[0] = {0.5, 0.0, 0.5, 0.0};
    // target mass 0.15, nontarget 0.1 -> 0.05
    CHECK(expected_bias_after_correction(profile) == doctest::Approx(0.05).epsilon(1e-12));
    CHECK(expected_bias_after_correction(profile_3_1_6()) ==
          doctest::Approx(0.2).epsilon(1e-12));
}

TEST_CASE("simulator is deterministic under the rng state") {
    const auto records = synthetic_records(1);
    const SimulatorProfile profile = profile_3_1_6();
    Rng a(77);
    Rng b(77);
    const ChatResponse ra = simulate_turn(profile, first_answer_turn(records[0]), records[0], a);
    const ChatResponse rb = simulate_turn(profile, first_answer_turn(records[0]), records[0], b);
    CHECK(ra.text == rb.text);
}

TEST_CASE("the simulator rejects drifted prompts") {
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];
    const SimulatorProfile profile = profile_3_1_6();
    Rng rng(1);

    std::vector<ChatMessage> drifted = {
        {Role::User, "Please answer the question with a single letter.\n" +
                         render_question_block(rec)}};
    CHECK_THROWS_AS(simulate_turn(profile, drifted, rec, rng), ProtocolError);

    std::vector<ChatMessage> wrong_block = {
        {Role::User, std::string(kAnswerInstruction) + "\nsome other question"}};
    CHECK_THROWS_AS(simulate_turn(profile, wrong_block, rec, rng), ProtocolError);

    std::vector<ChatMessage> empty;
    CHECK_THROWS_AS(simulate_turn(profile, empty, rec, rng), ProtocolError);
}

TEST_CASE("explanation quality controls whether the assumption is named") {
    const auto records = synthetic_records(1);
    const BbqRecord& rec = records[0];
    const std::string target_text = rec.options[rec.option_with_role(OptionRole::Target)].text;

    SimulatorProfile good = profile_3_1_6();
    good.explanation_quality = 1.0;
    std::vector<ChatMessage> turn = {
        {Role::User, std::string(kExplainInstruction) + "\n" + render_question_block(rec)}};
    Rng rng(9);
    const ChatResponse explanation = simulate_turn(good, turn, rec, rng);
    CHECK(explanation.text.find("invalid assumption") != std::string::npos);
    CHECK(explanation.text.find(target_text) != std::string::npos);

    SimulatorProfile poor = profile_3_1_6();
    poor.explanation_quality = 0.0;
    Rng rng2(9);
    const ChatResponse vague = simulate_turn(poor, turn, rec, rng2);
    CHECK(vague.text.find("invalid assumption") == std::string::npos);
}

TEST_CASE("profile validation") {
    SimulatorProfile bad = profile_3_1_6();
    bad.p_unknown = 0.7;  // sums to 1.1
    CHECK_THROWS_AS(validate_profile(bad), ProfileError);

    SimulatorProfile bad_row = profile_3_1_6();
    bad_row.correction[2] = {0.5, 0.0, 0.0, 0.0};
    CHECK_THROWS_AS(validate_profile(bad_row), ProfileError);

    CHECK_NOTHROW(validate_profile(profile_3_1_6()));
}

TEST_CASE("profiles load from JSON files") {
    const SimulatorProfile uniform =
        load_profile(sdb_test::profile_dir() / "uniform_bias.json");
    CHECK(uniform.p_target == 0.3);
    CHECK(uniform.correction == SimulatorProfile::identity_correction());

    const SimulatorProfile debias =
        load_profile(sdb_test::profile_dir() / "debias_half.json");
    CHECK(debias.correction[0][2] == 0.5);

    CHECK_THROWS_AS(load_profile(sdb_test::profile_dir() / "missing.json"), ProfileError);
}

TEST_CASE("synthetic records rotate option order and alternate polarity") {
    const auto records = synthetic_records(18);
    bool saw_label[3] = {false, false, false};
    bool saw_polarity[2] = {false, false};
    for (const auto& rec : records) {
        saw_label[rec.label] = true;
        saw_polarity[rec.question_polarity == Polarity::Negative ? 0 : 1] = true;
        CHECK(rec.context_condition == ContextCondition::Ambiguous);
    }
    CHECK(saw_label[0]);
    CHECK(saw_label[1]);
    CHECK(saw_label[2]);
    CHECK(saw_polarity[0]);
    CHECK(saw_polarity[1]);

    const auto grouped = synthetic_records(5, SocialGroup::GenderIdentity);
    for (const auto& rec : grouped) CHECK(rec.category == SocialGroup::GenderIdentity);
}
