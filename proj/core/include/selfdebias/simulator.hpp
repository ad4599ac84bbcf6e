#pragma once
// Offline stochastic responder with known ground-truth bias behavior.
// Used to validate the whole measurement pipeline: configured outcome
// probabilities on first answers, a correction matrix for post-debias
// turns, and a closed-form expected bias score to recover.

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "selfdebias/bbq.hpp"
#include "selfdebias/chat.hpp"
#include "selfdebias/rng.hpp"

namespace selfdebias {

// Row/column order of the correction matrix.
enum class SimOutcome { Biased = 0, CounterBiased = 1, Unknown = 2, Refusal = 3 };

struct SimulatorProfile {
    double p_target = 0.0;     // bias-aligned option on a first answer
    double p_nontarget = 0.0;  // counter-bias option
    double p_unknown = 1.0;    // the unknown option
    double p_refusal = 0.0;    // a reply the parser must reject
    // correction[first][second]: second-turn outcome distribution after a
    // debias instruction, given the first-turn outcome. Row-stochastic.
    std::array<std::array<double, 4>, 4> correction = identity_correction();
    // Probability that a generated explanation names the invalid assumption.
    double explanation_quality = 1.0;

    static constexpr std::array<std::array<double, 4>, 4> identity_correction() {
        return {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
    }
};

struct ProfileError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Enforces: first-turn probabilities sum to 1 within 1e-12, every
// correction row sums to 1 within 1e-12, all entries in [0,1],
// explanation_quality in [0,1]. Throws ProfileError.
void validate_profile(const SimulatorProfile& profile);

// Reads a profile from JSON (schema documented in the README).
SimulatorProfile load_profile(const std::filesystem::path& path);

struct ProtocolError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Fixed refusal reply; contains no option letter and no option text.
inline constexpr std::string_view kRefusalReply =
    "I cannot make assumptions about individuals.";

// Responds to one conversation turn. The conversation must match one of
// the strategy protocols exactly (instruction sentences and question block
// checked verbatim); anything else throws ProtocolError. Deterministic
// under rng.
ChatResponse simulate_turn(const SimulatorProfile& profile,
                           const std::vector<ChatMessage>& conversation,
                           const BbqRecord& record, Rng& rng);

// Closed-form expectation of the bias score under the profile:
// p_target - p_nontarget. Requires p_refusal == 0.
double expected_bias(const SimulatorProfile& profile);

// Expected bias score of a second answer: the first-turn distribution
// pushed through the correction matrix. Requires zero refusal mass both
// in the profile and in the correction columns.
double expected_bias_after_correction(const SimulatorProfile& profile);

// ChatBackend over the simulator. Each turn draws from an rng stream
// derived from (seed, example_id, strategy, turn index), so results do
// not depend on scheduling or on resume boundaries.
class SimulatorBackend : public ChatBackend {
public:
    SimulatorBackend(SimulatorProfile profile, std::uint64_t seed);

    ChatResponse complete(const ChatRequest& request, const TurnContext& ctx) override;

    const SimulatorProfile& profile() const { return profile_; }

private:
    SimulatorProfile profile_;
    std::uint64_t seed_;
};

// Synthetic ambiguous records in BBQ shape, for offline validation runs.
// Polarity alternates and option order rotates with the index so letter
// positions do not correlate with roles. When `group` is set all records
// belong to it; otherwise records cycle through the nine groups.
std::vector<BbqRecord> synthetic_records(std::size_t n,
                                         std::optional<SocialGroup> group = std::nullopt);

}  // namespace selfdebias
