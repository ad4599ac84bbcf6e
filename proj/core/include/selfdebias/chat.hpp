#pragma once
// Chat-completion message types shared by the client, the simulator and
// the conversation strategies, plus the backend interface the strategies
// talk to.

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace selfdebias {

struct BbqRecord;

enum class Role { User, Assistant };

struct ChatMessage {
    Role role;
    std::string content;
};

enum class FinishReason { Stop, Length, Other };

struct TokenUsage {
    long long input_tokens = 0;
    long long output_tokens = 0;
};

struct ChatResponse {
    std::string text;
    FinishReason finish_reason = FinishReason::Stop;
    std::optional<TokenUsage> usage;
};

struct ChatRequest {
    std::vector<ChatMessage> messages;
    double temperature = 1.0;
    int max_tokens = 25;
};

// Throws std::invalid_argument on a request violating the wire contract:
// non-empty message list, first message from the user, non-empty user
// contents, temperature in [0,2], positive max_tokens.
void validate_request(const ChatRequest& request);

enum class Strategy { Baseline, Explanation, Reprompting };

constexpr const char* to_string(Strategy s) {
    switch (s) {
        case Strategy::Baseline: return "Baseline";
        case Strategy::Explanation: return "Explanation";
        case Strategy::Reprompting: return "Reprompting";
    }
    return "?";
}

std::optional<Strategy> strategy_from_string(const std::string& name);

struct TurnContext {
    const BbqRecord* record = nullptr;
    Strategy strategy = Strategy::Baseline;
};

// One chat completion turn. Implementations: the HTTP client and the
// offline simulator. The context identifies the question under
// evaluation; the HTTP backend ignores it.
class ChatBackend {
public:
    virtual ~ChatBackend() = default;
    virtual ChatResponse complete(const ChatRequest& request,
                                  const TurnContext& ctx) = 0;
};

}  // namespace selfdebias
