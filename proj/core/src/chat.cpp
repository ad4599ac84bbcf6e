#include "selfdebias/chat.hpp"

#include <algorithm>
#include <cctype>

namespace selfdebias {

void validate_request(const ChatRequest& request) {
    if (request.messages.empty())
        throw std::invalid_argument("chat request has no messages");
    if (request.messages.front().role != Role::User)
        throw std::invalid_argument("chat request must start with a user message");
    for (const auto& m : request.messages) {
        if (m.role == Role::User && m.content.empty())
            throw std::invalid_argument("user message content must be non-empty");
    }
    if (request.temperature < 0.0 || request.temperature > 2.0)
        throw std::invalid_argument("temperature must be in [0, 2]");
    if (request.max_tokens <= 0)
        throw std::invalid_argument("max_tokens must be positive");
}

std::optional<Strategy> strategy_from_string(const std::string& name) {
    std::string lower(name);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (lower == "baseline") return Strategy::Baseline;
    if (lower == "explanation") return Strategy::Explanation;
    if (lower == "reprompting") return Strategy::Reprompting;
    return std::nullopt;
}

}  // namespace selfdebias
