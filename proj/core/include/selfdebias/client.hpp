#pragma once
// Chat-completion client over HTTP with retry, exponential backoff and a
// process-wide in-flight bound, plus the thin adapter onto the simulator.

#include <chrono>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>

#include "selfdebias/bbq.hpp"
#include "selfdebias/chat.hpp"
#include "selfdebias/rng.hpp"
#include "selfdebias/simulator.hpp"

namespace selfdebias {

struct EndpointConfig {
    std::string base_url;  // e.g. https://api.example.com/v1
    std::string api_key_env = "OPENAI_API_KEY";
    std::string model_name = "gpt-3.5-turbo";
    std::chrono::milliseconds request_timeout{30000};
    int max_retries = 3;
    int max_in_flight = 4;
    std::chrono::milliseconds initial_backoff{1000};
    std::chrono::milliseconds max_backoff{30000};
    bool verbose = false;  // log request/response bodies (key redacted)
};

struct ClientError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct AuthError : ClientError {
    using ClientError::ClientError;
};
struct RateLimitedError : ClientError {
    using ClientError::ClientError;
};
struct TransportError : ClientError {
    using ClientError::ClientError;
};
struct MalformedResponseError : ClientError {
    using ClientError::ClientError;
};

// Exponential backoff, doubling from `initial` with +/-20% jitter, capped
// at `cap`. next() never returns less than the previous delay.
class BackoffSchedule {
public:
    BackoffSchedule(std::chrono::milliseconds initial, std::chrono::milliseconds cap,
                    std::uint64_t seed);
    std::chrono::milliseconds next();

private:
    std::chrono::milliseconds initial_;
    std::chrono::milliseconds cap_;
    std::chrono::milliseconds last_{0};
    int attempt_ = 0;
    Rng rng_;
};

// HTTP chat-completion client. Safe for concurrent use: the in-flight
// bound is enforced with a shared semaphore across all callers of one
// instance. Retries transient failures (429, 5xx, timeouts) with
// exponential backoff; other 4xx are never retried.
class HttpChatClient {
public:
    using Sleeper = std::function<void(std::chrono::milliseconds)>;

    explicit HttpChatClient(EndpointConfig config, Sleeper sleeper = {});
    ~HttpChatClient();

    HttpChatClient(const HttpChatClient&) = delete;
    HttpChatClient& operator=(const HttpChatClient&) = delete;

    // Returns the first assistant message of the completion.
    // Throws AuthError (missing key, 401/403), RateLimitedError (429 after
    // retries), TransportError, MalformedResponseError.
    ChatResponse complete(const ChatRequest& request);

    const EndpointConfig& config() const { return config_; }

private:
    struct Impl;
    EndpointConfig config_;
    std::unique_ptr<Impl> impl_;
};

// Thin adapter: one simulated completion, deterministic under rng.
ChatResponse complete_simulated(const SimulatorProfile& profile,
                                const ChatRequest& request,
                                const BbqRecord& record, Rng& rng);

// ChatBackend over HttpChatClient (the per-record context is ignored).
class RemoteBackend : public ChatBackend {
public:
    explicit RemoteBackend(EndpointConfig config) : client_(std::move(config)) {}

    ChatResponse complete(const ChatRequest& request, const TurnContext&) override {
        return client_.complete(request);
    }

private:
    HttpChatClient client_;
};

}  // namespace selfdebias
