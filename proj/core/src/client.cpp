#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "httplib.h"

#include "selfdebias/client.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <mutex>
#include <semaphore>
#include <thread>

#include "json.hpp"

namespace selfdebias {

using nlohmann::json;

BackoffSchedule::BackoffSchedule(std::chrono::milliseconds initial,
                                 std::chrono::milliseconds cap, std::uint64_t seed)
    : initial_(initial), cap_(cap), rng_(derive_stream(seed, {0xbac0ffULL})) {}

std::chrono::milliseconds BackoffSchedule::next() {
    const double base =
        std::min(static_cast<double>(initial_.count()) * std::pow(2.0, attempt_),
                 static_cast<double>(cap_.count()));
    ++attempt_;
    const double jittered = base * (0.8 + 0.4 * uniform01(rng_));
    auto delay = std::chrono::milliseconds(
        static_cast<long long>(std::min(jittered, static_cast<double>(cap_.count()))));
    // Keep the sequence nondecreasing even when jitter at the cap would dip.
    delay = std::max(delay, last_);
    last_ = delay;
    return delay;
}

namespace {

struct ParsedUrl {
    std::string host;  // scheme://authority
    std::string path_prefix;
};

ParsedUrl split_base_url(const std::string& base_url) {
    const auto scheme_end = base_url.find("://");
    if (scheme_end == std::string::npos)
        throw TransportError("base_url must include a scheme: " + base_url);
    const auto path_start = base_url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {base_url, ""};
    std::string prefix = base_url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {base_url.substr(0, path_start), prefix};
}

const char* role_name(Role role) { return role == Role::User ? "user" : "assistant"; }

json request_body(const EndpointConfig& config, const ChatRequest& request) {
    json messages = json::array();
    for (const auto& m : request.messages) {
        messages.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    return json{{"model", config.model_name},
                {"messages", std::move(messages)},
                {"temperature", request.temperature},
                {"max_tokens", request.max_tokens}};
}

ChatResponse parse_completion(const std::string& body) {
    json obj;
    try {
        obj = json::parse(body);
    } catch (const json::parse_error& e) {
        throw MalformedResponseError(std::string("response is not JSON: ") + e.what());
    }
    const auto choices = obj.find("choices");
    if (choices == obj.end() || !choices->is_array() || choices->empty())
        throw MalformedResponseError("response has no choices");
    const json& first = (*choices)[0];

    ChatResponse out;
    try {
        out.text = first.at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        throw MalformedResponseError("choices[0].message.content missing");
    }
    const std::string reason = first.value("finish_reason", "stop");
    if (reason == "stop")
        out.finish_reason = FinishReason::Stop;
    else if (reason == "length")
        out.finish_reason = FinishReason::Length;
    else
        out.finish_reason = FinishReason::Other;

    if (const auto usage = obj.find("usage"); usage != obj.end() && usage->is_object()) {
        TokenUsage u;
        u.input_tokens = usage->value("prompt_tokens", 0LL);
        u.output_tokens = usage->value("completion_tokens", 0LL);
        out.usage = u;
    }
    if (out.text.empty() && out.finish_reason == FinishReason::Stop)
        throw MalformedResponseError("empty completion text with finish_reason=stop");
    return out;
}

}  // namespace

struct HttpChatClient::Impl {
    explicit Impl(const EndpointConfig& config, Sleeper sleeper)
        : url(split_base_url(config.base_url)),
          in_flight(config.max_in_flight),
          sleep(sleeper ? std::move(sleeper)
                        : [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); }) {}

    ParsedUrl url;
    std::counting_semaphore<> in_flight;
    Sleeper sleep;
    std::atomic<std::uint64_t> next_backoff_seed{1};
};

HttpChatClient::HttpChatClient(EndpointConfig config, Sleeper sleeper)
    : config_(std::move(config)) {
    if (config_.max_retries < 0) throw TransportError("max_retries must be >= 0");
    if (config_.max_in_flight < 1) throw TransportError("max_in_flight must be >= 1");
    impl_ = std::make_unique<Impl>(config_, std::move(sleeper));
}

HttpChatClient::~HttpChatClient() = default;

ChatResponse HttpChatClient::complete(const ChatRequest& request) {
    validate_request(request);

    const char* key = std::getenv(config_.api_key_env.c_str());
    if (key == nullptr || *key == '\0')
        throw AuthError("environment variable " + config_.api_key_env + " is not set");

    const std::string body = request_body(config_, request).dump();
    const std::string path = impl_->url.path_prefix + "/chat/completions";

    impl_->in_flight.acquire();
    struct Releaser {
        std::counting_semaphore<>& sem;
        ~Releaser() { sem.release(); }
    } releaser{impl_->in_flight};

    if (config_.verbose)
        std::fprintf(stderr, "[client] POST %s%s %s\n", impl_->url.host.c_str(), path.c_str(),
                     body.c_str());

    BackoffSchedule backoff(config_.initial_backoff, config_.max_backoff,
                            impl_->next_backoff_seed.fetch_add(1));
    std::string last_failure;
    int last_status = 0;

    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) impl_->sleep(backoff.next());

        httplib::Client cli(impl_->url.host);
        const auto timeout = config_.request_timeout;
        cli.set_connection_timeout(timeout.count() / 1000, (timeout.count() % 1000) * 1000);
        cli.set_read_timeout(timeout.count() / 1000, (timeout.count() % 1000) * 1000);
        cli.set_write_timeout(timeout.count() / 1000, (timeout.count() % 1000) * 1000);
        httplib::Headers headers = {{"Authorization", std::string("Bearer ") + key}};

        auto res = cli.Post(path, headers, body, "application/json");
        if (!res) {
            last_failure = "transport failure: " + httplib::to_string(res.error());
            last_status = 0;
            continue;  // timeouts and connection errors are transient
        }

        last_status = res->status;
        if (config_.verbose)
            std::fprintf(stderr, "[client] -> %d (attempt %d) %s\n", res->status, attempt + 1,
                         res->body.c_str());

        if (res->status == 200) return parse_completion(res->body);
        if (res->status == 401 || res->status == 403)
            throw AuthError("endpoint rejected credentials (HTTP " +
                            std::to_string(res->status) + ")");
        if (res->status == 429 || res->status >= 500) {
            last_failure = "HTTP " + std::to_string(res->status);
            continue;
        }
        throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body);
    }

    if (last_status == 429)
        throw RateLimitedError("rate limited after " + std::to_string(config_.max_retries + 1) +
                               " attempts");
    throw TransportError("request failed after " + std::to_string(config_.max_retries + 1) +
                         " attempts: " + last_failure);
}

ChatResponse complete_simulated(const SimulatorProfile& profile, const ChatRequest& request,
                                const BbqRecord& record, Rng& rng) {
    validate_request(request);
    return simulate_turn(profile, request.messages, record, rng);
}

}  // namespace selfdebias
