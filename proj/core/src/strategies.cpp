#include "selfdebias/strategies.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>

namespace selfdebias {

std::string utc_timestamp_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[80];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

std::string render_question_block(const BbqRecord& record) {
    std::string out;
    out.reserve(record.context.size() + record.question.size() + 96);
    out += record.context;
    out += ' ';
    out += record.question;
    out += '\n';
    for (int i = 0; i < 3; ++i) {
        if (i > 0) out += ' ';
        out += '(';
        out += static_cast<char>('A' + i);
        out += ") ";
        out += record.options[i].text;
    }
    return out;
}

namespace {

std::string instruction_with_block(std::string_view instruction, const BbqRecord& record) {
    std::string out(instruction);
    out += '\n';
    out += render_question_block(record);
    return out;
}

ChatRequest make_request(std::vector<ChatMessage> messages, const GenerationParams& params,
                         bool explanation_turn) {
    ChatRequest request;
    request.messages = std::move(messages);
    request.temperature = params.temperature;
    request.max_tokens = explanation_turn ? params.explanation_max_tokens : params.max_tokens;
    return request;
}

ChatResponse ask(ChatBackend& backend, const ChatRequest& request, Strategy strategy,
                 const BbqRecord& record) {
    try {
        return backend.complete(request, TurnContext{&record, strategy});
    } catch (const StrategyError&) {
        throw;
    } catch (const std::exception& e) {
        throw StrategyError(record.example_id,
                            "example " + std::to_string(record.example_id) + ": " + e.what());
    }
}

Transcript begin_transcript(Strategy strategy, const BbqRecord& record,
                            const std::string& run_id) {
    Transcript t;
    t.example_id = record.example_id;
    t.strategy = strategy;
    t.run_id = run_id;
    t.started_at = utc_timestamp_now();
    return t;
}

}  // namespace

Transcript run_baseline(ChatBackend& backend, const BbqRecord& record,
                        const GenerationParams& params, const std::string& run_id) {
    Transcript t = begin_transcript(Strategy::Baseline, record, run_id);
    t.messages.push_back({Role::User, instruction_with_block(kAnswerInstruction, record)});

    const ChatResponse reply =
        ask(backend, make_request(t.messages, params, false), Strategy::Baseline, record);
    t.messages.push_back({Role::Assistant, reply.text});
    t.final_answer_raw = reply.text;
    t.first_answer_raw = reply.text;
    t.finished_at = utc_timestamp_now();
    return t;
}

Transcript run_explanation(ChatBackend& backend, const BbqRecord& record,
                           const GenerationParams& params, const std::string& run_id) {
    Transcript t = begin_transcript(Strategy::Explanation, record, run_id);
    t.messages.push_back({Role::User, instruction_with_block(kExplainInstruction, record)});

    const ChatResponse explanation =
        ask(backend, make_request(t.messages, params, true), Strategy::Explanation, record);
    t.messages.push_back({Role::Assistant, explanation.text});
    t.explanation_raw = explanation.text;

    t.messages.push_back({Role::User, instruction_with_block(kAnswerInstruction, record)});
    ChatResponse answer;
    try {
        answer = ask(backend, make_request(t.messages, params, false), Strategy::Explanation,
                     record);
    } catch (const std::exception& e) {
        t.messages.pop_back();  // keep the partial at the turn boundary
        throw PartialTranscriptError(std::move(t), e.what());
    }
    t.messages.push_back({Role::Assistant, answer.text});
    t.final_answer_raw = answer.text;
    t.finished_at = utc_timestamp_now();
    return t;
}

Transcript run_reprompting(ChatBackend& backend, const BbqRecord& record,
                           const GenerationParams& params, const std::string& run_id) {
    Transcript t = begin_transcript(Strategy::Reprompting, record, run_id);
    t.messages.push_back({Role::User, instruction_with_block(kAnswerInstruction, record)});

    const ChatResponse first =
        ask(backend, make_request(t.messages, params, false), Strategy::Reprompting, record);
    t.messages.push_back({Role::Assistant, first.text});
    t.first_answer_raw = first.text;

    t.messages.push_back({Role::User, std::string(kRepromptInstruction)});
    ChatResponse second;
    try {
        second = ask(backend, make_request(t.messages, params, false), Strategy::Reprompting,
                     record);
    } catch (const std::exception& e) {
        t.messages.pop_back();
        throw PartialTranscriptError(std::move(t), e.what());
    }
    t.messages.push_back({Role::Assistant, second.text});
    t.final_answer_raw = second.text;
    t.finished_at = utc_timestamp_now();
    return t;
}

namespace {

// Finish an interrupted two-turn conversation: the partial holds the
// first user/assistant exchange; only the second turn is issued.
Transcript resume_two_turn(ChatBackend& backend, Strategy strategy, const BbqRecord& record,
                           const GenerationParams& params, Transcript partial) {
    if (partial.messages.size() != 2 || partial.messages[0].role != Role::User ||
        partial.messages[1].role != Role::Assistant) {
        throw StrategyError(record.example_id, "partial transcript has unexpected shape");
    }
    Transcript t = std::move(partial);
    const std::string second_user =
        strategy == Strategy::Reprompting
            ? std::string(kRepromptInstruction)
            : std::string(kAnswerInstruction) + "\n" + render_question_block(record);
    t.messages.push_back({Role::User, second_user});

    ChatResponse reply;
    try {
        reply = ask(backend, make_request(t.messages, params, false), strategy, record);
    } catch (const std::exception& e) {
        t.messages.pop_back();
        throw PartialTranscriptError(std::move(t), e.what());
    }
    t.messages.push_back({Role::Assistant, reply.text});
    t.final_answer_raw = reply.text;
    t.finished_at = utc_timestamp_now();
    return t;
}

}  // namespace

Transcript run_strategy(ChatBackend& backend, Strategy strategy, const BbqRecord& record,
                        const GenerationParams& params, const std::string& run_id,
                        const Transcript* partial) {
    if (partial && strategy != Strategy::Baseline) {
        return resume_two_turn(backend, strategy, record, params, *partial);
    }
    switch (strategy) {
        case Strategy::Baseline: return run_baseline(backend, record, params, run_id);
        case Strategy::Explanation: return run_explanation(backend, record, params, run_id);
        case Strategy::Reprompting: return run_reprompting(backend, record, params, run_id);
    }
    throw StrategyError(record.example_id, "unknown strategy");
}

}  // namespace selfdebias
