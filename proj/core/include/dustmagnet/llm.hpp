#pragma once

#include "dustmagnet/prompting.hpp"

#include <atomic>
#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace dustmagnet {

enum class RequestStyle {
    messages, // {"model", "system", "messages": [{"role": "user", "content": ...}], ...}
    prompt,   // {"model", "prompt", ...}
};

struct ProviderConfig {
    std::string endpoint_url = "https://api.anthropic.com/v1/messages";
    std::string model_name = "claude-2.0";
    std::string api_key_env = "ANTHROPIC_API_KEY";
    std::string api_key_header = "x-api-key";
    std::map<std::string, std::string> extra_headers = {{"anthropic-version", "2023-06-01"}};
    RequestStyle request_style = RequestStyle::messages;
    std::string response_text_pointer = "/content/0/text"; // JSON pointer into the response body
    int max_tokens = 1024;
    double temperature = 1.0;
    double request_timeout_s = 60.0;

    // Throws InvalidConfig.
    void validate() const;
};

struct CompletionResult {
    std::string text;
    std::int64_t latency_ms = 0;
    std::string provider_id;
    int attempt_count = 1;
};

// What a single attempt produced.
struct AttemptOutcome {
    enum class Status { ok, rate_limited, rejected, unavailable };
    Status status = Status::ok;
    std::string text;   // completion text when ok
    std::string detail; // error description otherwise
};

class CompletionProvider {
public:
    virtual ~CompletionProvider() = default;
    virtual std::string id() const = 0;
    virtual AttemptOutcome attempt(const PromptBundle& bundle, const ProviderConfig& config) = 0;
};

struct RetryPolicy {
    int max_retries = 2;
    std::vector<std::chrono::milliseconds> backoff = {std::chrono::seconds(1), std::chrono::seconds(4)};
    std::function<void(std::chrono::milliseconds)> sleep; // defaults to std::this_thread::sleep_for
};

// Runs one completion, retrying only on HTTP 429. Throws ProviderUnavailable
// (network, timeout, 5xx, exhausted retries) or ProviderRejected (other 4xx).
CompletionResult complete(CompletionProvider& provider, const PromptBundle& bundle, const ProviderConfig& config,
                          const RetryPolicy& retry = {});

// Plain HTTP/HTTPS JSON client for a completion endpoint.
class HttpProvider : public CompletionProvider {
public:
    std::string id() const override { return "http"; }
    AttemptOutcome attempt(const PromptBundle& bundle, const ProviderConfig& config) override;

    // Request body for a bundle. Never contains the API key.
    static std::string request_body(const PromptBundle& bundle, const ProviderConfig& config);
};

// Token-bag cosine between element text and each concept, floored at 0.01
// and normalized.
WeightVector mock_recognize(std::string_view element_text, const std::vector<std::string>& concept_texts);

// Offline stand-in for a model. Answers are a pure function of the bundle
// and the seed.
class MockProvider : public CompletionProvider {
public:
    explicit MockProvider(std::uint64_t seed = 0) : seed_(seed) {}

    std::string id() const override { return "mock"; }
    AttemptOutcome attempt(const PromptBundle& bundle, const ProviderConfig& config) override;

    // Text the mock produces for a bundle.
    std::string respond(const PromptBundle& bundle) const;

    std::size_t calls() const { return calls_.load(); }

private:
    std::uint64_t seed_;
    std::atomic<std::size_t> calls_{0};
};

} // namespace dustmagnet
