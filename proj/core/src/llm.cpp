#include "dustmagnet/llm.hpp"

#include "dustmagnet/error.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <thread>
#include <unordered_map>

namespace dustmagnet {

void ProviderConfig::validate() const {
    if (endpoint_url.empty()) throw Error(ErrorCode::InvalidConfig, "endpoint_url is empty");
    if (model_name.empty()) throw Error(ErrorCode::InvalidConfig, "model_name is empty");
    if (!(request_timeout_s > 0.0) || !std::isfinite(request_timeout_s)) {
        throw Error(ErrorCode::InvalidConfig, "request_timeout must be positive");
    }
    if (max_tokens <= 0) throw Error(ErrorCode::InvalidConfig, "max_tokens must be positive");
    if (!(temperature >= 0.0 && temperature <= 2.0)) throw Error(ErrorCode::InvalidConfig, "temperature must lie in [0,2]");
    if (!response_text_pointer.empty() && response_text_pointer.front() != '/') {
        throw Error(ErrorCode::InvalidConfig, "response_text_pointer must be a JSON pointer");
    }
}

CompletionResult complete(CompletionProvider& provider, const PromptBundle& bundle, const ProviderConfig& config,
                          const RetryPolicy& retry) {
    config.validate();
    if (bundle.body.empty()) throw Error(ErrorCode::BadRequest, "prompt body is empty");

    const auto start = std::chrono::steady_clock::now();
    for (int attempt = 1;; ++attempt) {
        AttemptOutcome outcome = provider.attempt(bundle, config);
        switch (outcome.status) {
        case AttemptOutcome::Status::ok: {
            const auto elapsed = std::chrono::steady_clock::now() - start;
            return {std::move(outcome.text),
                    std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count(), provider.id(), attempt};
        }
        case AttemptOutcome::Status::rejected:
            throw Error(ErrorCode::ProviderRejected, "provider rejected the request: " + outcome.detail);
        case AttemptOutcome::Status::unavailable:
            throw Error(ErrorCode::ProviderUnavailable, "provider unavailable: " + outcome.detail);
        case AttemptOutcome::Status::rate_limited:
            if (attempt > retry.max_retries) {
                throw Error(ErrorCode::ProviderUnavailable, "provider still rate limited after " +
                                                                std::to_string(attempt) + " attempts");
            }
            std::chrono::milliseconds wait{0};
            if (!retry.backoff.empty()) {
                wait = retry.backoff[std::min<std::size_t>(static_cast<std::size_t>(attempt - 1), retry.backoff.size() - 1)];
            }
            if (retry.sleep) retry.sleep(wait);
            else std::this_thread::sleep_for(wait);
            break;
        }
    }
}

std::string HttpProvider::request_body(const PromptBundle& bundle, const ProviderConfig& config) {
    nlohmann::json body;
    body["model"] = config.model_name;
    body["max_tokens"] = config.max_tokens;
    body["temperature"] = config.temperature;
    if (config.request_style == RequestStyle::messages) {
        if (!bundle.system_preamble.empty()) body["system"] = bundle.system_preamble;
        body["messages"] = nlohmann::json::array({{{"role", "user"}, {"content", bundle.body}}});
    } else {
        body["prompt"] = bundle.system_preamble.empty() ? bundle.body : bundle.system_preamble + "\n\n" + bundle.body;
    }
    return body.dump();
}

AttemptOutcome HttpProvider::attempt(const PromptBundle& bundle, const ProviderConfig& config) {
    const std::string& url = config.endpoint_url;
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) return {AttemptOutcome::Status::unavailable, {}, "endpoint has no scheme"};
    const auto path_start = url.find('/', scheme_end + 3);
    const std::string base = path_start == std::string::npos ? url : url.substr(0, path_start);
    const std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client client(base);
    if (!client.is_valid()) return {AttemptOutcome::Status::unavailable, {}, "unsupported endpoint " + base};
    const auto timeout = std::chrono::microseconds(static_cast<std::int64_t>(config.request_timeout_s * 1e6));
    client.set_connection_timeout(timeout);
    client.set_read_timeout(timeout);
    client.set_write_timeout(timeout);

    httplib::Headers headers;
    for (const auto& [k, v] : config.extra_headers) headers.emplace(k, v);
    if (!config.api_key_env.empty()) {
        if (const char* key = std::getenv(config.api_key_env.c_str()); key && *key) {
            headers.emplace(config.api_key_header, config.api_key_header == "Authorization" ? std::string("Bearer ") + key : key);
        }
    }

    auto res = client.Post(path, headers, request_body(bundle, config), "application/json");
    if (!res) return {AttemptOutcome::Status::unavailable, {}, httplib::to_string(res.error())};
    if (res->status == 429) return {AttemptOutcome::Status::rate_limited, {}, "HTTP 429"};
    if (res->status >= 400 && res->status < 500) {
        return {AttemptOutcome::Status::rejected, {}, "HTTP " + std::to_string(res->status)};
    }
    if (res->status < 200 || res->status >= 300) {
        return {AttemptOutcome::Status::unavailable, {}, "HTTP " + std::to_string(res->status)};
    }
    const auto doc = nlohmann::json::parse(res->body, nullptr, false);
    if (doc.is_discarded()) return {AttemptOutcome::Status::unavailable, {}, "response is not JSON"};
    try {
        const auto& text = doc.at(nlohmann::json::json_pointer(config.response_text_pointer));
        if (!text.is_string()) return {AttemptOutcome::Status::unavailable, {}, "response text is not a string"};
        return {AttemptOutcome::Status::ok, text.get<std::string>(), {}};
    } catch (const nlohmann::json::exception&) {
        return {AttemptOutcome::Status::unavailable, {}, "response lacks " + config.response_text_pointer};
    }
}

namespace {

std::unordered_map<std::string, double> token_bag(std::string_view text) {
    std::unordered_map<std::string, double> bag;
    std::string token;
    auto flush = [&] {
        if (!token.empty()) bag[token] += 1.0;
        token.clear();
    };
    for (char c : text) {
        const auto u = static_cast<unsigned char>(c);
        if (std::isalnum(u) || u >= 0x80) token += static_cast<char>(std::tolower(u));
        else flush();
    }
    flush();
    return bag;
}

double cosine(const std::unordered_map<std::string, double>& a, const std::unordered_map<std::string, double>& b) {
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (const auto& [t, c] : a) {
        aa += c * c;
        if (auto it = b.find(t); it != b.end()) ab += c * it->second;
    }
    for (const auto& [t, c] : b) bb += c * c;
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / std::sqrt(aa * bb);
}

std::uint64_t fnv1a(std::uint64_t seed, std::string_view text) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (char c : text) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ULL;
    }
    return h;
}

constexpr const char* kGivenNames[] = {"Ada", "Bram", "Corin", "Dalia", "Esme", "Fenn", "Greta", "Hale",
                                       "Iris", "Jory", "Kestrel", "Lio", "Mira", "Nell", "Orrin", "Petra"};
constexpr const char* kFamilyNames[] = {"Ashdown", "Brightwater", "Corvane", "Dunmore", "Emberly", "Foxglove",
                                        "Greyhollow", "Harrow"};

std::size_t argmax(const WeightVector& w) {
    return static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
}

} // namespace

WeightVector mock_recognize(std::string_view element_text, const std::vector<std::string>& concept_texts) {
    if (concept_texts.size() < 2) throw Error(ErrorCode::BadRequest, "recognition needs at least two concepts");
    constexpr double kFloor = 0.01;
    const auto element_bag = token_bag(element_text);
    std::vector<double> scores;
    for (const auto& text : concept_texts) scores.push_back(std::max(cosine(element_bag, token_bag(text)), kFloor));
    return WeightVector::normalized(std::move(scores));
}

std::string MockProvider::respond(const PromptBundle& bundle) const {
    const PromptHints& h = bundle.hints;
    const std::uint64_t digest = fnv1a(seed_, bundle.body);
    switch (bundle.family) {
    case PromptFamily::recognition: {
        const auto concepts = h.concepts.empty() ? std::vector<std::string>{} : h.concepts.front();
        const WeightVector w = mock_recognize(h.subject_text, concepts);
        const auto pct = weights_to_percentages(w);
        nlohmann::json answer = nlohmann::json::object();
        for (std::size_t i = 0; i < pct.percents.size(); ++i) answer[pct.labels[i]] = pct.percents[i];
        return "The description shares wording with the attributes in these proportions.\n====\n" + answer.dump();
    }
    case PromptFamily::rewrite: {
        std::string text = h.subject_text;
        if (!h.targets.empty() && !h.concepts.empty()) text += " " + h.concepts[0][argmax(h.targets[0])];
        return "Moving the element toward the requested mix.\n====\n" + text;
    }
    case PromptFamily::plain_generation:
    case PromptFamily::steered_generation: {
        std::string text = std::string(kGivenNames[digest % 16]) + " " + kFamilyNames[(digest >> 8) % 8] + ", " +
                           std::to_string(20 + (digest >> 16) % 50) + ".";
        for (std::size_t d = 0; d < h.targets.size() && d < h.concepts.size(); ++d) {
            const WeightVector& target = h.targets[d];
            bool any = false;
            for (std::size_t i = 0; i < target.size(); ++i) {
                if (target[i] >= 0.25) {
                    text += " " + h.concepts[d][i];
                    any = true;
                }
            }
            if (!any) text += " " + h.concepts[d][argmax(target)];
        }
        if (!h.user_prompt.empty()) text += " " + h.user_prompt;
        return "Considering the requested balance.\n====\n" + text;
    }
    }
    return {};
}

AttemptOutcome MockProvider::attempt(const PromptBundle& bundle, const ProviderConfig&) {
    ++calls_;
    return {AttemptOutcome::Status::ok, respond(bundle), {}};
}

} // namespace dustmagnet
