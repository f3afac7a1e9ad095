#pragma once

#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <mutex>
#include <random>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

namespace trafficrag {

struct BackendError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
struct BackendUnavailableError : BackendError {
    using BackendError::BackendError;
};
struct RequestRejectedError : BackendError {
    using BackendError::BackendError;
};

constexpr std::size_t kMaxMediaRefs = 8;
constexpr std::size_t kDefaultFrameCount = 8;

// Endpoint-inclusive uniform spacing: index_j = floor(j * (n-1) / (k-1)).
inline std::vector<std::size_t> sample_frame_indices(std::size_t n_frames,
                                                     std::size_t k = kDefaultFrameCount) {
    if (n_frames < 1) throw BackendError("sample_frame_indices: n_frames must be >= 1");
    if (k < 1) throw BackendError("sample_frame_indices: k must be >= 1");
    std::vector<std::size_t> indices(k);
    if (k == 1) {
        indices[0] = (n_frames - 1) / 2;
        return indices;
    }
    for (std::size_t j = 0; j < k; ++j) indices[j] = j * (n_frames - 1) / (k - 1);
    return indices;
}

struct ModelRequest {
    std::string prompt;
    std::vector<std::string> media_refs;  // at most 8
    double temperature = 0.0;
    std::size_t max_tokens = 1024;
    std::string tag;  // item identifier for scripted mocks; ignored by remotes

    void validate() const {
        if (media_refs.size() > kMaxMediaRefs)
            throw BackendError("request carries more than 8 media refs");
        if (temperature < 0.0) throw BackendError("temperature must be >= 0");
        if (max_tokens < 1) throw BackendError("max_tokens must be >= 1");
    }
};

struct ModelResponse {
    std::string text;
    std::uint64_t latency_ms = 0;
    std::string backend_id;
};

class Backend {
public:
    virtual ~Backend() = default;
    virtual ModelResponse query(const ModelRequest& request) = 0;
    virtual std::string id() const = 0;
};

// Replays canned responses keyed by request tag; "*" is the fallback entry.
class ScriptedMockBackend final : public Backend {
public:
    explicit ScriptedMockBackend(std::map<std::string, std::string> script)
        : script_(std::move(script)) {}

    ModelResponse query(const ModelRequest& request) override {
        request.validate();
        auto it = script_.find(request.tag);
        if (it == script_.end()) it = script_.find("*");
        if (it == script_.end())
            throw BackendError("scripted mock has no entry for tag '" + request.tag + "'");
        return {it->second, 0, id()};
    }

    std::string id() const override { return "mock:scripted"; }

private:
    std::map<std::string, std::string> script_;
};

// Emits "Answer: X" with X uniform over the first n_options letters.
class UniformRandomMockBackend final : public Backend {
public:
    UniformRandomMockBackend(std::uint64_t seed, std::size_t n_options)
        : rng_(seed), n_options_(n_options), seed_(seed) {
        if (n_options < 1 || n_options > 8)
            throw BackendError("uniform mock: n_options must be in [1, 8]");
    }

    ModelResponse query(const ModelRequest& request) override {
        request.validate();
        std::lock_guard<std::mutex> lock(mutex_);
        std::uniform_int_distribution<std::size_t> dist(0, n_options_ - 1);
        const char letter = static_cast<char>('A' + dist(rng_));
        return {std::string("Answer: ") + letter, 0, id()};
    }

    std::string id() const override {
        return "mock:uniform:" + std::to_string(n_options_) + ":seed" + std::to_string(seed_);
    }

private:
    std::mutex mutex_;
    std::mt19937_64 rng_;
    std::size_t n_options_;
    std::uint64_t seed_;
};

// Answers an item correctly only when its decisive fact text is present in
// the prompt; otherwise returns a fixed fallback letter.
class KnowledgeAwareMockBackend final : public Backend {
public:
    struct ItemRule {
        std::string decisive_text;
        char correct_letter;
        char fallback_letter;
    };

    explicit KnowledgeAwareMockBackend(std::map<std::string, ItemRule> rules)
        : rules_(std::move(rules)) {}

    ModelResponse query(const ModelRequest& request) override {
        request.validate();
        auto it = rules_.find(request.tag);
        if (it == rules_.end())
            throw BackendError("knowledge-aware mock has no rule for tag '" + request.tag + "'");
        const auto& rule = it->second;
        const bool grounded = request.prompt.find(rule.decisive_text) != std::string::npos;
        const char letter = grounded ? rule.correct_letter : rule.fallback_letter;
        return {std::string("Answer: ") + letter, 0, id()};
    }

    std::string id() const override { return "mock:knowledge_aware"; }

private:
    std::map<std::string, ItemRule> rules_;
};

// ---------------------------------------------------------------------------
// Remote chat backend: POST {endpoint}/v1/chat with retry on transient
// failures (transport errors, 429, 5xx): 3 attempts, exponential backoff
// starting at 250 ms.
// ---------------------------------------------------------------------------

struct RemoteBackendConfig {
    std::string endpoint;
    int timeout_seconds = 60;
    int max_attempts = 3;
    std::chrono::milliseconds initial_backoff{250};
    int max_in_flight = 4;
};

class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(RemoteBackendConfig cfg)
        : cfg_(std::move(cfg)), slots_(cfg_.max_in_flight > 0 ? cfg_.max_in_flight : 1) {
        if (cfg_.endpoint.empty()) throw BackendError("remote backend requires an endpoint");
    }

    ModelResponse query(const ModelRequest& request) override {
        request.validate();
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};

        nlohmann::json body{{"prompt", request.prompt},
                            {"media", request.media_refs},
                            {"temperature", request.temperature},
                            {"max_tokens", request.max_tokens}};
        const std::string payload = body.dump();

        httplib::Headers headers;
        if (const char* key = std::getenv("TRAFFIC_RAG_API_KEY"); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        std::string last_error;
        auto backoff = cfg_.initial_backoff;
        const auto started = std::chrono::steady_clock::now();
        for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
            if (attempt > 1) {
                std::this_thread::sleep_for(backoff);
                backoff *= 2;
            }
            httplib::Client client(cfg_.endpoint);
            client.set_connection_timeout(cfg_.timeout_seconds, 0);
            client.set_read_timeout(cfg_.timeout_seconds, 0);
            auto res = client.Post("/v1/chat", headers, payload, "application/json");
            if (!res) {
                last_error = "transport: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "status " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200)
                throw RequestRejectedError("backend rejected request with status " +
                                           std::to_string(res->status) + ": " + res->body);
            nlohmann::json j;
            try {
                j = nlohmann::json::parse(res->body);
            } catch (const nlohmann::json::parse_error& e) {
                throw BackendError(std::string("backend returned malformed JSON: ") + e.what());
            }
            if (!j.contains("text") || !j["text"].is_string())
                throw BackendError("backend response missing 'text'");
            const auto elapsed = std::chrono::duration_cast<std::chrono::milliseconds>(
                std::chrono::steady_clock::now() - started);
            return {j["text"].get<std::string>(),
                    static_cast<std::uint64_t>(elapsed.count()), id()};
        }
        throw BackendUnavailableError("backend unavailable after " +
                                      std::to_string(cfg_.max_attempts) +
                                      " attempts; last error: " + last_error);
    }

    std::string id() const override { return "remote:" + cfg_.endpoint; }

    const RemoteBackendConfig& config() const { return cfg_; }

private:
    RemoteBackendConfig cfg_;
    std::counting_semaphore<> slots_;
};

}  // namespace trafficrag
