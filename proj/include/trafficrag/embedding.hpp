#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <memory>
#include <semaphore>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "trafficrag/corpus.hpp"

namespace trafficrag {

struct EmbeddingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::size_t kDefaultEmbeddingDim = 768;
inline const char* kApiKeyEnvVar = "TRAFFIC_RAG_API_KEY";

struct EmbeddingVector {
    std::vector<double> values;

    std::size_t dim() const { return values.size(); }

    void validate() const {
        if (values.empty()) throw EmbeddingError("embedding vector is empty");
        for (double v : values)
            if (!std::isfinite(v)) throw EmbeddingError("embedding vector has non-finite value");
    }

    bool operator==(const EmbeddingVector&) const = default;
};

enum class ProviderKind { RemoteService, DeterministicTest };

struct EmbeddingProviderConfig {
    ProviderKind kind = ProviderKind::DeterministicTest;
    std::size_t dim = kDefaultEmbeddingDim;
    std::string endpoint;        // RemoteService only
    std::uint64_t seed = 0;      // DeterministicTest only
    int max_in_flight = 4;       // RemoteService concurrency bound
    int timeout_seconds = 60;

    void validate() const {
        if (dim < 1) throw EmbeddingError("embedding dim must be >= 1");
        if (kind == ProviderKind::RemoteService && endpoint.empty())
            throw EmbeddingError("remote embedding provider requires an endpoint");
    }

    bool operator==(const EmbeddingProviderConfig&) const = default;
};

class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual EmbeddingVector embed(std::string_view text) = 0;
    virtual const EmbeddingProviderConfig& config() const = 0;
};

namespace embed_detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

inline std::uint64_t hash_token(std::string_view token, std::uint64_t seed) {
    std::uint64_t h = splitmix64(seed ^ 0x51ED270B9B1E5E8DULL);
    for (unsigned char c : token) h = splitmix64(h ^ c);
    return h;
}

}  // namespace embed_detail

// Test embedder: whitespace tokens hashed with the seed and projected per
// dimension, summed, then scaled to unit L2 norm. Output depends only on the
// token multiset, seed, and dim.
class DeterministicEmbedder final : public EmbeddingProvider {
public:
    explicit DeterministicEmbedder(EmbeddingProviderConfig cfg) : cfg_(std::move(cfg)) {
        cfg_.kind = ProviderKind::DeterministicTest;
        cfg_.validate();
    }

    EmbeddingVector embed(std::string_view text) override {
        const std::string norm = normalize_whitespace(text);
        if (norm.empty()) throw EmbeddingError("cannot embed empty or whitespace-only text");
        std::vector<double> acc(cfg_.dim, 0.0);
        std::size_t pos = 0;
        while (pos < norm.size()) {
            std::size_t sp = norm.find(' ', pos);
            if (sp == std::string::npos) sp = norm.size();
            const std::uint64_t th = embed_detail::hash_token(
                std::string_view(norm).substr(pos, sp - pos), cfg_.seed);
            for (std::size_t d = 0; d < cfg_.dim; ++d) {
                const std::uint64_t h = embed_detail::splitmix64(th ^ (d * 0xA24BAED4963EE407ULL));
                // map to [-1, 1)
                acc[d] += static_cast<double>(static_cast<std::int64_t>(h)) / 9.223372036854775808e18;
            }
            pos = sp + 1;
        }
        double norm2 = 0.0;
        for (double v : acc) norm2 += v * v;
        if (norm2 > 0.0) {
            const double inv = 1.0 / std::sqrt(norm2);
            for (double& v : acc) v *= inv;
        }
        EmbeddingVector out{std::move(acc)};
        out.validate();
        return out;
    }

    const EmbeddingProviderConfig& config() const override { return cfg_; }

private:
    EmbeddingProviderConfig cfg_;
};

// HTTP provider speaking POST {endpoint}/embed with
// {"texts": [...]} -> {"embeddings": [[...], ...], "dim": n}.
class RemoteEmbedder final : public EmbeddingProvider {
public:
    explicit RemoteEmbedder(EmbeddingProviderConfig cfg)
        : cfg_(std::move(cfg)), slots_(cfg_.max_in_flight > 0 ? cfg_.max_in_flight : 1) {
        cfg_.kind = ProviderKind::RemoteService;
        cfg_.validate();
    }

    EmbeddingVector embed(std::string_view text) override {
        if (normalize_whitespace(text).empty())
            throw EmbeddingError("cannot embed empty or whitespace-only text");
        slots_.acquire();
        struct Release {
            std::counting_semaphore<>& s;
            ~Release() { s.release(); }
        } release{slots_};

        httplib::Client client(cfg_.endpoint);
        client.set_connection_timeout(cfg_.timeout_seconds, 0);
        client.set_read_timeout(cfg_.timeout_seconds, 0);
        httplib::Headers headers;
        if (const char* key = std::getenv(kApiKeyEnvVar); key && *key)
            headers.emplace("Authorization", std::string("Bearer ") + key);

        nlohmann::json body{{"texts", {std::string(text)}}};
        auto res = client.Post("/embed", headers, body.dump(), "application/json");
        if (!res)
            throw EmbeddingError("embedding provider transport failure: " +
                                 httplib::to_string(res.error()));
        if (res->status != 200)
            throw EmbeddingError("embedding provider returned status " +
                                 std::to_string(res->status) + ": " + res->body);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(res->body);
        } catch (const nlohmann::json::parse_error& e) {
            throw EmbeddingError(std::string("embedding provider returned malformed JSON: ") +
                                 e.what());
        }
        if (!j.contains("embeddings") || !j["embeddings"].is_array() ||
            j["embeddings"].size() != 1)
            throw EmbeddingError("embedding provider response missing embeddings");
        EmbeddingVector out{j["embeddings"][0].get<std::vector<double>>()};
        const std::size_t reported = j.value("dim", out.dim());
        if (out.dim() != cfg_.dim || reported != cfg_.dim)
            throw EmbeddingError("embedding dimension mismatch: expected " +
                                 std::to_string(cfg_.dim) + ", got " +
                                 std::to_string(out.dim()));
        out.validate();
        return out;
    }

    const EmbeddingProviderConfig& config() const override { return cfg_; }

private:
    EmbeddingProviderConfig cfg_;
    std::counting_semaphore<> slots_;
};

inline std::unique_ptr<EmbeddingProvider> make_provider(const EmbeddingProviderConfig& cfg) {
    cfg.validate();
    if (cfg.kind == ProviderKind::DeterministicTest)
        return std::make_unique<DeterministicEmbedder>(cfg);
    return std::make_unique<RemoteEmbedder>(cfg);
}

// One embedding per chunk, order preserved; a failure names the chunk.
inline std::vector<std::pair<std::uint64_t, EmbeddingVector>> embed_corpus(
    const Corpus& corpus, EmbeddingProvider& provider) {
    std::vector<std::pair<std::uint64_t, EmbeddingVector>> out;
    out.reserve(corpus.chunks.size());
    for (const auto& chunk : corpus.chunks) {
        try {
            out.emplace_back(chunk.chunk_id, provider.embed(chunk.text));
        } catch (const std::exception& e) {
            throw EmbeddingError("failed to embed chunk " + std::to_string(chunk.chunk_id) +
                                 ": " + e.what());
        }
    }
    return out;
}

}  // namespace trafficrag
