#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <string>

#include <json.hpp>

#include "test_http_server.hpp"
#include "trafficrag/embedding.hpp"

using namespace trafficrag;
using nlohmann::json;

namespace {

EmbeddingProviderConfig det_config(std::uint64_t seed, std::size_t dim) {
    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::DeterministicTest;
    cfg.seed = seed;
    cfg.dim = dim;
    return cfg;
}

}  // namespace

TEST_CASE("deterministic embedder: same text and seed give identical vectors") {
    DeterministicEmbedder e(det_config(42, 8));
    auto v1 = e.embed("stop sign");
    auto v2 = e.embed("stop sign");
    CHECK(v1.dim() == 8);
    CHECK(v1 == v2);
}

TEST_CASE("deterministic embedder: output depends only on token multiset") {
    DeterministicEmbedder e(det_config(9, 16));
    CHECK(e.embed("a b") == e.embed("b a"));
    CHECK(e.embed("a  b") == e.embed(" a b "));
    CHECK(e.embed("a\tb\n") == e.embed("a b"));
    CHECK(e.embed("a b") != e.embed("a c"));
}

TEST_CASE("deterministic embedder: seed and dim change the vector") {
    DeterministicEmbedder e1(det_config(1, 8));
    DeterministicEmbedder e2(det_config(2, 8));
    CHECK(e1.embed("yield") != e2.embed("yield"));
}

TEST_CASE("deterministic embedder: vectors are unit L2 norm and finite") {
    DeterministicEmbedder e(det_config(7, 32));
    auto v = e.embed("speed limit is 60 on this road");
    v.validate();
    double norm = 0.0;
    for (double x : v.values) norm += x * x;
    CHECK(std::fabs(std::sqrt(norm) - 1.0) < 1e-12);
}

TEST_CASE("embed: empty or whitespace-only text is rejected") {
    DeterministicEmbedder e(det_config(1, 4));
    CHECK_THROWS_AS(e.embed(""), EmbeddingError);
    CHECK_THROWS_AS(e.embed("   \t\n"), EmbeddingError);
}

TEST_CASE("embed_corpus: one embedding per chunk in order, rerun identical") {
    auto chunks = ingest_document("Rule one. Rule two.\n\nRule three applies.", "d",
                                  ChunkCategory::Regulation, 64);
    Corpus corpus = make_corpus(chunks);
    DeterministicEmbedder e(det_config(5, 12));
    auto run1 = embed_corpus(corpus, e);
    auto run2 = embed_corpus(corpus, e);
    REQUIRE(run1.size() == corpus.size());
    CHECK(run1 == run2);
    for (std::size_t i = 0; i < run1.size(); ++i)
        CHECK(run1[i].first == corpus.chunks[i].chunk_id);
}

TEST_CASE("remote embedder: passes through the service vector and checks dim") {
    std::vector<double> fixed(768);
    for (std::size_t i = 0; i < fixed.size(); ++i) fixed[i] = 0.001 * static_cast<double>(i);
    std::string seen_auth;
    std::string seen_body;

    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
            seen_auth = req.get_header_value("Authorization");
            seen_body = req.body;
            json reply{{"embeddings", {fixed}}, {"dim", 768}};
            res.set_content(reply.dump(), "application/json");
        });
    });

    setenv(kApiKeyEnvVar, "sekrit", 1);
    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::RemoteService;
    cfg.endpoint = server.endpoint();
    cfg.dim = 768;
    RemoteEmbedder remote(cfg);
    auto v = remote.embed("yield");
    unsetenv(kApiKeyEnvVar);

    CHECK(v.values == fixed);
    CHECK(seen_auth == "Bearer sekrit");
    CHECK(json::parse(seen_body)["texts"][0] == "yield");
}

TEST_CASE("remote embedder: dimension mismatch and non-200 are provider errors") {
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
            if (req.body.find("short") != std::string::npos) {
                json reply{{"embeddings", {{1.0, 2.0}}}, {"dim", 2}};
                res.set_content(reply.dump(), "application/json");
            } else {
                res.status = 503;
            }
        });
    });

    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::RemoteService;
    cfg.endpoint = server.endpoint();
    cfg.dim = 4;
    RemoteEmbedder remote(cfg);
    CHECK_THROWS_WITH_AS(remote.embed("short"), doctest::Contains("dimension mismatch"),
                         EmbeddingError);
    CHECK_THROWS_WITH_AS(remote.embed("boom"), doctest::Contains("503"), EmbeddingError);
}

TEST_CASE("embed_corpus: a failing chunk is named in the error") {
    std::atomic<int> calls{0};
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/embed", [&](const httplib::Request&, httplib::Response& res) {
            if (calls++ == 0) {
                json reply{{"embeddings", {{1.0, 0.0}}}, {"dim", 2}};
                res.set_content(reply.dump(), "application/json");
            } else {
                res.status = 500;
            }
        });
    });

    Corpus corpus = make_corpus(
        ingest_document("First chunk text.\n\nSecond chunk text.", "d",
                        ChunkCategory::Regulation, 64));
    REQUIRE(corpus.size() == 2);
    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::RemoteService;
    cfg.endpoint = server.endpoint();
    cfg.dim = 2;
    RemoteEmbedder remote(cfg);
    CHECK_THROWS_WITH_AS(embed_corpus(corpus, remote), doctest::Contains("chunk 1"),
                         EmbeddingError);
}

TEST_CASE("provider config validation") {
    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::RemoteService;
    cfg.endpoint = "";
    CHECK_THROWS_AS(make_provider(cfg), EmbeddingError);
    cfg.kind = ProviderKind::DeterministicTest;
    cfg.dim = 0;
    CHECK_THROWS_AS(make_provider(cfg), EmbeddingError);
}
