#include <doctest.h>

#include <atomic>
#include <chrono>
#include <map>
#include <thread>
#include <vector>

#include "test_http_server.hpp"
#include "trafficrag/backend.hpp"

using namespace trafficrag;

TEST_CASE("frame sampler: identity when n equals k") {
    CHECK(sample_frame_indices(8, 8) ==
          std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7});
}

TEST_CASE("frame sampler: floor(j*(n-1)/(k-1)) spacing") {
    CHECK(sample_frame_indices(15, 8) ==
          std::vector<std::size_t>{0, 2, 4, 6, 8, 10, 12, 14});
}

TEST_CASE("frame sampler: clamped repeats when n < k") {
    // floor(j*2/7) for j = 0..7
    CHECK(sample_frame_indices(3, 8) ==
          std::vector<std::size_t>{0, 0, 0, 0, 1, 1, 1, 2});
}

TEST_CASE("frame sampler: k == 1 picks the middle frame") {
    CHECK(sample_frame_indices(9, 1) == std::vector<std::size_t>{4});
    CHECK(sample_frame_indices(1, 1) == std::vector<std::size_t>{0});
}

TEST_CASE("frame sampler: structural properties over a grid") {
    for (std::size_t n = 1; n <= 40; ++n) {
        for (std::size_t k = 1; k <= 12; ++k) {
            auto idx = sample_frame_indices(n, k);
            REQUIRE(idx.size() == k);
            for (std::size_t i = 0; i < k; ++i) {
                CHECK(idx[i] <= n - 1);
                if (i > 0) CHECK(idx[i] >= idx[i - 1]);
            }
            if (n >= 2 && k >= 2) {
                CHECK(idx.front() == 0);
                CHECK(idx.back() == n - 1);
            }
        }
    }
}

TEST_CASE("frame sampler: preconditions") {
    CHECK_THROWS_AS(sample_frame_indices(0, 8), BackendError);
    CHECK_THROWS_AS(sample_frame_indices(8, 0), BackendError);
}

TEST_CASE("request validation: media cap and parameter ranges") {
    ModelRequest req;
    req.prompt = "p";
    req.media_refs.assign(9, "frame");
    CHECK_THROWS_AS(req.validate(), BackendError);
    req.media_refs.clear();
    req.temperature = -1.0;
    CHECK_THROWS_AS(req.validate(), BackendError);
    req.temperature = 0.0;
    req.max_tokens = 0;
    CHECK_THROWS_AS(req.validate(), BackendError);
}

TEST_CASE("scripted mock: replays by tag with wildcard fallback") {
    ScriptedMockBackend mock({{"item1", "Answer: B"}, {"*", "Answer: A"}});
    ModelRequest req;
    req.prompt = "p";
    req.tag = "item1";
    CHECK(mock.query(req).text == "Answer: B");
    req.tag = "unknown";
    CHECK(mock.query(req).text == "Answer: A");
    ScriptedMockBackend strict(std::map<std::string, std::string>{{"only", "x"}});
    req.tag = "missing";
    CHECK_THROWS_AS(strict.query(req), BackendError);
}

TEST_CASE("uniform mock: reproducible and near-uniform over letters") {
    ModelRequest req;
    req.prompt = "p";

    UniformRandomMockBackend a(42, 4);
    UniformRandomMockBackend b(42, 4);
    for (int i = 0; i < 20; ++i) CHECK(a.query(req).text == b.query(req).text);

    UniformRandomMockBackend mock(7, 4);
    std::map<char, int> freq;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) {
        const std::string text = mock.query(req).text;
        REQUIRE(text.rfind("Answer: ", 0) == 0);
        ++freq[text.back()];
    }
    for (char c : {'A', 'B', 'C', 'D'}) {
        const double p = static_cast<double>(freq[c]) / draws;
        CHECK(p > 0.23);
        CHECK(p < 0.27);
    }
}

TEST_CASE("remote backend: succeeds after transient 500s within the retry budget") {
    std::atomic<int> calls{0};
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
            if (calls++ < 2) {
                res.status = 500;
            } else {
                res.set_content(R"({"text": "Answer: B"})", "application/json");
            }
        });
    });
    RemoteBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.initial_backoff = std::chrono::milliseconds(5);
    RemoteBackend backend(cfg);
    ModelRequest req;
    req.prompt = "p";
    CHECK(backend.query(req).text == "Answer: B");
    CHECK(calls == 3);
}

TEST_CASE("remote backend: persistent failure exhausts retries") {
    std::atomic<int> calls{0};
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
            ++calls;
            res.status = 503;
        });
    });
    RemoteBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.initial_backoff = std::chrono::milliseconds(1);
    RemoteBackend backend(cfg);
    ModelRequest req;
    req.prompt = "p";
    CHECK_THROWS_AS(backend.query(req), BackendUnavailableError);
    CHECK(calls == 3);
}

TEST_CASE("remote backend: non-retryable 4xx is rejected immediately") {
    std::atomic<int> calls{0};
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
            ++calls;
            res.status = 400;
            res.set_content("bad request body", "text/plain");
        });
    });
    RemoteBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    RemoteBackend backend(cfg);
    ModelRequest req;
    req.prompt = "p";
    CHECK_THROWS_WITH_AS(backend.query(req), doctest::Contains("bad request body"),
                         RequestRejectedError);
    CHECK(calls == 1);
}

TEST_CASE("remote backend: sends the documented wire format") {
    std::string seen_body;
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
            seen_body = req.body;
            res.set_content(R"({"text": "ok"})", "application/json");
        });
    });
    RemoteBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    RemoteBackend backend(cfg);
    ModelRequest req;
    req.prompt = "the prompt";
    req.media_refs = {"frame0.jpg", "frame1.jpg"};
    req.temperature = 0.5;
    req.max_tokens = 64;
    backend.query(req);
    auto j = nlohmann::json::parse(seen_body);
    CHECK(j["prompt"] == "the prompt");
    CHECK(j["media"] == std::vector<std::string>{"frame0.jpg", "frame1.jpg"});
    CHECK(j["temperature"] == 0.5);
    CHECK(j["max_tokens"] == 64);
}

TEST_CASE("remote backend: in-flight requests stay within the configured bound") {
    std::atomic<int> active{0};
    std::atomic<int> max_active{0};
    trafficrag::testing::LocalServer server([&](httplib::Server& s) {
        s.Post("/v1/chat", [&](const httplib::Request&, httplib::Response& res) {
            const int now = ++active;
            int prev = max_active.load();
            while (now > prev && !max_active.compare_exchange_weak(prev, now)) {
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(40));
            --active;
            res.set_content(R"({"text": "ok"})", "application/json");
        });
    });
    RemoteBackendConfig cfg;
    cfg.endpoint = server.endpoint();
    cfg.max_in_flight = 2;
    RemoteBackend backend(cfg);
    std::vector<std::thread> threads;
    for (int i = 0; i < 6; ++i)
        threads.emplace_back([&] {
            ModelRequest req;
            req.prompt = "p";
            backend.query(req);
        });
    for (auto& t : threads) t.join();
    CHECK(max_active.load() <= 2);
}
