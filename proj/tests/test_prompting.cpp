#include <doctest.h>

#include <string>
#include <vector>

#include "trafficrag/prompting.hpp"

using namespace trafficrag;

namespace {

std::size_t count_occurrences(const std::string& haystack, const std::string& needle) {
    std::size_t count = 0, pos = 0;
    while ((pos = haystack.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

const std::vector<std::string> four_options = {"stop", "yield", "go", "reverse"};

}  // namespace

TEST_CASE("assemble: all features off renders the question block only") {
    auto b = assemble_prompt("Is the car speeding?", {}, {}, false, false);
    CHECK(b.rendered == "Is the car speeding?\n");
    CHECK(b.retrieved.empty());
}

TEST_CASE("assemble: golden rendering with options, knowledge and CoT") {
    std::vector<RetrievedChunk> retrieved = {
        {12, "Speed limits apply in school zones.", 0.91},
        {5, "Yield to pedestrians at crossings.", 0.74},
    };
    auto b = assemble_prompt("What must the driver do?", four_options, retrieved, true, true);
    const std::string expected =
        "What must the driver do?\n"
        "\n"
        "A. stop\n"
        "B. yield\n"
        "C. go\n"
        "D. reverse\n"
        "\n"
        "Relevant traffic knowledge:\n"
        "1. Speed limits apply in school zones.\n"
        "2. Yield to pedestrians at crossings.\n"
        "\n"
        "First, break the problem into steps and reason through each step explicitly. "
        "Then give your final answer.\n"
        "\n"
        "End your reply with `Answer: <LETTER>`.\n";
    CHECK(b.rendered == expected);
}

TEST_CASE("assemble: K retrieved chunks appear as K numbered items in rank order") {
    std::vector<RetrievedChunk> retrieved;
    for (int i = 0; i < 5; ++i)
        retrieved.push_back({static_cast<std::uint64_t>(i), "knowledge item " + std::to_string(i),
                             1.0 - 0.1 * i});
    auto b = assemble_prompt("Q?", four_options, retrieved, true, true);
    for (int i = 0; i < 5; ++i) {
        const std::string line =
            std::to_string(i + 1) + ". knowledge item " + std::to_string(i);
        CHECK(count_occurrences(b.rendered, line) == 1);
    }
    // rank order preserved
    std::size_t prev = 0;
    for (int i = 0; i < 5; ++i) {
        const std::size_t pos = b.rendered.find("knowledge item " + std::to_string(i));
        CHECK(pos > prev);
        prev = pos;
    }
}

TEST_CASE("assemble: structural invariants") {
    std::vector<RetrievedChunk> retrieved = {{1, "chunk one", 0.9}};
    auto b = assemble_prompt("The question?", four_options, retrieved, true, true);
    CHECK(count_occurrences(b.rendered, "The question?") == 1);
    CHECK(count_occurrences(b.rendered, kCotDirective) == 1);
    // CoT sits after the knowledge block and before the answer-format line
    CHECK(b.rendered.find(kKnowledgeHeader) < b.rendered.find(kCotDirective));
    CHECK(b.rendered.find(kCotDirective) < b.rendered.find(kAnswerFormat));
    // answer-format instruction is last
    CHECK(b.rendered.rfind(std::string(kAnswerFormat) + "\n") ==
          b.rendered.size() - std::string(kAnswerFormat).size() - 1);
}

TEST_CASE("assemble: rendering is idempotent") {
    std::vector<RetrievedChunk> retrieved = {{1, "alpha", 0.5}, {2, "beta", 0.4}};
    auto a = assemble_prompt("Q?", four_options, retrieved, true, true);
    auto b = assemble_prompt("Q?", four_options, retrieved, true, true);
    CHECK(a.rendered == b.rendered);
}

TEST_CASE("assemble: ablation modes share blocks as ordered subsequences") {
    std::vector<RetrievedChunk> retrieved = {{1, "alpha fact", 0.5}};
    auto base = assemble_prompt("Q?", four_options, {}, false, false);
    auto cot = assemble_prompt("Q?", four_options, {}, true, false);
    auto rag = assemble_prompt("Q?", four_options, retrieved, true, true);
    // base blocks appear in +CoT; +CoT blocks appear in +CoT+RAG
    CHECK(cot.rendered.find("Q?\n") != std::string::npos);
    CHECK(cot.rendered.find(kCotDirective) != std::string::npos);
    CHECK(rag.rendered.find(kCotDirective) != std::string::npos);
    CHECK(rag.rendered.find("alpha fact") != std::string::npos);
    CHECK(base.rendered.find(kCotDirective) == std::string::npos);
    CHECK(cot.rendered.find(kKnowledgeHeader) == std::string::npos);
}

TEST_CASE("assemble: errors") {
    CHECK_THROWS_AS(assemble_prompt("  ", {}, {}, false, false), PromptError);
    std::vector<RetrievedChunk> unresolved = {{7, "", 0.5}};
    CHECK_THROWS_WITH_AS(assemble_prompt("Q?", four_options, unresolved, false, true),
                         doctest::Contains("7"), PromptError);
    std::vector<std::string> nine(9, "x");
    for (std::size_t i = 0; i < nine.size(); ++i) nine[i] += std::to_string(i);
    CHECK_THROWS_AS(assemble_prompt("Q?", nine, {}, false, false), PromptError);
}

TEST_CASE("assemble: template override controls the layout") {
    PromptTemplate tmpl{"K:{knowledge}Q:{question}"};
    std::vector<RetrievedChunk> retrieved = {{1, "fact", 0.5}};
    auto b = assemble_prompt("Why?", {}, retrieved, false, true, tmpl);
    CHECK(b.rendered.find("Q:Why?") != std::string::npos);
    CHECK(b.rendered.find("fact") < b.rendered.find("Q:Why?"));
}

TEST_CASE("extract: direct marker") {
    auto a = extract_answer("...reasoning... Answer: C", four_options);
    CHECK(a.choice_index == 2);
    CHECK(a.method == ExtractionMethod::Marker);
}

TEST_CASE("extract: last marker wins") {
    auto a = extract_answer("I think B. No - Answer: A", four_options);
    CHECK(a.choice_index == 0);
    CHECK(a.method == ExtractionMethod::Marker);
}

TEST_CASE("extract: marker is case-insensitive with optional whitespace") {
    CHECK(extract_answer("ANSWER:   D", four_options).choice_index == 3);
    CHECK(extract_answer("answer:B", four_options).choice_index == 1);
}

TEST_CASE("extract: fallback standalone letter") {
    auto a = extract_answer("The answer is clearly (B)", four_options);
    CHECK(a.choice_index == 1);
    CHECK(a.method == ExtractionMethod::FallbackLetter);
}

TEST_CASE("extract: fallback takes the last standalone letter in range") {
    auto a = extract_answer("Maybe A, maybe C.", four_options);
    CHECK(a.choice_index == 2);
    CHECK(a.method == ExtractionMethod::FallbackLetter);
}

TEST_CASE("extract: letters outside the option range do not match") {
    std::vector<std::string> two = {"yes", "no"};
    // 'C' and 'D' are out of range for two options
    auto a = extract_answer("C or D? Actually B", two);
    CHECK(a.choice_index == 1);
    CHECK_THROWS_AS(extract_answer("Answer: C", two), UnparseableAnswerError);
}

TEST_CASE("extract: letters embedded in words are not standalone") {
    CHECK_THROWS_AS(extract_answer("CABbage DAta", four_options), UnparseableAnswerError);
}

TEST_CASE("extract: marker totality over every letter and option count") {
    for (std::size_t n = 1; n <= 8; ++n) {
        std::vector<std::string> options;
        for (std::size_t i = 0; i < n; ++i) options.push_back("opt" + std::to_string(i));
        for (std::size_t i = 0; i < n; ++i) {
            const std::string text = std::string("Answer: ") + static_cast<char>('A' + i);
            auto a = extract_answer(text, options);
            CHECK(a.choice_index == i);
            CHECK(a.method == ExtractionMethod::Marker);
        }
    }
}

TEST_CASE("extract: empty output and empty options") {
    CHECK_THROWS_AS(extract_answer("", four_options), UnparseableAnswerError);
    CHECK_THROWS_AS(extract_answer("Answer: A", {}), PromptError);
}

TEST_CASE("extract: matched span points into the output") {
    const std::string out = "blah Answer: C";
    auto a = extract_answer(out, four_options);
    CHECK(a.span_start == 5);
    CHECK(a.span_end == out.size());
}
