#pragma once

#include <cctype>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "trafficrag/vector_index.hpp"

namespace trafficrag {

struct PromptError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

constexpr std::size_t kMaxOptions = 8;

// Fixed chain-of-thought directive; kept in one place so ablations compare
// identical text.
inline const char* kCotDirective =
    "First, break the problem into steps and reason through each step explicitly. "
    "Then give your final answer.";

inline const char* kKnowledgeHeader = "Relevant traffic knowledge:";
inline const char* kAnswerFormat = "End your reply with `Answer: <LETTER>`.";

struct RetrievedChunk {
    std::uint64_t chunk_id;
    std::string text;
    double score;
};

struct PromptBundle {
    std::string question;
    std::vector<std::string> options;
    std::vector<RetrievedChunk> retrieved;  // rank order
    bool cot_enabled = false;
    bool rag_enabled = false;
    std::string rendered;
};

// Optional template override; placeholders {question} {options} {knowledge}
// {cot} {answer_format}.
struct PromptTemplate {
    std::string text;
};

inline std::string default_template() {
    return "{question}\n{options}{knowledge}{cot}{answer_format}";
}

namespace prompt_detail {

inline void replace_all(std::string& s, std::string_view from, std::string_view to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

}  // namespace prompt_detail

inline PromptBundle assemble_prompt(const std::string& question,
                                    const std::vector<std::string>& options,
                                    const std::vector<RetrievedChunk>& retrieved, bool cot,
                                    bool rag,
                                    const std::optional<PromptTemplate>& tmpl = std::nullopt) {
    if (normalize_whitespace(question).empty())
        throw PromptError("assemble_prompt: question is empty");
    if (options.size() > kMaxOptions)
        throw PromptError("assemble_prompt: more than 8 options");
    for (const auto& c : retrieved)
        if (c.text.empty())
            throw PromptError("assemble_prompt: retrieved chunk " +
                              std::to_string(c.chunk_id) + " has no resolvable text");

    PromptBundle bundle;
    bundle.question = question;
    bundle.options = options;
    bundle.retrieved = rag ? retrieved : std::vector<RetrievedChunk>{};
    bundle.cot_enabled = cot;
    bundle.rag_enabled = rag;

    std::string options_block;
    for (std::size_t i = 0; i < options.size(); ++i) {
        options_block += static_cast<char>('A' + i);
        options_block += ". " + options[i] + "\n";
    }
    if (!options_block.empty()) options_block = "\n" + options_block;

    std::string knowledge_block;
    if (rag && !bundle.retrieved.empty()) {
        knowledge_block = std::string("\n") + kKnowledgeHeader + "\n";
        for (std::size_t i = 0; i < bundle.retrieved.size(); ++i)
            knowledge_block +=
                std::to_string(i + 1) + ". " + bundle.retrieved[i].text + "\n";
    }

    std::string cot_block = cot ? std::string("\n") + kCotDirective + "\n" : "";
    std::string answer_block = options.empty() ? "" : std::string("\n") + kAnswerFormat + "\n";

    std::string rendered = tmpl ? tmpl->text : default_template();
    prompt_detail::replace_all(rendered, "{question}", question);
    prompt_detail::replace_all(rendered, "{options}", options_block);
    prompt_detail::replace_all(rendered, "{knowledge}", knowledge_block);
    prompt_detail::replace_all(rendered, "{cot}", cot_block);
    prompt_detail::replace_all(rendered, "{answer_format}", answer_block);
    bundle.rendered = std::move(rendered);
    return bundle;
}

// ---------------------------------------------------------------------------
// Answer extraction
// ---------------------------------------------------------------------------

enum class ExtractionMethod { Marker, FallbackLetter };

struct AnswerExtraction {
    std::size_t choice_index = 0;
    std::size_t span_start = 0;
    std::size_t span_end = 0;
    ExtractionMethod method = ExtractionMethod::Marker;
};

struct UnparseableAnswerError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace prompt_detail {

inline bool iequal_at(std::string_view s, std::size_t pos, std::string_view word) {
    if (pos + word.size() > s.size()) return false;
    for (std::size_t i = 0; i < word.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(s[pos + i])) !=
            std::tolower(static_cast<unsigned char>(word[i])))
            return false;
    return true;
}

}  // namespace prompt_detail

// Rule 1: last case-insensitive "Answer:" followed by optional whitespace and
// a letter mapping into options. Rule 2: last standalone capital letter
// (word-bounded) mapping into options.
inline AnswerExtraction extract_answer(std::string_view output,
                                       const std::vector<std::string>& options) {
    if (options.empty()) throw PromptError("extract_answer: options must be non-empty");
    const std::size_t n_opt = std::min(options.size(), kMaxOptions);

    // Rule 1: scan all markers, keep the last valid one.
    std::optional<AnswerExtraction> best;
    constexpr std::string_view marker = "answer:";
    for (std::size_t pos = 0; pos + marker.size() <= output.size(); ++pos) {
        if (!prompt_detail::iequal_at(output, pos, marker)) continue;
        std::size_t p = pos + marker.size();
        while (p < output.size() && (output[p] == ' ' || output[p] == '\t')) ++p;
        if (p >= output.size()) continue;
        const char c = output[p];
        if (c >= 'A' && c < static_cast<char>('A' + n_opt))
            best = AnswerExtraction{static_cast<std::size_t>(c - 'A'), pos, p + 1,
                                    ExtractionMethod::Marker};
    }
    if (best) return *best;

    // Rule 2: last word-bounded single capital letter in range.
    auto is_word = [](char c) {
        return std::isalnum(static_cast<unsigned char>(c)) != 0;
    };
    for (std::size_t i = output.size(); i-- > 0;) {
        const char c = output[i];
        if (c < 'A' || c >= static_cast<char>('A' + n_opt)) continue;
        const bool left_ok = i == 0 || !is_word(output[i - 1]);
        const bool right_ok = i + 1 >= output.size() || !is_word(output[i + 1]);
        if (left_ok && right_ok)
            return AnswerExtraction{static_cast<std::size_t>(c - 'A'), i, i + 1,
                                    ExtractionMethod::FallbackLetter};
    }
    throw UnparseableAnswerError("no answer marker or standalone option letter found");
}

}  // namespace trafficrag
