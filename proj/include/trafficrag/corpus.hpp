#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace trafficrag {

struct CorpusError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class ChunkCategory {
    Regulation,
    Violation,
    AbnormalEvent,
    ManagementGuideline,
    AuthoritativeInterpretation,
};

inline std::string to_string(ChunkCategory c) {
    switch (c) {
        case ChunkCategory::Regulation: return "regulation";
        case ChunkCategory::Violation: return "violation";
        case ChunkCategory::AbnormalEvent: return "abnormal_event";
        case ChunkCategory::ManagementGuideline: return "management_guideline";
        case ChunkCategory::AuthoritativeInterpretation: return "authoritative_interpretation";
    }
    throw CorpusError("unreachable category");
}

inline std::optional<ChunkCategory> category_from_string(std::string_view s) {
    if (s == "regulation") return ChunkCategory::Regulation;
    if (s == "violation") return ChunkCategory::Violation;
    if (s == "abnormal_event") return ChunkCategory::AbnormalEvent;
    if (s == "management_guideline") return ChunkCategory::ManagementGuideline;
    if (s == "authoritative_interpretation") return ChunkCategory::AuthoritativeInterpretation;
    return std::nullopt;
}

struct CharSpan {
    std::size_t start = 0;
    std::size_t end = 0;  // half-open
    bool operator==(const CharSpan&) const = default;
};

struct KnowledgeChunk {
    std::uint64_t chunk_id = 0;
    std::string text;        // normalized: no leading/trailing whitespace, single spaces
    std::string source_doc;
    ChunkCategory category = ChunkCategory::Regulation;
    CharSpan char_span;
    bool operator==(const KnowledgeChunk&) const = default;
};

struct Corpus {
    std::vector<KnowledgeChunk> chunks;
    std::size_t doc_count = 0;

    std::size_t size() const { return chunks.size(); }
    bool operator==(const Corpus&) const = default;
};

// Collapses whitespace runs to single spaces and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
    std::string out;
    out.reserve(s.size());
    bool pending_space = false;
    for (unsigned char ch : s) {
        if (std::isspace(ch)) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(static_cast<char>(ch));
        }
    }
    return out;
}

namespace chunking_detail {

// Sentence terminators: ASCII . ! ? and fullwidth/CJK 。！？ (UTF-8).
// Returns the terminator byte length at position i, or 0.
inline std::size_t terminator_len(std::string_view s, std::size_t i) {
    const char c = s[i];
    if (c == '.' || c == '!' || c == '?') return 1;
    if (s.size() - i >= 3) {
        std::string_view t = s.substr(i, 3);
        if (t == "\xE3\x80\x82" || t == "\xEF\xBC\x81" || t == "\xEF\xBC\x9F") return 3;
    }
    return 0;
}

struct Span {
    std::size_t start;
    std::size_t end;
};

// Splits a paragraph into sentences; spans are trimmed to non-whitespace.
inline std::vector<Span> split_sentences(std::string_view text, std::size_t para_start,
                                         std::size_t para_end) {
    std::vector<Span> out;
    std::size_t sent_start = para_start;
    std::size_t i = para_start;
    auto emit = [&](std::size_t end) {
        std::size_t a = sent_start, b = end;
        while (a < b && std::isspace(static_cast<unsigned char>(text[a]))) ++a;
        while (b > a && std::isspace(static_cast<unsigned char>(text[b - 1]))) --b;
        if (a < b) out.push_back({a, b});
        sent_start = end;
    };
    while (i < para_end) {
        const std::size_t tl = terminator_len(text, i);
        if (tl > 0) {
            i += tl;
            // absorb a run of terminators ("?!", "...")
            while (i < para_end) {
                const std::size_t more = terminator_len(text, i);
                if (more == 0) break;
                i += more;
            }
            emit(i);
        } else {
            ++i;
        }
    }
    emit(para_end);
    return out;
}

}  // namespace chunking_detail

// Segments a document into chunks: blank lines are hard boundaries, sentences
// are atomic, and adjacent sentences within a paragraph merge greedily while
// the normalized chunk text stays within max_chunk_chars. A single sentence
// longer than the budget becomes one oversized chunk.
inline std::vector<KnowledgeChunk> ingest_document(std::string_view raw_text,
                                                   const std::string& source_id,
                                                   ChunkCategory category,
                                                   std::size_t max_chunk_chars = 1000,
                                                   std::uint64_t first_chunk_id = 0) {
    if (max_chunk_chars < 64) throw CorpusError("ingest_document: max_chunk_chars must be >= 64");
    using chunking_detail::Span;

    // Paragraph boundaries: a newline followed by only whitespace up to the
    // next newline (blank line).
    std::vector<Span> paragraphs;
    std::size_t pos = 0;
    while (pos < raw_text.size()) {
        // skip leading blank region
        std::size_t start = pos;
        while (start < raw_text.size() &&
               std::isspace(static_cast<unsigned char>(raw_text[start])))
            ++start;
        if (start >= raw_text.size()) break;
        // paragraph runs until a blank line (two newlines with only ws between)
        std::size_t end = start;
        std::size_t scan = start;
        while (scan < raw_text.size()) {
            if (raw_text[scan] == '\n') {
                std::size_t nl = scan + 1;
                while (nl < raw_text.size() && raw_text[nl] != '\n' &&
                       std::isspace(static_cast<unsigned char>(raw_text[nl])))
                    ++nl;
                if (nl >= raw_text.size() || raw_text[nl] == '\n') {
                    end = scan;
                    break;
                }
            }
            ++scan;
            end = scan;
        }
        paragraphs.push_back({start, end});
        pos = end + 1;
    }

    std::vector<KnowledgeChunk> chunks;
    std::uint64_t next_id = first_chunk_id;
    for (const Span& para : paragraphs) {
        auto sentences = chunking_detail::split_sentences(raw_text, para.start, para.end);
        std::size_t i = 0;
        while (i < sentences.size()) {
            std::size_t j = i;
            Span merged = sentences[i];
            std::string merged_text =
                normalize_whitespace(raw_text.substr(merged.start, merged.end - merged.start));
            while (j + 1 < sentences.size()) {
                const Span cand{merged.start, sentences[j + 1].end};
                std::string cand_text =
                    normalize_whitespace(raw_text.substr(cand.start, cand.end - cand.start));
                if (cand_text.size() > max_chunk_chars) break;
                merged = cand;
                merged_text = std::move(cand_text);
                ++j;
            }
            KnowledgeChunk c;
            c.chunk_id = next_id++;
            c.text = std::move(merged_text);
            c.source_doc = source_id;
            c.category = category;
            c.char_span = {merged.start, merged.end};
            chunks.push_back(std::move(c));
            i = j + 1;
        }
    }
    return chunks;
}

inline void validate_chunk(const KnowledgeChunk& c, const std::string& where) {
    if (c.text.empty()) throw CorpusError(where + ": empty chunk text");
    if (std::isspace(static_cast<unsigned char>(c.text.front())) ||
        std::isspace(static_cast<unsigned char>(c.text.back())))
        throw CorpusError(where + ": chunk text has leading/trailing whitespace");
    if (c.char_span.start >= c.char_span.end)
        throw CorpusError(where + ": invalid char_span");
}

// ---------------------------------------------------------------------------
// JSON-lines corpus file
// ---------------------------------------------------------------------------

inline nlohmann::json chunk_to_json(const KnowledgeChunk& c) {
    return nlohmann::json{{"chunk_id", c.chunk_id},
                          {"text", c.text},
                          {"source_doc", c.source_doc},
                          {"category", to_string(c.category)},
                          {"span", {c.char_span.start, c.char_span.end}}};
}

inline void save_corpus(const Corpus& corpus, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw CorpusError("cannot open corpus file for writing: " + path);
    for (const auto& c : corpus.chunks) out << chunk_to_json(c).dump() << "\n";
}

inline Corpus load_corpus(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CorpusError("cannot open corpus file: " + path);
    Corpus corpus;
    std::vector<std::string> docs;
    std::string line;
    std::size_t line_no = 0;
    std::uint64_t prev_id = 0;
    bool have_prev = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "corpus line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw CorpusError(where + ": malformed JSON: " + e.what());
        }
        static const std::vector<std::string> known = {"chunk_id", "text", "source_doc",
                                                       "category", "span"};
        for (auto it = j.begin(); it != j.end(); ++it) {
            if (std::find(known.begin(), known.end(), it.key()) == known.end())
                throw CorpusError(where + ": unknown key '" + it.key() + "'");
        }
        for (const auto& k : known)
            if (!j.contains(k)) throw CorpusError(where + ": missing key '" + k + "'");

        KnowledgeChunk c;
        try {
            c.chunk_id = j.at("chunk_id").get<std::uint64_t>();
            c.text = j.at("text").get<std::string>();
            c.source_doc = j.at("source_doc").get<std::string>();
            const auto cat = category_from_string(j.at("category").get<std::string>());
            if (!cat)
                throw CorpusError(where + ": unknown category '" +
                                  j.at("category").get<std::string>() + "'");
            c.category = *cat;
            const auto& span = j.at("span");
            if (!span.is_array() || span.size() != 2)
                throw CorpusError(where + ": span must be [start, end]");
            c.char_span = {span[0].get<std::size_t>(), span[1].get<std::size_t>()};
        } catch (const nlohmann::json::exception& e) {
            throw CorpusError(where + ": bad field type: " + e.what());
        }
        validate_chunk(c, where);
        for (const auto& prev : corpus.chunks)
            if (prev.chunk_id == c.chunk_id)
                throw CorpusError(where + ": duplicate chunk_id " +
                                  std::to_string(c.chunk_id));
        if (have_prev && c.chunk_id <= prev_id)
            throw CorpusError(where + ": chunk_ids must be strictly increasing");
        prev_id = c.chunk_id;
        have_prev = true;
        if (std::find(docs.begin(), docs.end(), c.source_doc) == docs.end())
            docs.push_back(c.source_doc);
        corpus.chunks.push_back(std::move(c));
    }
    corpus.doc_count = docs.size();
    return corpus;
}

inline Corpus make_corpus(std::vector<KnowledgeChunk> chunks) {
    Corpus c;
    c.chunks = std::move(chunks);
    std::vector<std::string> docs;
    for (const auto& ch : c.chunks)
        if (std::find(docs.begin(), docs.end(), ch.source_doc) == docs.end())
            docs.push_back(ch.source_doc);
    c.doc_count = docs.size();
    return c;
}

}  // namespace trafficrag
