#pragma once

#include <map>
#include <memory>
#include <string>
#include <vector>

#include "trafficrag/backend.hpp"
#include "trafficrag/corpus.hpp"
#include "trafficrag/embedding.hpp"
#include "trafficrag/eval.hpp"
#include "trafficrag/vector_index.hpp"

namespace trafficrag::testing {

// Balanced synthetic 4-option MCQ dataset: answers cycle A, B, C, D.
inline std::vector<McqItem> balanced_dataset(std::size_t n_items, std::size_t n_options = 4) {
    std::vector<McqItem> items;
    items.reserve(n_items);
    for (std::size_t i = 0; i < n_items; ++i) {
        McqItem item;
        item.item_id = "item" + std::to_string(i);
        item.question = "Synthetic question " + std::to_string(i) + "?";
        for (std::size_t o = 0; o < n_options; ++o)
            item.options.push_back("option " + std::to_string(o));
        item.answer_index = i % n_options;
        item.task = Task::Other;
        items.push_back(std::move(item));
    }
    return items;
}

// Planted-fact fixture: each item is answerable only through one corpus
// chunk, and the deterministic embedder retrieves that chunk at rank 1
// because question and chunk share a distinctive fact token.
struct PlantedFactFixture {
    std::vector<McqItem> items;
    Corpus corpus;
    VectorDatabase index;
    std::unique_ptr<DeterministicEmbedder> embedder;
    std::unique_ptr<KnowledgeAwareMockBackend> backend;
    std::map<std::string, std::uint64_t> decisive_chunk;  // item_id -> chunk_id
};

inline PlantedFactFixture make_planted_fact_fixture(std::size_t n_items = 6,
                                                    std::uint64_t seed = 101,
                                                    std::size_t dim = 256) {
    PlantedFactFixture fx;
    EmbeddingProviderConfig cfg;
    cfg.kind = ProviderKind::DeterministicTest;
    cfg.seed = seed;
    cfg.dim = dim;
    fx.embedder = std::make_unique<DeterministicEmbedder>(cfg);

    std::map<std::string, KnowledgeAwareMockBackend::ItemRule> rules;
    std::vector<KnowledgeChunk> chunks;
    for (std::size_t i = 0; i < n_items; ++i) {
        const std::string fact = "factcode" + std::to_string(i);
        const std::size_t answer = i % 4;
        const char correct = static_cast<char>('A' + answer);
        const char fallback = static_cast<char>('A' + (answer + 1) % 4);

        KnowledgeChunk chunk;
        chunk.chunk_id = i;
        chunk.text = fact + " " + fact + " " + fact + " means choice " + correct +
                     " is mandated by regulation.";
        chunk.source_doc = "planted";
        chunk.category = ChunkCategory::Regulation;
        chunk.char_span = {0, chunk.text.size()};
        chunks.push_back(chunk);

        McqItem item;
        item.item_id = "planted" + std::to_string(i);
        item.question =
            "Given marker " + fact + " " + fact + " " + fact + ", what is required?";
        item.options = {"choice A", "choice B", "choice C", "choice D"};
        item.answer_index = answer;
        item.task = static_cast<Task>(i % 6);
        fx.items.push_back(item);

        rules[item.item_id] = {chunk.text, correct, fallback};
        fx.decisive_chunk[item.item_id] = chunk.chunk_id;
    }
    fx.corpus = make_corpus(std::move(chunks));
    fx.index = VectorDatabase::build(embed_corpus(fx.corpus, *fx.embedder));
    fx.backend = std::make_unique<KnowledgeAwareMockBackend>(std::move(rules));
    return fx;
}

// Brute-force check that each item's decisive chunk is its top-1 retrieval.
inline bool verify_planted_top1(const PlantedFactFixture& fx) {
    for (const auto& item : fx.items) {
        const EmbeddingVector q = fx.embedder->embed(item.question);
        double best = -2.0;
        std::uint64_t best_id = 0;
        for (const auto& [id, vec] : fx.index.entries()) {
            const double s = cosine_similarity(q, vec);
            if (s > best) {
                best = s;
                best_id = id;
            }
        }
        if (best_id != fx.decisive_chunk.at(item.item_id)) return false;
    }
    return true;
}

}  // namespace trafficrag::testing
