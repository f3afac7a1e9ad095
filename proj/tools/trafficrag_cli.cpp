// traffic-rag command line: corpus ingestion, index build, single queries,
// batch evaluation, ablation runs, and the numeric kernels selftest.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "trafficrag/backend.hpp"
#include "trafficrag/corpus.hpp"
#include "trafficrag/embedding.hpp"
#include "trafficrag/eval.hpp"
#include "trafficrag/kernels_selftest.hpp"
#include "trafficrag/prompting.hpp"
#include "trafficrag/vector_index.hpp"

namespace {

using nlohmann::json;
using namespace trafficrag;

struct DocumentSpec {
    std::string path;
    std::string source_id;
    ChunkCategory category = ChunkCategory::Regulation;
};

struct RunConfig {
    std::string corpus_path;
    std::string index_path;
    std::string dataset_path;
    EmbeddingProviderConfig embedding;
    std::string backend_spec;  // url | mock:scripted:<path> | mock:uniform:<n>
    std::size_t k = kDefaultTopK;
    std::string mode = "base";
    std::uint64_t seed = 0;
    std::string report_out;
    std::vector<DocumentSpec> documents;
    std::size_t max_chunk_chars = 1000;
    std::string template_path;
};

RunConfig load_config(const std::string& path) {
    RunConfig cfg;
    if (path.empty()) return cfg;
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config file: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw std::runtime_error("config parse error: " + std::string(e.what()));
    }
    cfg.corpus_path = j.value("corpus_path", "");
    cfg.index_path = j.value("index_path", "");
    cfg.dataset_path = j.value("dataset_path", "");
    cfg.backend_spec = j.value("backend", "");
    cfg.k = j.value("k", kDefaultTopK);
    cfg.mode = j.value("mode", "base");
    cfg.seed = j.value("seed", std::uint64_t{0});
    cfg.report_out = j.value("report_out", "");
    cfg.max_chunk_chars = j.value("max_chunk_chars", std::size_t{1000});
    cfg.template_path = j.value("template_path", "");
    if (j.contains("embedding")) {
        const auto& e = j["embedding"];
        const std::string kind = e.value("kind", "deterministic");
        cfg.embedding.kind =
            kind == "remote" ? ProviderKind::RemoteService : ProviderKind::DeterministicTest;
        cfg.embedding.dim = e.value("dim", kDefaultEmbeddingDim);
        cfg.embedding.endpoint = e.value("endpoint", "");
        cfg.embedding.seed = e.value("seed", std::uint64_t{0});
    }
    for (const auto& d : j.value("documents", json::array())) {
        DocumentSpec spec;
        spec.path = d.at("path").get<std::string>();
        spec.source_id = d.at("source_id").get<std::string>();
        const auto cat = category_from_string(d.at("category").get<std::string>());
        if (!cat)
            throw std::runtime_error("config: unknown document category '" +
                                     d.at("category").get<std::string>() + "'");
        spec.category = *cat;
        cfg.documents.push_back(std::move(spec));
    }
    return cfg;
}

json config_to_json(const RunConfig& cfg) {
    return json{{"corpus_path", cfg.corpus_path},
                {"index_path", cfg.index_path},
                {"dataset_path", cfg.dataset_path},
                {"embedding",
                 {{"kind", cfg.embedding.kind == ProviderKind::RemoteService ? "remote"
                                                                             : "deterministic"},
                  {"dim", cfg.embedding.dim},
                  {"endpoint", cfg.embedding.endpoint},
                  {"seed", cfg.embedding.seed}}},
                {"backend", cfg.backend_spec},
                {"k", cfg.k},
                {"mode", cfg.mode},
                {"seed", cfg.seed},
                {"report_out", cfg.report_out},
                {"max_chunk_chars", cfg.max_chunk_chars},
                {"template_path", cfg.template_path}};
}

// Collects every violation at once so one run reports the full set.
void validate_config(const RunConfig& cfg, bool needs_rag, bool needs_dataset,
                     bool needs_backend) {
    std::vector<std::string> errors;
    if (cfg.k < 1) errors.push_back("k must be >= 1");
    if (!mode_from_string(cfg.mode, cfg.k)) errors.push_back("mode must be base|cot|cot_rag");
    if (needs_rag) {
        if (cfg.corpus_path.empty()) errors.push_back("corpus_path is required");
        if (cfg.index_path.empty()) errors.push_back("index_path is required");
    }
    if (needs_dataset && cfg.dataset_path.empty()) errors.push_back("dataset_path is required");
    if (needs_backend && cfg.backend_spec.empty()) errors.push_back("backend is required");
    if (cfg.embedding.kind == ProviderKind::RemoteService && cfg.embedding.endpoint.empty())
        errors.push_back("embedding.endpoint is required for remote embedding");
    if (!errors.empty()) {
        std::string joined;
        for (const auto& e : errors) joined += (joined.empty() ? "" : "; ") + e;
        throw std::runtime_error("config validation failed: " + joined);
    }
}

std::unique_ptr<Backend> make_backend(const RunConfig& cfg) {
    const std::string& spec = cfg.backend_spec;
    if (spec.rfind("mock:scripted:", 0) == 0) {
        const std::string path = spec.substr(14);
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open scripted mock file: " + path);
        json j = json::parse(in);
        std::map<std::string, std::string> script;
        for (const auto& [key, value] : j.items()) script[key] = value.get<std::string>();
        return std::make_unique<ScriptedMockBackend>(std::move(script));
    }
    if (spec.rfind("mock:uniform:", 0) == 0) {
        const std::size_t n = std::stoul(spec.substr(13));
        return std::make_unique<UniformRandomMockBackend>(cfg.seed, n);
    }
    RemoteBackendConfig rc;
    rc.endpoint = spec;
    return std::make_unique<RemoteBackend>(rc);
}

std::optional<PromptTemplate> load_template(const RunConfig& cfg) {
    if (cfg.template_path.empty()) return std::nullopt;
    std::ifstream in(cfg.template_path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open template file: " + cfg.template_path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return PromptTemplate{ss.str()};
}

int cmd_ingest(const RunConfig& cfg) {
    validate_config(cfg, false, false, false);
    if (cfg.corpus_path.empty())
        throw std::runtime_error("config validation failed: corpus_path is required");
    if (cfg.documents.empty())
        throw std::runtime_error("config validation failed: documents list is empty");
    Corpus corpus;
    std::uint64_t next_id = 0;
    for (const auto& doc : cfg.documents) {
        std::ifstream in(doc.path, std::ios::binary);
        if (!in) throw std::runtime_error("cannot open document: " + doc.path);
        std::ostringstream ss;
        ss << in.rdbuf();
        auto chunks =
            ingest_document(ss.str(), doc.source_id, doc.category, cfg.max_chunk_chars, next_id);
        if (!chunks.empty()) next_id = chunks.back().chunk_id + 1;
        for (auto& c : chunks) corpus.chunks.push_back(std::move(c));
    }
    corpus = make_corpus(std::move(corpus.chunks));
    save_corpus(corpus, cfg.corpus_path);
    std::cout << "wrote " << corpus.size() << " chunks from " << corpus.doc_count
              << " documents to " << cfg.corpus_path << "\n";
    return 0;
}

int cmd_build_index(const RunConfig& cfg) {
    validate_config(cfg, true, false, false);
    Corpus corpus = load_corpus(cfg.corpus_path);
    auto provider = make_provider(cfg.embedding);
    VectorDatabase db = VectorDatabase::build(embed_corpus(corpus, *provider));
    save_index(db, cfg.index_path);
    std::cout << "indexed " << db.size() << " chunks (dim " << db.dim() << ") into "
              << cfg.index_path << "\n";
    return 0;
}

int cmd_ask(const RunConfig& cfg, const std::string& question,
            const std::vector<std::string>& options) {
    const auto mode = mode_from_string(cfg.mode, cfg.k);
    validate_config(cfg, mode && mode->rag, false, true);
    auto backend = make_backend(cfg);

    std::vector<RetrievedChunk> retrieved;
    if (mode->rag) {
        Corpus corpus = load_corpus(cfg.corpus_path);
        VectorDatabase db = load_index(cfg.index_path);
        auto provider = make_provider(cfg.embedding);
        const auto result = top_k(db, provider->embed(question), cfg.k);
        RagContext ctx{&corpus, &db, provider.get()};
        for (const auto& sc : result.ranked)
            retrieved.push_back({sc.chunk_id, ctx.resolve_text(sc.chunk_id), sc.score});
        for (const auto& c : retrieved)
            std::cout << "retrieved chunk " << c.chunk_id << " (score " << c.score
                      << "): " << c.text << "\n";
    }
    PromptBundle bundle =
        assemble_prompt(question, options, retrieved, mode->cot, mode->rag, load_template(cfg));
    ModelRequest request;
    request.prompt = bundle.rendered;
    request.tag = "ask";
    ModelResponse response = backend->query(request);
    std::cout << response.text << "\n";
    if (!options.empty()) {
        try {
            const auto ans = extract_answer(response.text, options);
            std::cout << "extracted answer: " << static_cast<char>('A' + ans.choice_index)
                      << "\n";
        } catch (const UnparseableAnswerError&) {
            std::cout << "extracted answer: <unparseable>\n";
        }
    }
    return 0;
}

void write_report_document(const json& doc, const std::string& out_path) {
    if (out_path.empty()) {
        std::cout << doc.dump(2) << "\n";
        return;
    }
    std::ofstream out(out_path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open report output: " + out_path);
    out << doc.dump(2) << "\n";
}

int cmd_eval(const RunConfig& cfg) {
    const auto mode = mode_from_string(cfg.mode, cfg.k);
    validate_config(cfg, mode && mode->rag, true, true);
    auto dataset = load_dataset(cfg.dataset_path);
    auto backend = make_backend(cfg);

    EvalOptions opts;
    opts.seed = cfg.seed;
    opts.prompt_template = load_template(cfg);
    if (!cfg.report_out.empty()) opts.progress_path = cfg.report_out + ".progress.jsonl";

    EvalReport report;
    if (mode->rag) {
        Corpus corpus = load_corpus(cfg.corpus_path);
        VectorDatabase db = load_index(cfg.index_path);
        auto provider = make_provider(cfg.embedding);
        RagContext ctx{&corpus, &db, provider.get()};
        report = run_eval(dataset, *mode, &ctx, *backend, opts);
    } else {
        report = run_eval(dataset, *mode, nullptr, *backend, opts);
    }
    json doc = report_to_json(report);
    doc["resolved_config"] = config_to_json(cfg);
    write_report_document(doc, cfg.report_out);
    std::cout << render_markdown_table({report});
    return 0;
}

int cmd_ablate(const RunConfig& cfg) {
    validate_config(cfg, true, true, true);
    auto dataset = load_dataset(cfg.dataset_path);
    auto backend = make_backend(cfg);
    Corpus corpus = load_corpus(cfg.corpus_path);
    VectorDatabase db = load_index(cfg.index_path);
    auto provider = make_provider(cfg.embedding);
    RagContext ctx{&corpus, &db, provider.get()};

    EvalOptions opts;
    opts.seed = cfg.seed;
    opts.prompt_template = load_template(cfg);

    auto reports = run_ablation(dataset, ctx, *backend, cfg.k, opts);
    json doc;
    doc["reports"] = json::array();
    for (const auto& r : reports) doc["reports"].push_back(report_to_json(r));
    doc["markdown"] = render_markdown_table(reports);
    doc["resolved_config"] = config_to_json(cfg);
    write_report_document(doc, cfg.report_out);
    std::cout << render_markdown_table(reports);
    return 0;
}

int cmd_selftest() {
    const auto results = run_kernel_selftest();
    return print_selftest_table(results) ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"knowledge-grounded traffic QA pipeline"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    std::string backend_override;
    std::string mode_override;
    std::string out_override;
    std::optional<std::size_t> k_override;
    std::optional<std::uint64_t> seed_override;
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--backend", backend_override,
                   "backend: url | mock:scripted:<path> | mock:uniform:<n>");
    app.add_option("--mode", mode_override, "pipeline mode: base|cot|cot_rag");
    app.add_option("--out", out_override, "report output path");
    app.add_option("--k", k_override, "top-k retrieval depth");
    app.add_option("--seed", seed_override, "run seed");

    auto* ingest = app.add_subcommand("ingest", "segment documents into a corpus file");
    auto* build = app.add_subcommand("build-index", "embed a corpus and write the index");
    auto* ask = app.add_subcommand("ask", "answer a single question");
    auto* eval = app.add_subcommand("eval", "evaluate an MCQ dataset");
    auto* ablate = app.add_subcommand("ablate", "run the Base / +CoT / +RAG ladder");
    auto* selftest = app.add_subcommand("selftest", "run the numeric kernels invariant suite");

    std::string question;
    std::vector<std::string> options;
    ask->add_option("--question", question, "question text")->required();
    ask->add_option("--option", options, "answer option (repeatable)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (selftest->parsed()) return cmd_selftest();

        RunConfig cfg = load_config(config_path);
        if (!backend_override.empty()) cfg.backend_spec = backend_override;
        if (!mode_override.empty()) cfg.mode = mode_override;
        if (!out_override.empty()) cfg.report_out = out_override;
        if (k_override) cfg.k = *k_override;
        if (seed_override) cfg.seed = *seed_override;

        if (ingest->parsed()) return cmd_ingest(cfg);
        if (build->parsed()) return cmd_build_index(cfg);
        if (ask->parsed()) return cmd_ask(cfg, question, options);
        if (eval->parsed()) return cmd_eval(cfg);
        if (ablate->parsed()) return cmd_ablate(cfg);
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg)
            if (c == '\n') c = ' ';
        std::cerr << "error: " << msg << "\n";
        return 1;
    }
    return 2;
}
