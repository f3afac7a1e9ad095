#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "trafficrag/backend.hpp"
#include "trafficrag/corpus.hpp"
#include "trafficrag/embedding.hpp"
#include "trafficrag/prompting.hpp"
#include "trafficrag/vector_index.hpp"

namespace trafficrag {

struct EvalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Task taxonomy: TrafficQA reasoning tasks plus DriveQA sign categories.
// ---------------------------------------------------------------------------

enum class Task {
    Basic,
    Attribution,
    Introspection,
    Counterfactual,
    Forecasting,
    Reverse,
    SignRegulatory,
    SignWarning,
    SignGuide,
    SignTemporaryControl,
    Other,
};

inline const std::vector<std::pair<Task, std::string>>& task_names() {
    static const std::vector<std::pair<Task, std::string>> names = {
        {Task::Basic, "basic"},
        {Task::Attribution, "attribution"},
        {Task::Introspection, "introspection"},
        {Task::Counterfactual, "counterfactual"},
        {Task::Forecasting, "forecasting"},
        {Task::Reverse, "reverse"},
        {Task::SignRegulatory, "sign_regulatory"},
        {Task::SignWarning, "sign_warning"},
        {Task::SignGuide, "sign_guide"},
        {Task::SignTemporaryControl, "sign_temporary_control"},
        {Task::Other, "other"},
    };
    return names;
}

inline std::string to_string(Task t) {
    for (const auto& [task, name] : task_names())
        if (task == t) return name;
    throw EvalError("unreachable task");
}

inline std::optional<Task> task_from_string(const std::string& s) {
    for (const auto& [task, name] : task_names())
        if (name == s) return task;
    return std::nullopt;
}

struct McqItem {
    std::string item_id;
    std::string question;
    std::vector<std::string> options;  // 2-8 pairwise distinct
    std::size_t answer_index = 0;
    Task task = Task::Other;
    std::vector<std::string> media;
    std::optional<std::size_t> n_source_frames;
};

inline void validate_item(const McqItem& item, const std::string& where) {
    if (item.item_id.empty()) throw EvalError(where + ": empty item_id");
    if (item.question.empty()) throw EvalError(where + ": empty question");
    if (item.options.size() < 2 || item.options.size() > 8)
        throw EvalError(where + ": option count must be in [2, 8]");
    for (std::size_t i = 0; i < item.options.size(); ++i) {
        if (item.options[i].empty()) throw EvalError(where + ": empty option text");
        for (std::size_t j = i + 1; j < item.options.size(); ++j)
            if (item.options[i] == item.options[j])
                throw EvalError(where + ": duplicate option text");
    }
    if (item.answer_index >= item.options.size())
        throw EvalError(where + ": answer_index out of range");
}

inline std::vector<McqItem> load_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw EvalError("cannot open dataset file: " + path);
    std::vector<McqItem> items;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const std::string where = "dataset line " + std::to_string(line_no);
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw EvalError(where + ": malformed JSON: " + e.what());
        }
        McqItem item;
        try {
            item.item_id = j.at("item_id").get<std::string>();
            item.question = j.at("question").get<std::string>();
            item.options = j.at("options").get<std::vector<std::string>>();
            item.answer_index = j.at("answer_index").get<std::size_t>();
            const std::string task_name = j.at("task").get<std::string>();
            const auto task = task_from_string(task_name);
            if (!task) throw EvalError(where + ": unknown task '" + task_name + "'");
            item.task = *task;
            if (j.contains("media")) item.media = j["media"].get<std::vector<std::string>>();
            if (j.contains("n_source_frames"))
                item.n_source_frames = j["n_source_frames"].get<std::size_t>();
        } catch (const nlohmann::json::exception& e) {
            throw EvalError(where + ": bad field: " + e.what());
        }
        validate_item(item, where);
        items.push_back(std::move(item));
    }
    return items;
}

// ---------------------------------------------------------------------------
// Pipeline modes: the ablation ladder Base -> +CoT -> +RAG.
// ---------------------------------------------------------------------------

enum class ModeName { Base, WithCot, WithCotAndRag };

struct PipelineMode {
    ModeName name = ModeName::Base;
    bool cot = false;
    bool rag = false;
    std::size_t k = kDefaultTopK;

    static PipelineMode base(std::size_t k = kDefaultTopK) {
        return {ModeName::Base, false, false, k};
    }
    static PipelineMode with_cot(std::size_t k = kDefaultTopK) {
        return {ModeName::WithCot, true, false, k};
    }
    static PipelineMode with_cot_and_rag(std::size_t k = kDefaultTopK) {
        return {ModeName::WithCotAndRag, true, true, k};
    }
};

inline std::string to_string(ModeName m) {
    switch (m) {
        case ModeName::Base: return "base";
        case ModeName::WithCot: return "cot";
        case ModeName::WithCotAndRag: return "cot_rag";
    }
    throw EvalError("unreachable mode");
}

inline std::string mode_display_label(ModeName m) {
    switch (m) {
        case ModeName::Base: return "Base";
        case ModeName::WithCot: return "+ CoT";
        case ModeName::WithCotAndRag: return "+ RAG";
    }
    throw EvalError("unreachable mode");
}

inline std::optional<PipelineMode> mode_from_string(const std::string& s, std::size_t k) {
    if (s == "base") return PipelineMode::base(k);
    if (s == "cot") return PipelineMode::with_cot(k);
    if (s == "cot_rag") return PipelineMode::with_cot_and_rag(k);
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct TaskTally {
    std::uint64_t correct = 0;
    std::uint64_t total = 0;
    double accuracy() const {
        return total == 0 ? 0.0 : static_cast<double>(correct) / static_cast<double>(total);
    }
};

struct ConfigSnapshot {
    std::size_t embedding_dim = 0;
    std::size_t k = kDefaultTopK;
    std::string backend_id;
    std::uint64_t seed = 0;
};

struct EvalReport {
    ModeName mode = ModeName::Base;
    std::map<Task, TaskTally> per_task;
    TaskTally overall;
    std::uint64_t unparseable_count = 0;
    ConfigSnapshot config;
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Bundled retrieval components; required only when the mode enables RAG.
struct RagContext {
    const Corpus* corpus = nullptr;
    const VectorDatabase* index = nullptr;
    EmbeddingProvider* embedder = nullptr;

    std::string resolve_text(std::uint64_t chunk_id) const {
        for (const auto& c : corpus->chunks)
            if (c.chunk_id == chunk_id) return c.text;
        throw EvalError("chunk " + std::to_string(chunk_id) + " missing from corpus");
    }
};

struct EvalOptions {
    std::uint64_t seed = 0;
    std::string progress_path;  // JSON-lines checkpoint, empty to disable
    std::optional<PromptTemplate> prompt_template;
};

inline EvalReport run_eval(const std::vector<McqItem>& dataset, const PipelineMode& mode,
                           const RagContext* rag, Backend& backend,
                           const EvalOptions& opts = {}) {
    if (dataset.empty()) throw EvalError("run_eval: dataset is empty");
    for (std::size_t i = 0; i < dataset.size(); ++i)
        validate_item(dataset[i], "dataset item " + std::to_string(i));
    if (mode.rag && (rag == nullptr || rag->corpus == nullptr || rag->index == nullptr ||
                     rag->embedder == nullptr))
        throw EvalError("run_eval: RAG mode requires corpus, index, and embedder");

    EvalReport report;
    report.mode = mode.name;
    report.config.k = mode.k;
    report.config.backend_id = backend.id();
    report.config.seed = opts.seed;
    report.config.embedding_dim = mode.rag ? rag->embedder->config().dim : 0;

    std::ofstream progress;
    if (!opts.progress_path.empty()) {
        progress.open(opts.progress_path, std::ios::binary);
        if (!progress) throw EvalError("cannot open progress file: " + opts.progress_path);
    }
    auto checkpoint = [&](const std::string& item_id, std::optional<std::size_t> choice,
                          bool correct) {
        if (!progress.is_open()) return;
        nlohmann::json rec{{"item_id", item_id}, {"correct", correct}};
        if (choice)
            rec["choice_index"] = *choice;
        else
            rec["choice_index"] = nullptr;
        progress << rec.dump() << "\n";
        progress.flush();
    };

    for (const McqItem& item : dataset) {
        std::vector<RetrievedChunk> retrieved;
        if (mode.rag) {
            const EmbeddingVector query = rag->embedder->embed(item.question);
            const RetrievalResult result = top_k(*rag->index, query, mode.k);
            for (const auto& sc : result.ranked)
                retrieved.push_back({sc.chunk_id, rag->resolve_text(sc.chunk_id), sc.score});
        }
        PromptBundle bundle = assemble_prompt(item.question, item.options, retrieved,
                                              mode.cot, mode.rag, opts.prompt_template);

        ModelRequest request;
        request.prompt = bundle.rendered;
        request.tag = item.item_id;
        if (item.n_source_frames) {
            const auto indices = sample_frame_indices(*item.n_source_frames);
            for (std::size_t idx : indices) {
                if (idx < item.media.size())
                    request.media_refs.push_back(item.media[idx]);
                else
                    request.media_refs.push_back("frame:" + std::to_string(idx));
            }
        } else {
            request.media_refs = item.media;
        }

        ModelResponse response;
        try {
            response = backend.query(request);
        } catch (const BackendUnavailableError&) {
            // leave the partial checkpoint behind for resumption
            throw;
        }

        std::optional<std::size_t> choice;
        try {
            choice = extract_answer(response.text, item.options).choice_index;
        } catch (const UnparseableAnswerError&) {
            ++report.unparseable_count;
        }
        const bool correct = choice && *choice == item.answer_index;
        auto& tally = report.per_task[item.task];
        ++tally.total;
        ++report.overall.total;
        if (correct) {
            ++tally.correct;
            ++report.overall.correct;
        }
        checkpoint(item.item_id, choice, correct);
    }
    return report;
}

// The ablation ladder: same dataset, same backend, modes Base / +CoT / +RAG.
inline std::vector<EvalReport> run_ablation(const std::vector<McqItem>& dataset,
                                            const RagContext& rag, Backend& backend,
                                            std::size_t k = kDefaultTopK,
                                            const EvalOptions& opts = {}) {
    std::vector<EvalReport> reports;
    for (const PipelineMode& mode :
         {PipelineMode::base(k), PipelineMode::with_cot(k), PipelineMode::with_cot_and_rag(k)})
        reports.push_back(run_eval(dataset, mode, &rag, backend, opts));
    return reports;
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

inline nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json per_task = nlohmann::json::object();
    for (const auto& [task, tally] : r.per_task)
        per_task[to_string(task)] = {{"correct", tally.correct},
                                     {"total", tally.total},
                                     {"accuracy", tally.accuracy()}};
    return nlohmann::json{
        {"mode", to_string(r.mode)},
        {"per_task", per_task},
        {"overall",
         {{"correct", r.overall.correct},
          {"total", r.overall.total},
          {"accuracy", r.overall.accuracy()}}},
        {"unparseable_count", r.unparseable_count},
        {"config_snapshot",
         {{"embedding_dim", r.config.embedding_dim},
          {"k", r.config.k},
          {"backend_id", r.config.backend_id},
          {"seed", r.config.seed}}}};
}

inline EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    const auto mode = mode_from_string(j.at("mode").get<std::string>(), 1);
    if (!mode) throw EvalError("report json: unknown mode");
    r.mode = mode->name;
    for (const auto& [name, tally] : j.at("per_task").items()) {
        const auto task = task_from_string(name);
        if (!task) throw EvalError("report json: unknown task '" + name + "'");
        r.per_task[*task] = {tally.at("correct").get<std::uint64_t>(),
                             tally.at("total").get<std::uint64_t>()};
    }
    r.overall = {j.at("overall").at("correct").get<std::uint64_t>(),
                 j.at("overall").at("total").get<std::uint64_t>()};
    r.unparseable_count = j.at("unparseable_count").get<std::uint64_t>();
    const auto& cfg = j.at("config_snapshot");
    r.config = {cfg.at("embedding_dim").get<std::size_t>(), cfg.at("k").get<std::size_t>(),
                cfg.at("backend_id").get<std::string>(), cfg.at("seed").get<std::uint64_t>()};
    return r;
}

// Markdown table mirroring the benchmark layout: one column per task present
// plus "All". Rows in ladder order when given an ablation.
inline std::string render_markdown_table(const std::vector<EvalReport>& reports) {
    if (reports.empty()) throw EvalError("render_markdown_table: no reports");
    std::vector<Task> columns;
    for (const auto& [task, name] : task_names()) {
        (void)name;
        for (const auto& r : reports)
            if (r.per_task.count(task) &&
                std::find(columns.begin(), columns.end(), task) == columns.end())
                columns.push_back(task);
    }
    std::ostringstream out;
    out << "| Mode |";
    for (Task t : columns) out << " " << to_string(t) << " |";
    out << " All |\n|---|";
    for (std::size_t i = 0; i < columns.size() + 1; ++i) out << "---|";
    out << "\n";
    auto pct = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
        return std::string(buf);
    };
    for (const auto& r : reports) {
        out << "| " << mode_display_label(r.mode) << " |";
        for (Task t : columns) {
            auto it = r.per_task.find(t);
            out << " " << (it == r.per_task.end() ? std::string("-") : pct(it->second.accuracy()))
                << " |";
        }
        out << " " << pct(r.overall.accuracy()) << " |\n";
    }
    return out.str();
}

}  // namespace trafficrag
