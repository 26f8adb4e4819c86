#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "telerag/abbrev.hpp"
#include "telerag/answer.hpp"
#include "telerag/backend.hpp"
#include "telerag/error.hpp"
#include "telerag/prompt.hpp"
#include "telerag/retrieval.hpp"

namespace telerag::eval {

/// Reads a TeleQnA-style JSON object of questions:
///   {"question 0": {"question": ..., "option 1": ..., ..., "answer": "option 3: ...", "category": ...}}
/// Option labels must be contiguous from 1. "answer" may be absent (unlabelled
/// sets); when present its label must parse.
std::vector<prompt::McqQuestion> load_dataset(const std::filesystem::path& path);
std::vector<prompt::McqQuestion> parse_dataset(const nlohmann::ordered_json& j);

/// Inverse of parse_dataset, preserving question order.
nlohmann::ordered_json dataset_to_json(const std::vector<prompt::McqQuestion>& questions);

struct PipelineConfig {
    bool rag_enabled = true;
    bool include_options = true;
    std::size_t shuffle_k = 20;  // 0 disables the batch-shuffle vote
    std::size_t per_retriever_k = 2;
    bool use_bm25 = true;
    retrieval::Bm25Params bm25;
    std::size_t embed_batch_size = 64;
    std::uint64_t seed = 0;
    int max_new_tokens = 32;
    double temperature = 0.0;
    std::size_t workers = 1;  // execution detail, excluded from the hash

    backend::BackendConfig generation;
    std::vector<backend::BackendConfig> retrieval_embedders;  // default: one mock-bow; a config list replaces it
    backend::BackendConfig answer_embedder;

    PipelineConfig();

    /// Throws on contradictory settings (shuffle without options, ...).
    void validate() const;
    nlohmann::json to_json() const;
    std::string hash() const;

    /// Relative script/cache paths are resolved against `base_dir`.
    static PipelineConfig from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
    static PipelineConfig load(const std::filesystem::path& path);
};

struct Backends {
    std::shared_ptr<const backend::CompletionBackend> generation;
    std::vector<std::shared_ptr<const backend::EmbeddingBackend>> retrieval;
    std::shared_ptr<const backend::EmbeddingBackend> answer;

    static Backends from_config(const PipelineConfig& cfg);
};

struct Artifacts {
    const retrieval::IndexBundle* index = nullptr;
    const abbrev::AbbrevDict* dict = nullptr;
};

struct QuestionRecord {
    std::string question_id;
    std::string category;
    std::optional<std::size_t> gold;
    std::size_t prediction = 0;
    answer::Method method = answer::Method::label_parse;
    bool fallback = false;
    nlohmann::json diagnostics;

    bool correct() const { return gold && *gold == prediction; }
    nlohmann::json to_json() const;
};

struct CategoryStats {
    std::size_t total = 0;
    std::size_t correct = 0;
};

struct EvalReport {
    std::size_t total = 0;
    std::size_t correct = 0;
    double accuracy = 0.0;  // percent
    std::map<std::string, CategoryStats> per_category;
    std::vector<QuestionRecord> records;
    std::string config_hash;
    bool partial = false;

    nlohmann::json to_json() const;
    /// Plain-text summary table.
    std::string table() const;
};

/// Raised when a backend or configuration error stops a run. Carries the
/// records finished before the failure.
class PipelineAborted : public Error {
public:
    PipelineAborted(const Error& cause, EvalReport partial_report)
        : Error(cause.kind(), cause.what()), partial(std::move(partial_report)) {}
    EvalReport partial;
};

/// 100 * matches / total. Throws on empty or mismatched input.
double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds);

/// Answers one question under `cfg`. Exposed for the `ask` command.
QuestionRecord answer_question(const PipelineConfig& cfg, const prompt::McqQuestion& q, const Artifacts& artifacts,
                               const Backends& backends);

/// Retrieval context for one question (empty when RAG is disabled).
retrieval::Context retrieve_context(const PipelineConfig& cfg, std::string_view question, const Artifacts& artifacts,
                                    const Backends& backends);

/// Answers every question (in parallel when cfg.workers > 1) and aggregates
/// accuracy. Every question must carry a gold answer.
EvalReport run_pipeline(const PipelineConfig& cfg, const std::vector<prompt::McqQuestion>& questions,
                        const Artifacts& artifacts, const Backends& backends);

}  // namespace telerag::eval
