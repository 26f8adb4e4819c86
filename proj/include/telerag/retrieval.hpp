#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "telerag/backend.hpp"
#include "telerag/corpus.hpp"

namespace telerag::retrieval {

/// Chunk embeddings, row i belonging to chunk i. Stored row-major.
struct EmbeddingMatrix {
    std::string model_id;
    std::size_t dim = 0;
    std::vector<float> data;

    std::size_t rows() const { return dim == 0 ? 0 : data.size() / dim; }
    std::span<const float> row(std::size_t i) const { return {data.data() + i * dim, dim}; }
    void append(std::span<const float> v);
};

struct ScoredChunk {
    std::size_t ordinal = 0;  // position in the chunk list
    std::string chunk_id;
    double score = 0.0;
    std::string retriever_id;

    bool operator==(const ScoredChunk&) const = default;
};

/// Requests chunk texts from `backend` in consecutive batches of
/// `batch_size`. Throws with the failing batch index on backend errors.
EmbeddingMatrix embed_chunks(const std::vector<corpus::Chunk>& chunks, const backend::EmbeddingBackend& backend,
                             std::size_t batch_size = 64);

/// Exact top-k by dot product; ties go to the lower ordinal. `chunk_ids`
/// may be empty, in which case ids are left blank.
std::vector<ScoredChunk> knn_query(std::span<const float> query, const EmbeddingMatrix& matrix, std::size_t k,
                                   std::span<const std::string> chunk_ids = {});

/// Lowercased runs of ASCII letters and digits. Bytes >= 0x80 stay inside
/// tokens so multi-byte words are not split.
std::vector<std::string> bm25_tokenize(std::string_view s);

struct Bm25Params {
    double k1 = 1.2;
    double b = 0.75;
};

struct Bm25Index {
    Bm25Params params;
    std::map<std::string, std::size_t> doc_freq;
    std::vector<std::unordered_map<std::string, std::size_t>> term_freq;
    std::vector<std::size_t> lengths;
    double avg_length = 0.0;

    std::size_t size() const { return lengths.size(); }
    /// ln(1 + (N - df + 0.5) / (df + 0.5)); never negative.
    double idf(std::string_view term) const;
    /// Sum over query tokens (repeats included) of idf * saturated tf.
    double score(std::span<const std::string> query_terms, std::size_t ordinal) const;

    nlohmann::json to_json() const;
    static Bm25Index from_json(const nlohmann::json& j);
};

Bm25Index bm25_build(const std::vector<corpus::Chunk>& chunks, Bm25Params params = {});
std::vector<ScoredChunk> bm25_query(std::string_view question, const Bm25Index& index, std::size_t k,
                                    std::span<const std::string> chunk_ids = {});

struct DenseRetriever {
    const EmbeddingMatrix* matrix = nullptr;
    std::shared_ptr<const backend::EmbeddingBackend> backend;
};

struct ContextEntry {
    std::string chunk_id;
    std::string text;
    std::string retriever_id;
    double score = 0.0;
};

struct Context {
    std::vector<ContextEntry> entries;

    bool empty() const { return entries.empty(); }
    std::size_t size() const { return entries.size(); }
};

inline constexpr std::string_view kBm25RetrieverId = "bm25";

/// Top `per_retriever_k` from each dense retriever (declaration order), then
/// from BM25; duplicate chunk ids are dropped, keeping the first occurrence.
Context hybrid_retrieve(std::string_view question, const std::vector<corpus::Chunk>& chunks,
                        const std::vector<DenseRetriever>& dense, const Bm25Index* bm25,
                        std::size_t per_retriever_k = 2);

/// On-disk index: manifest.json, chunks.jsonl, dense_<i>.f32 (little-endian
/// float32, row-major) per embedding model, bm25.json.
struct IndexBundle {
    std::vector<corpus::Chunk> chunks;
    std::vector<EmbeddingMatrix> dense;
    Bm25Index bm25;

    void save(const std::filesystem::path& dir) const;
    static IndexBundle load(const std::filesystem::path& dir);
};

}  // namespace telerag::retrieval
