#include "telerag/retrieval.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "telerag/error.hpp"

namespace telerag::retrieval {

void EmbeddingMatrix::append(std::span<const float> v) {
    if (dim == 0) dim = v.size();
    if (v.size() != dim) {
        throw Error("retrieval", model_id + ": row of dimension " + std::to_string(v.size()) + ", expected " +
                                     std::to_string(dim));
    }
    data.insert(data.end(), v.begin(), v.end());
}

EmbeddingMatrix embed_chunks(const std::vector<corpus::Chunk>& chunks, const backend::EmbeddingBackend& backend,
                             std::size_t batch_size) {
    if (batch_size == 0) throw Error("config", "batch_size must be positive");
    EmbeddingMatrix m;
    m.model_id = backend.id();
    for (std::size_t start = 0, batch = 0; start < chunks.size(); start += batch_size, ++batch) {
        const std::size_t stop = std::min(start + batch_size, chunks.size());
        std::vector<std::string> texts;
        texts.reserve(stop - start);
        for (std::size_t i = start; i < stop; ++i) texts.push_back(chunks[i].text);
        std::vector<backend::Vector> vecs;
        try {
            vecs = backend.embed(texts);
            for (const auto& v : vecs) m.append(v);
        } catch (const Error& e) {
            throw Error("retrieval", m.model_id + ": embedding batch " + std::to_string(batch) + " failed: " + e.what());
        }
    }
    return m;
}

namespace {

/// Orders by score descending, then ordinal ascending.
bool ranks_before(const ScoredChunk& a, const ScoredChunk& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.ordinal < b.ordinal;
}

std::vector<ScoredChunk> top_k(std::vector<ScoredChunk> all, std::size_t k) {
    k = std::min(k, all.size());
    std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), ranks_before);
    all.resize(k);
    return all;
}

}  // namespace

std::vector<ScoredChunk> knn_query(std::span<const float> query, const EmbeddingMatrix& matrix, std::size_t k,
                                   std::span<const std::string> chunk_ids) {
    if (matrix.rows() > 0 && query.size() != matrix.dim) {
        throw Error("retrieval", "query dimension " + std::to_string(query.size()) + " does not match index dimension " +
                                     std::to_string(matrix.dim));
    }
    std::vector<ScoredChunk> all(matrix.rows());
    for (std::size_t i = 0; i < matrix.rows(); ++i) {
        const auto row = matrix.row(i);
        double dot = 0.0;
        for (std::size_t d = 0; d < row.size(); ++d) dot += static_cast<double>(row[d]) * query[d];
        all[i].ordinal = i;
        all[i].score = dot;
        all[i].retriever_id = matrix.model_id;
        if (i < chunk_ids.size()) all[i].chunk_id = chunk_ids[i];
    }
    return top_k(std::move(all), k);
}

std::vector<std::string> bm25_tokenize(std::string_view s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

double Bm25Index::idf(std::string_view term) const {
    const auto it = doc_freq.find(std::string(term));
    const double df = it == doc_freq.end() ? 0.0 : static_cast<double>(it->second);
    const double n = static_cast<double>(size());
    return std::log(1.0 + (n - df + 0.5) / (df + 0.5));
}

double Bm25Index::score(std::span<const std::string> query_terms, std::size_t ordinal) const {
    const auto& tfs = term_freq.at(ordinal);
    const double norm = avg_length > 0.0 ? static_cast<double>(lengths[ordinal]) / avg_length : 0.0;
    double total = 0.0;
    for (const auto& t : query_terms) {
        const auto it = tfs.find(t);
        if (it == tfs.end()) continue;
        const double tf = static_cast<double>(it->second);
        total += idf(t) * tf * (params.k1 + 1.0) / (tf + params.k1 * (1.0 - params.b + params.b * norm));
    }
    return total;
}

Bm25Index bm25_build(const std::vector<corpus::Chunk>& chunks, Bm25Params params) {
    Bm25Index idx;
    idx.params = params;
    idx.term_freq.reserve(chunks.size());
    std::size_t total = 0;
    for (const auto& c : chunks) {
        std::unordered_map<std::string, std::size_t> tf;
        const auto tokens = bm25_tokenize(c.text);
        for (const auto& t : tokens) ++tf[t];
        for (const auto& [t, _] : tf) ++idx.doc_freq[t];
        idx.lengths.push_back(tokens.size());
        total += tokens.size();
        idx.term_freq.push_back(std::move(tf));
    }
    idx.avg_length = chunks.empty() ? 0.0 : static_cast<double>(total) / static_cast<double>(chunks.size());
    return idx;
}

std::vector<ScoredChunk> bm25_query(std::string_view question, const Bm25Index& index, std::size_t k,
                                    std::span<const std::string> chunk_ids) {
    const auto terms = bm25_tokenize(question);
    std::vector<ScoredChunk> all(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        all[i].ordinal = i;
        all[i].score = index.score(terms, i);
        all[i].retriever_id = std::string(kBm25RetrieverId);
        if (i < chunk_ids.size()) all[i].chunk_id = chunk_ids[i];
    }
    return top_k(std::move(all), k);
}

nlohmann::json Bm25Index::to_json() const {
    nlohmann::json tfs = nlohmann::json::array();
    for (const auto& m : term_freq) {
        // Sorted for stable bytes.
        std::map<std::string, std::size_t> sorted(m.begin(), m.end());
        tfs.push_back(sorted);
    }
    return {{"k1", params.k1},     {"b", params.b},         {"avg_length", avg_length},
            {"lengths", lengths}, {"doc_freq", doc_freq}, {"term_freq", tfs}};
}

Bm25Index Bm25Index::from_json(const nlohmann::json& j) {
    Bm25Index idx;
    idx.params.k1 = j.at("k1").get<double>();
    idx.params.b = j.at("b").get<double>();
    idx.avg_length = j.at("avg_length").get<double>();
    idx.lengths = j.at("lengths").get<std::vector<std::size_t>>();
    idx.doc_freq = j.at("doc_freq").get<std::map<std::string, std::size_t>>();
    for (const auto& m : j.at("term_freq")) {
        idx.term_freq.push_back(m.get<std::unordered_map<std::string, std::size_t>>());
    }
    if (idx.term_freq.size() != idx.lengths.size()) throw Error("parse", "bm25 statistics are inconsistent");
    return idx;
}

Context hybrid_retrieve(std::string_view question, const std::vector<corpus::Chunk>& chunks,
                        const std::vector<DenseRetriever>& dense, const Bm25Index* bm25,
                        std::size_t per_retriever_k) {
    if (question.empty()) throw Error("retrieval", "question must be non-empty");
    std::vector<std::string> ids;
    ids.reserve(chunks.size());
    for (const auto& c : chunks) ids.push_back(c.chunk_id);

    std::vector<ScoredChunk> ranked;
    for (const auto& r : dense) {
        std::vector<ScoredChunk> hits;
        try {
            const std::string q(question);
            const auto qv = r.backend->embed(std::span<const std::string>(&q, 1));
            hits = knn_query(qv.front(), *r.matrix, per_retriever_k, ids);
        } catch (const Error& e) {
            throw Error("retrieval", "retriever '" + r.matrix->model_id + "' failed: " + e.what());
        }
        ranked.insert(ranked.end(), hits.begin(), hits.end());
    }
    if (bm25) {
        auto hits = bm25_query(question, *bm25, per_retriever_k, ids);
        ranked.insert(ranked.end(), hits.begin(), hits.end());
    }

    Context ctx;
    std::unordered_set<std::string> seen;
    for (const auto& h : ranked) {
        if (!seen.insert(h.chunk_id).second) continue;
        ctx.entries.push_back({h.chunk_id, chunks.at(h.ordinal).text, h.retriever_id, h.score});
    }
    return ctx;
}

namespace {

void write_f32_le(const std::filesystem::path& p, const std::vector<float>& data) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + p.string());
    for (float f : data) {
        auto bits = std::bit_cast<std::uint32_t>(f);
        unsigned char b[4] = {static_cast<unsigned char>(bits), static_cast<unsigned char>(bits >> 8),
                              static_cast<unsigned char>(bits >> 16), static_cast<unsigned char>(bits >> 24)};
        out.write(reinterpret_cast<const char*>(b), 4);
    }
}

std::vector<float> read_f32_le(const std::filesystem::path& p, std::size_t count) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + p.string());
    std::vector<float> out(count);
    for (auto& f : out) {
        unsigned char b[4];
        if (!in.read(reinterpret_cast<char*>(b), 4)) throw Error("parse", p.string() + ": truncated embedding file");
        const std::uint32_t bits = b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
        f = std::bit_cast<float>(bits);
    }
    if (in.peek() != std::ifstream::traits_type::eof()) throw Error("parse", p.string() + ": trailing bytes");
    return out;
}

nlohmann::json read_json(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + p.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse", p.string() + ": " + e.what());
    }
}

void write_json(const std::filesystem::path& p, const nlohmann::json& j, int indent) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + p.string());
    out << j.dump(indent) << '\n';
}

}  // namespace

void IndexBundle::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    corpus::write_chunks_jsonl(dir / "chunks.jsonl", chunks);
    nlohmann::json dense_meta = nlohmann::json::array();
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i].rows() != chunks.size()) {
            throw Error("retrieval", dense[i].model_id + ": row count does not match chunk count");
        }
        const std::string file = "dense_" + std::to_string(i) + ".f32";
        write_f32_le(dir / file, dense[i].data);
        dense_meta.push_back({{"model_id", dense[i].model_id}, {"dim", dense[i].dim}, {"file", file}});
    }
    write_json(dir / "bm25.json", bm25.to_json(), -1);
    write_json(dir / "manifest.json",
               {{"chunk_count", chunks.size()},
                {"dense", dense_meta},
                {"bm25", {{"k1", bm25.params.k1}, {"b", bm25.params.b}, {"file", "bm25.json"}}}},
               2);
}

IndexBundle IndexBundle::load(const std::filesystem::path& dir) {
    IndexBundle b;
    const auto manifest = read_json(dir / "manifest.json");
    b.chunks = corpus::read_chunks_jsonl(dir / "chunks.jsonl");
    const auto n = manifest.at("chunk_count").get<std::size_t>();
    if (n != b.chunks.size()) throw Error("parse", "index manifest chunk count does not match chunks.jsonl");
    for (const auto& d : manifest.at("dense")) {
        EmbeddingMatrix m;
        m.model_id = d.at("model_id").get<std::string>();
        m.dim = d.at("dim").get<std::size_t>();
        m.data = read_f32_le(dir / d.at("file").get<std::string>(), n * m.dim);
        b.dense.push_back(std::move(m));
    }
    b.bm25 = Bm25Index::from_json(read_json(dir / manifest.at("bm25").at("file").get<std::string>()));
    if (b.bm25.size() != n) throw Error("parse", "bm25 statistics do not match chunk count");
    return b;
}

}  // namespace telerag::retrieval
