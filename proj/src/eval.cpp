#include "telerag/eval.hpp"

#include <algorithm>
#include <atomic>
#include <fstream>
#include <iomanip>
#include <mutex>
#include <regex>
#include <sstream>
#include <thread>

#include "telerag/hash.hpp"
#include "telerag/shuffle.hpp"
#include "telerag/text.hpp"

namespace telerag::eval {

// ---------------------------------------------------------------------------
// Dataset

namespace {

const std::regex& option_key_re() {
    static const std::regex re(R"(option (\d+))");
    return re;
}

const std::regex& answer_re() {
    static const std::regex re(R"(\s*option\s+(\d+)\s*(:[\s\S]*)?)", std::regex::icase);
    return re;
}

}  // namespace

std::vector<prompt::McqQuestion> parse_dataset(const nlohmann::ordered_json& j) {
    if (!j.is_object()) throw Error("dataset", "dataset must be a JSON object of questions");
    std::vector<prompt::McqQuestion> out;
    for (const auto& [id, entry] : j.items()) {
        if (!entry.is_object()) throw Error("dataset", "question '" + id + "' is not an object");
        prompt::McqQuestion q;
        q.question_id = id;
        if (!entry.contains("question") || !entry["question"].is_string()) {
            throw Error("dataset", "question '" + id + "' has no question text");
        }
        q.text = entry["question"].get<std::string>();
        q.category = entry.value("category", std::string());

        std::map<std::size_t, std::string> labelled;
        for (const auto& [key, value] : entry.items()) {
            std::smatch m;
            if (!std::regex_match(key, m, option_key_re())) continue;
            if (!value.is_string()) throw Error("dataset", "question '" + id + "': " + key + " is not a string");
            labelled[std::stoul(m[1].str())] = value.get<std::string>();
        }
        std::size_t expected = 1;
        for (const auto& [label, text] : labelled) {
            if (label != expected) {
                throw Error("dataset", "question '" + id + "': option labels are not contiguous (missing option " +
                                           std::to_string(expected) + ")");
            }
            q.options.push_back(text);
            ++expected;
        }

        if (entry.contains("answer") && !entry["answer"].is_null()) {
            const auto answer = entry["answer"].is_string() ? entry["answer"].get<std::string>() : std::string();
            std::smatch m;
            if (!std::regex_match(answer, m, answer_re())) {
                throw Error("dataset", "question '" + id + "': unparsable answer label '" + answer + "'");
            }
            const auto label = std::stoul(m[1].str());
            if (label < 1 || label > q.options.size()) {
                throw Error("dataset", "question '" + id + "': answer label " + std::to_string(label) + " out of range");
            }
            q.gold = label - 1;
        }
        q.validate();
        out.push_back(std::move(q));
    }
    return out;
}

std::vector<prompt::McqQuestion> load_dataset(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + path.string());
    nlohmann::ordered_json raw;
    try {
        raw = nlohmann::ordered_json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse", path.string() + ": " + e.what());
    }
    return parse_dataset(raw);
}

nlohmann::ordered_json dataset_to_json(const std::vector<prompt::McqQuestion>& questions) {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& q : questions) {
        nlohmann::ordered_json e;
        e["question"] = q.text;
        for (std::size_t i = 0; i < q.options.size(); ++i) e["option " + std::to_string(i + 1)] = q.options[i];
        if (q.gold) e["answer"] = "option " + std::to_string(*q.gold + 1) + ": " + q.options[*q.gold];
        e["category"] = q.category;
        j[q.question_id] = e;
    }
    return j;
}

// ---------------------------------------------------------------------------
// Configuration

PipelineConfig::PipelineConfig() {
    generation.kind = "mock";
    generation.model_id = "mock";
    generation.role = backend::Role::generation;
    answer_embedder.kind = "mock-embed";
    answer_embedder.model_id = "mock-bow";
    answer_embedder.role = backend::Role::answer_embedding;
    backend::BackendConfig dense;
    dense.kind = "mock-embed";
    dense.model_id = "mock-bow";
    dense.role = backend::Role::retrieval_embedding;
    retrieval_embedders.push_back(dense);
}

void PipelineConfig::validate() const {
    if (shuffle_k > 0 && !include_options) {
        throw Error("config", "shuffle_k > 0 requires include_options = true");
    }
    if (per_retriever_k == 0) throw Error("config", "per_retriever_k must be positive");
    if (embed_batch_size == 0) throw Error("config", "embed_batch_size must be positive");
    if (max_new_tokens < 1) throw Error("config", "max_new_tokens must be at least 1");
    if (workers == 0) throw Error("config", "workers must be positive");
}

nlohmann::json PipelineConfig::to_json() const {
    nlohmann::json retr = nlohmann::json::array();
    for (const auto& r : retrieval_embedders) retr.push_back(r.to_json());
    return {{"rag_enabled", rag_enabled},
            {"include_options", include_options},
            {"shuffle_k", shuffle_k},
            {"per_retriever_k", per_retriever_k},
            {"use_bm25", use_bm25},
            {"bm25", {{"k1", bm25.k1}, {"b", bm25.b}}},
            {"embed_batch_size", embed_batch_size},
            {"seed", seed},
            {"max_new_tokens", max_new_tokens},
            {"temperature", temperature},
            {"backends",
             {{"generation", generation.to_json()},
              {"retrieval_embedding", retr},
              {"answer_embedding", answer_embedder.to_json()}}}};
}

std::string PipelineConfig::hash() const { return sha256_hex(to_json().dump()); }

namespace {

void resolve(std::filesystem::path& p, const std::filesystem::path& base) {
    if (!p.empty() && p.is_relative() && !base.empty()) p = base / p;
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const nlohmann::json& j, const std::filesystem::path& base_dir) {
    PipelineConfig c;
    try {
        c.rag_enabled = j.value("rag_enabled", c.rag_enabled);
        c.include_options = j.value("include_options", c.include_options);
        c.shuffle_k = j.value("shuffle_k", c.shuffle_k);
        c.per_retriever_k = j.value("per_retriever_k", c.per_retriever_k);
        c.use_bm25 = j.value("use_bm25", c.use_bm25);
        if (j.contains("bm25")) {
            c.bm25.k1 = j["bm25"].value("k1", c.bm25.k1);
            c.bm25.b = j["bm25"].value("b", c.bm25.b);
        }
        c.embed_batch_size = j.value("embed_batch_size", c.embed_batch_size);
        c.seed = j.value("seed", c.seed);
        c.max_new_tokens = j.value("max_new_tokens", c.max_new_tokens);
        c.temperature = j.value("temperature", c.temperature);
        c.workers = j.value("workers", c.workers);
        if (j.contains("backends")) {
            const auto& b = j["backends"];
            if (b.contains("generation")) {
                c.generation = backend::BackendConfig::from_json(b["generation"], backend::Role::generation);
            }
            if (b.contains("retrieval_embedding")) {
                c.retrieval_embedders.clear();
                for (const auto& r : b["retrieval_embedding"]) {
                    c.retrieval_embedders.push_back(
                        backend::BackendConfig::from_json(r, backend::Role::retrieval_embedding));
                }
            }
            if (b.contains("answer_embedding")) {
                c.answer_embedder = backend::BackendConfig::from_json(b["answer_embedding"],
                                                                      backend::Role::answer_embedding);
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error("config", std::string("invalid pipeline configuration: ") + e.what());
    }
    resolve(c.generation.script, base_dir);
    resolve(c.generation.cache_dir, base_dir);
    resolve(c.answer_embedder.cache_dir, base_dir);
    for (auto& r : c.retrieval_embedders) resolve(r.cache_dir, base_dir);
    c.validate();
    return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error("config", path.string() + ": " + e.what());
    }
    return from_json(j, path.parent_path());
}

Backends Backends::from_config(const PipelineConfig& cfg) {
    Backends b;
    b.generation = backend::make_completion_backend(cfg.generation);
    for (const auto& r : cfg.retrieval_embedders) b.retrieval.push_back(backend::make_embedding_backend(r));
    b.answer = backend::make_embedding_backend(cfg.answer_embedder);
    return b;
}

// ---------------------------------------------------------------------------
// Reports

nlohmann::json QuestionRecord::to_json() const {
    return {{"question_id", question_id},
            {"category", category},
            {"gold", gold ? nlohmann::json(*gold) : nlohmann::json(nullptr)},
            {"prediction", prediction},
            {"correct", correct()},
            {"method", answer::to_string(method)},
            {"fallback", fallback},
            {"diagnostics", diagnostics}};
}

nlohmann::json EvalReport::to_json() const {
    nlohmann::json cats = nlohmann::json::object();
    for (const auto& [name, s] : per_category) {
        cats[name] = {{"total", s.total},
                      {"correct", s.correct},
                      {"accuracy", s.total ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.total) : 0.0}};
    }
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : records) recs.push_back(r.to_json());
    return {{"total", total},        {"correct", correct}, {"accuracy", accuracy}, {"per_category", cats},
            {"config_hash", config_hash}, {"partial", partial},  {"records", recs}};
}

std::string EvalReport::table() const {
    std::ostringstream os;
    os << std::left << std::setw(32) << "category" << std::right << std::setw(8) << "total" << std::setw(9)
       << "correct" << std::setw(11) << "accuracy" << '\n';
    os << std::fixed << std::setprecision(2);
    for (const auto& [name, s] : per_category) {
        const double acc = s.total ? 100.0 * static_cast<double>(s.correct) / static_cast<double>(s.total) : 0.0;
        os << std::left << std::setw(32) << (name.empty() ? "(none)" : name) << std::right << std::setw(8) << s.total
           << std::setw(9) << s.correct << std::setw(10) << acc << "%\n";
    }
    os << std::left << std::setw(32) << "overall" << std::right << std::setw(8) << total << std::setw(9) << correct
       << std::setw(10) << accuracy << "%\n";
    return os.str();
}

double accuracy(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& golds) {
    if (predictions.empty()) throw Error("eval", "accuracy of an empty prediction set");
    if (predictions.size() != golds.size()) throw Error("eval", "predictions and golds differ in length");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) hits += predictions[i] == golds[i] ? 1 : 0;
    return 100.0 * static_cast<double>(hits) / static_cast<double>(predictions.size());
}

// ---------------------------------------------------------------------------
// Pipeline

retrieval::Context retrieve_context(const PipelineConfig& cfg, std::string_view question, const Artifacts& artifacts,
                                    const Backends& backends) {
    if (!cfg.rag_enabled) return {};
    if (!artifacts.index) throw Error("config", "RAG is enabled but no index was provided");
    const auto& index = *artifacts.index;
    if (backends.retrieval.size() != index.dense.size()) {
        throw Error("config", "index has " + std::to_string(index.dense.size()) + " dense matrices but " +
                                  std::to_string(backends.retrieval.size()) + " retrieval embedders are configured");
    }
    std::vector<retrieval::DenseRetriever> dense;
    for (std::size_t i = 0; i < index.dense.size(); ++i) {
        if (backends.retrieval[i]->id() != index.dense[i].model_id) {
            throw Error("config", "retrieval embedder '" + backends.retrieval[i]->id() + "' does not match index model '" +
                                      index.dense[i].model_id + "'");
        }
        dense.push_back({&index.dense[i], backends.retrieval[i]});
    }
    return retrieval::hybrid_retrieve(question, index.chunks, dense, cfg.use_bm25 ? &index.bm25 : nullptr,
                                      cfg.per_retriever_k);
}

namespace {

nlohmann::json context_json(const retrieval::Context& ctx) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& e : ctx.entries) j.push_back({{"chunk_id", e.chunk_id}, {"retriever", e.retriever_id}, {"score", e.score}});
    return j;
}

}  // namespace

QuestionRecord answer_question(const PipelineConfig& cfg, const prompt::McqQuestion& q, const Artifacts& artifacts,
                               const Backends& backends) {
    q.validate();
    if (!backends.generation) throw Error("config", "no generation backend configured");
    QuestionRecord rec;
    rec.question_id = q.question_id;
    rec.category = q.category;
    rec.gold = q.gold;

    static const abbrev::AbbrevDict kEmptyDict;
    const auto detections = abbrev::detect_abbreviations(q.text, artifacts.dict ? *artifacts.dict : kEmptyDict);
    const auto context = retrieve_context(cfg, q.text, artifacts, backends);

    nlohmann::json diag;
    nlohmann::json abbrevs = nlohmann::json::array();
    for (const auto& d : detections) {
        abbrevs.push_back({{"token", d.token}, {"expanded", d.expansion.has_value()}});
    }
    diag["abbreviations"] = abbrevs;
    diag["context"] = context_json(context);

    std::optional<std::size_t> slot;
    if (cfg.include_options && cfg.shuffle_k > 0) {
        shuffle::ShuffleContext sc{backends.generation.get(), detections, context, cfg.max_new_tokens,
                                   cfg.temperature};
        try {
            auto outcome = shuffle::answer_with_shuffle(q, cfg.shuffle_k, cfg.seed, sc);
            slot = outcome.tally.winner;
            diag["shuffle"] = outcome.diagnostics.to_json();
            diag["tally"] = outcome.tally.to_json();
        } catch (const shuffle::NoParsableAnswers& e) {
            diag["shuffle"] = e.diagnostics.to_json();
        }
        rec.method = answer::Method::label_parse;
    } else if (cfg.include_options) {
        const auto p = prompt::build_phi2_prompt(q, {}, detections, context);
        backend::CompletionRequest req{{p.rendered}, cfg.max_new_tokens, cfg.temperature, cfg.seed, {}};
        const auto completion = backends.generation->complete(req).front();
        slot = answer::parse_option_label(completion, q.options.size());
        diag["completion"] = completion;
        rec.method = answer::Method::label_parse;
    } else {
        if (!backends.answer) throw Error("config", "no answer-embedding backend configured");
        const auto p = prompt::build_falcon_prompt(q, detections, context);
        backend::CompletionRequest req{{p.rendered}, cfg.max_new_tokens, cfg.temperature, cfg.seed, {}};
        const auto completion = backends.generation->complete(req).front();
        diag["completion"] = completion;
        // Blank generations carry nothing to compare against the options.
        if (!text::trim(completion).empty()) {
            slot = answer::select_by_similarity(completion, q.options, *backends.answer);
        }
        rec.method = answer::Method::similarity;
    }

    if (!slot) {
        slot = answer::fallback_random(q.options.size(), cfg.seed, q.question_id);
        rec.method = answer::Method::random_fallback;
        rec.fallback = true;
    }
    rec.prediction = *slot;
    rec.diagnostics = std::move(diag);
    return rec;
}

namespace {

EvalReport aggregate(const std::vector<std::optional<QuestionRecord>>& slots, const std::string& config_hash,
                     bool partial) {
    EvalReport report;
    report.config_hash = config_hash;
    report.partial = partial;
    for (const auto& r : slots) {
        if (!r) continue;
        ++report.total;
        auto& cat = report.per_category[r->category];
        ++cat.total;
        if (r->correct()) {
            ++report.correct;
            ++cat.correct;
        }
        report.records.push_back(*r);
    }
    report.accuracy =
        report.total ? 100.0 * static_cast<double>(report.correct) / static_cast<double>(report.total) : 0.0;
    return report;
}

}  // namespace

EvalReport run_pipeline(const PipelineConfig& cfg, const std::vector<prompt::McqQuestion>& questions,
                        const Artifacts& artifacts, const Backends& backends) {
    cfg.validate();
    for (const auto& q : questions) {
        if (!q.gold) throw Error("dataset", "question '" + q.question_id + "' has no gold answer");
    }
    const auto config_hash = cfg.hash();

    std::vector<std::optional<QuestionRecord>> slots(questions.size());
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::mutex error_mutex;
    std::optional<Error> first_error;

    auto work = [&] {
        while (!stop.load()) {
            const std::size_t i = next.fetch_add(1);
            if (i >= questions.size()) return;
            try {
                slots[i] = answer_question(cfg, questions[i], artifacts, backends);
            } catch (const Error& e) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = e;
                stop = true;
            } catch (const std::exception& e) {
                std::lock_guard lock(error_mutex);
                if (!first_error) first_error = Error("internal", e.what());
                stop = true;
            }
        }
    };

    const std::size_t n_workers = std::min<std::size_t>(cfg.workers, std::max<std::size_t>(questions.size(), 1));
    if (n_workers <= 1) {
        work();
    } else {
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(work);
    }

    if (first_error) throw PipelineAborted(*first_error, aggregate(slots, config_hash, true));
    return aggregate(slots, config_hash, false);
}

}  // namespace telerag::eval
