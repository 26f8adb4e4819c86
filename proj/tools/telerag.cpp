// Command-line front end for the retrieval-augmented MCQ engine.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "telerag/abbrev.hpp"
#include "telerag/corpus.hpp"
#include "telerag/eval.hpp"
#include "telerag/prompt.hpp"
#include "telerag/retrieval.hpp"
#include "telerag/trainprep.hpp"

namespace fs = std::filesystem;
using namespace telerag;

namespace {

void write_text(const fs::path& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + path.string());
    out << content;
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

std::vector<fs::path> to_paths(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }

struct ChunkingOptions {
    corpus::ChunkingConfig cfg;
    std::vector<std::string> front_matter;

    void attach(CLI::App* cmd) {
        cmd->add_option("--chunk-size", cfg.chunk_size, "Characters per chunk")->capture_default_str();
        cmd->add_option("--overlap", cfg.chunk_overlap, "Characters shared by consecutive chunks")
            ->capture_default_str();
        cmd->add_option("--heading-pattern", cfg.heading_pattern, "Regex matched against whole lines");
        cmd->add_option("--front-matter", front_matter, "Section titles to skip (replaces the default list)");
    }
    corpus::ChunkingConfig get() const {
        auto c = cfg;
        if (!front_matter.empty()) c.front_matter_headings = front_matter;
        c.validate();
        return c;
    }
};

/// Pipeline flags layered over an optional config file.
struct PipelineOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> shuffle_k;
    std::optional<std::size_t> per_retriever_k;
    std::optional<std::size_t> workers;
    bool no_rag = false;
    bool no_options = false;

    void attach(CLI::App* cmd) {
        cmd->add_option("--config", config_path, "Pipeline configuration (JSON)");
        cmd->add_option("--seed", seed, "Global random seed");
        cmd->add_option("--shuffle-k", shuffle_k, "Prompts per question for the shuffle vote (0 = off)");
        cmd->add_option("--per-retriever-k", per_retriever_k, "Chunks taken from each retriever");
        cmd->add_option("--workers", workers, "Questions answered in parallel");
        cmd->add_flag("--no-rag", no_rag, "Disable retrieval");
        cmd->add_flag("--no-options", no_options, "Free-answer prompts with similarity extraction");
    }

    eval::PipelineConfig get() const {
        eval::PipelineConfig cfg = config_path.empty() ? eval::PipelineConfig{} : eval::PipelineConfig::load(config_path);
        if (seed) cfg.seed = *seed;
        if (shuffle_k) cfg.shuffle_k = *shuffle_k;
        if (per_retriever_k) cfg.per_retriever_k = *per_retriever_k;
        if (workers) cfg.workers = *workers;
        if (no_rag) cfg.rag_enabled = false;
        if (no_options) {
            cfg.include_options = false;
            cfg.shuffle_k = 0;
        }
        cfg.validate();
        return cfg;
    }
};

struct LoadedArtifacts {
    std::optional<retrieval::IndexBundle> index;
    std::optional<abbrev::AbbrevDict> dict;

    eval::Artifacts view() const { return {index ? &*index : nullptr, dict ? &*dict : nullptr}; }
};

LoadedArtifacts load_artifacts(const eval::PipelineConfig& cfg, const std::string& index_dir,
                               const std::string& abbrev_path) {
    LoadedArtifacts a;
    if (cfg.rag_enabled) {
        if (index_dir.empty()) throw Error("usage", "--index is required unless --no-rag is given");
        a.index = retrieval::IndexBundle::load(index_dir);
    }
    if (!abbrev_path.empty()) a.dict = abbrev::AbbrevDict::load(abbrev_path);
    return a;
}

const prompt::McqQuestion& find_question(const std::vector<prompt::McqQuestion>& qs, const std::string& id) {
    for (const auto& q : qs) {
        if (q.question_id == id) return q;
    }
    throw Error("dataset", "no question with id '" + id + "'");
}

nlohmann::json scored_json(const std::vector<retrieval::ScoredChunk>& hits) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& h : hits) j.push_back({{"chunk_id", h.chunk_id}, {"ordinal", h.ordinal}, {"score", h.score}});
    return j;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Retrieval-augmented multiple-choice QA over standards corpora"};
    app.require_subcommand(1);

    // ingest
    auto* ingest = app.add_subcommand("ingest", "Split documents into heading-prefixed chunks");
    std::vector<std::string> ingest_files;
    std::string ingest_out;
    ChunkingOptions ingest_chunking;
    ingest->add_option("files", ingest_files, "Plain-text UTF-8 documents")->required();
    ingest->add_option("--out", ingest_out, "Output directory")->required();
    ingest_chunking.attach(ingest);

    // build-abbrev
    auto* build_abbrev = app.add_subcommand("build-abbrev", "Mine abbreviations from definitions sections");
    std::vector<std::string> abbrev_files;
    std::string abbrev_out;
    ChunkingOptions abbrev_chunking;
    build_abbrev->add_option("files", abbrev_files, "Plain-text UTF-8 documents")->required();
    build_abbrev->add_option("--out", abbrev_out, "Output directory")->required();
    abbrev_chunking.attach(build_abbrev);

    // hit-rate
    auto* hit = app.add_subcommand("hit-rate", "Dictionary coverage of abbreviations found in questions");
    std::string hit_dict, hit_dataset;
    hit->add_option("--dict", hit_dict, "abbrev.json")->required();
    hit->add_option("--dataset", hit_dataset, "Question set (JSON)")->required();

    // build-index
    auto* build_index = app.add_subcommand("build-index", "Embed chunks and compute BM25 statistics");
    std::string index_chunks, index_out;
    PipelineOptions index_opts;
    build_index->add_option("--chunks", index_chunks, "chunks.jsonl from ingest")->required();
    build_index->add_option("--out", index_out, "Index directory")->required();
    index_opts.attach(build_index);

    // query
    auto* query = app.add_subcommand("query", "Inspect retrieval for a question");
    std::string query_index, query_text;
    PipelineOptions query_opts;
    query->add_option("--index", query_index, "Index directory")->required();
    query->add_option("--question", query_text, "Question text")->required();
    query_opts.attach(query);

    // render-prompt
    auto* render = app.add_subcommand("render-prompt", "Print the prompt for one question");
    std::string render_dataset, render_id, render_style = "phi2", render_index, render_abbrev;
    std::vector<std::size_t> render_order;
    PipelineOptions render_opts;
    render->add_option("--dataset", render_dataset, "Question set (JSON)")->required();
    render->add_option("--id", render_id, "Question id")->required();
    render->add_option("--style", render_style, "phi2 or falcon")->check(CLI::IsMember({"phi2", "falcon"}));
    render->add_option("--order", render_order, "Slot order as canonical 0-based indices")->delimiter(',');
    render->add_option("--index", render_index, "Index directory");
    render->add_option("--abbrev", render_abbrev, "abbrev.json");
    render_opts.attach(render);

    // ask
    auto* ask = app.add_subcommand("ask", "Answer a single question");
    std::string ask_dataset, ask_id, ask_question, ask_index, ask_abbrev;
    std::vector<std::string> ask_options;
    PipelineOptions ask_opts;
    ask->add_option("--dataset", ask_dataset, "Question set (JSON)");
    ask->add_option("--id", ask_id, "Question id within --dataset");
    ask->add_option("--question", ask_question, "Question text");
    ask->add_option("--option", ask_options, "Option text (repeat, in order)");
    ask->add_option("--index", ask_index, "Index directory");
    ask->add_option("--abbrev", ask_abbrev, "abbrev.json");
    ask_opts.attach(ask);

    // evaluate
    auto* evaluate = app.add_subcommand("evaluate", "Accuracy of a pipeline variant over a question set");
    std::string eval_dataset, eval_index, eval_abbrev, eval_out;
    PipelineOptions eval_opts;
    evaluate->add_option("--dataset", eval_dataset, "Question set (JSON)")->required();
    evaluate->add_option("--index", eval_index, "Index directory");
    evaluate->add_option("--abbrev", eval_abbrev, "abbrev.json");
    evaluate->add_option("--out", eval_out, "Output directory for report.json")->required();
    eval_opts.attach(evaluate);

    // prep-train
    auto* prep = app.add_subcommand("prep-train", "Emit fine-tuning records with per-epoch option shuffles");
    std::string prep_dataset, prep_index, prep_abbrev, prep_out;
    std::uint64_t prep_epochs = 1;
    bool prep_quantized = false;
    PipelineOptions prep_opts;
    prep->add_option("--dataset", prep_dataset, "Training question set (JSON)")->required();
    prep->add_option("--epochs", prep_epochs, "Number of epochs")->capture_default_str();
    prep->add_option("--index", prep_index, "Index directory (adds retrieved contexts)");
    prep->add_option("--abbrev", prep_abbrev, "abbrev.json");
    prep->add_option("--out", prep_out, "Output directory")->required();
    prep->add_flag("--quantized", prep_quantized, "Record the adapter setup as quantized");
    prep_opts.attach(prep);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e);
        std::cerr << nlohmann::json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << '\n';
        return 2;
    }

    try {
        if (*ingest) {
            const auto cfg = ingest_chunking.get();
            const auto corpus = corpus::build_corpus(to_paths(ingest_files), cfg);
            fs::create_directories(ingest_out);
            corpus::write_chunks_jsonl(fs::path(ingest_out) / "chunks.jsonl", corpus.chunks);
            write_json(fs::path(ingest_out) / "manifest.json", corpus.manifest.to_json());
            std::cout << corpus.chunks.size() << " chunks from " << corpus.documents.size() << " documents\n";
        } else if (*build_abbrev) {
            const auto cfg = abbrev_chunking.get();
            const auto corpus = corpus::build_corpus(to_paths(abbrev_files), cfg);
            std::vector<std::vector<abbrev::AbbrevEntry>> lists;
            for (const auto& d : corpus.documents) lists.push_back(abbrev::extract_abbreviations(d));
            const auto dict = abbrev::merge_dictionaries(lists);
            fs::create_directories(abbrev_out);
            dict.save(fs::path(abbrev_out) / "abbrev.json", fs::path(abbrev_out) / "abbrev_conflicts.jsonl");
            std::cout << dict.size() << " abbreviations, " << dict.conflicts.size() << " conflicts\n";
        } else if (*hit) {
            const auto dict = abbrev::AbbrevDict::load(hit_dict);
            std::vector<std::string> questions;
            for (const auto& q : eval::load_dataset(hit_dataset)) questions.push_back(q.text);
            std::cout << nlohmann::json{{"hit_rate", abbrev::hit_rate(questions, dict)},
                                        {"questions", questions.size()}}
                             .dump()
                      << '\n';
        } else if (*build_index) {
            const auto cfg = index_opts.get();
            const auto backends = eval::Backends::from_config(cfg);
            retrieval::IndexBundle bundle;
            bundle.chunks = corpus::read_chunks_jsonl(index_chunks);
            for (const auto& b : backends.retrieval) {
                bundle.dense.push_back(retrieval::embed_chunks(bundle.chunks, *b, cfg.embed_batch_size));
            }
            bundle.bm25 = retrieval::bm25_build(bundle.chunks, cfg.bm25);
            bundle.save(index_out);
            std::cout << bundle.chunks.size() << " chunks indexed with " << bundle.dense.size()
                      << " embedding models and BM25\n";
        } else if (*query) {
            const auto cfg = query_opts.get();
            const auto backends = eval::Backends::from_config(cfg);
            const auto bundle = retrieval::IndexBundle::load(query_index);
            std::vector<std::string> ids;
            for (const auto& c : bundle.chunks) ids.push_back(c.chunk_id);
            nlohmann::json per = nlohmann::json::object();
            for (std::size_t i = 0; i < bundle.dense.size() && i < backends.retrieval.size(); ++i) {
                const auto qv = backends.retrieval[i]->embed(std::vector<std::string>{query_text});
                per[bundle.dense[i].model_id] = scored_json(
                    retrieval::knn_query(qv.front(), bundle.dense[i], cfg.per_retriever_k, ids));
            }
            per["bm25"] = scored_json(retrieval::bm25_query(query_text, bundle.bm25, cfg.per_retriever_k, ids));
            auto artifacts_cfg = cfg;
            artifacts_cfg.rag_enabled = true;
            const auto ctx = eval::retrieve_context(artifacts_cfg, query_text, {&bundle, nullptr}, backends);
            nlohmann::json context = nlohmann::json::array();
            for (const auto& e : ctx.entries) {
                context.push_back({{"chunk_id", e.chunk_id}, {"retriever", e.retriever_id}, {"score", e.score},
                                   {"text", e.text}});
            }
            std::cout << nlohmann::json{{"retrievers", per}, {"context", context}}.dump(2) << '\n';
        } else if (*render) {
            auto cfg = render_opts.get();
            if (render_index.empty()) cfg.rag_enabled = false;
            const auto artifacts = load_artifacts(cfg, render_index, render_abbrev);
            const auto questions = eval::load_dataset(render_dataset);
            const auto& q = find_question(questions, render_id);
            const auto dets = abbrev::detect_abbreviations(q.text, artifacts.dict ? *artifacts.dict : abbrev::AbbrevDict{});
            const auto ctx = cfg.rag_enabled ? eval::retrieve_context(cfg, q.text, artifacts.view(),
                                                                      eval::Backends::from_config(cfg))
                                             : retrieval::Context{};
            const auto p = render_style == "phi2" ? prompt::build_phi2_prompt(q, render_order, dets, ctx)
                                                  : prompt::build_falcon_prompt(q, dets, ctx);
            std::cout << p.rendered << '\n';
        } else if (*ask) {
            const auto cfg = ask_opts.get();
            const auto artifacts = load_artifacts(cfg, ask_index, ask_abbrev);
            prompt::McqQuestion q;
            if (!ask_dataset.empty()) {
                q = find_question(eval::load_dataset(ask_dataset), ask_id);
            } else {
                if (ask_question.empty()) throw Error("usage", "give --dataset/--id or --question/--option");
                q.question_id = "ask";
                q.text = ask_question;
                q.options = ask_options;
            }
            const auto rec = eval::answer_question(cfg, q, artifacts.view(), eval::Backends::from_config(cfg));
            auto j = rec.to_json();
            j["answer"] = "option " + std::to_string(rec.prediction + 1) + ": " + q.options[rec.prediction];
            std::cout << j.dump(2) << '\n';
        } else if (*evaluate) {
            const auto cfg = eval_opts.get();
            const auto artifacts = load_artifacts(cfg, eval_index, eval_abbrev);
            const auto questions = eval::load_dataset(eval_dataset);
            fs::create_directories(eval_out);
            try {
                const auto report =
                    eval::run_pipeline(cfg, questions, artifacts.view(), eval::Backends::from_config(cfg));
                write_json(fs::path(eval_out) / "report.json", report.to_json());
                std::cout << report.table();
            } catch (const eval::PipelineAborted& e) {
                write_json(fs::path(eval_out) / "report.partial.json", e.partial.to_json());
                throw;
            }
        } else if (*prep) {
            auto cfg = prep_opts.get();
            if (prep_index.empty()) cfg.rag_enabled = false;
            const auto artifacts = load_artifacts(cfg, prep_index, prep_abbrev);
            const auto questions = eval::load_dataset(prep_dataset);
            std::vector<retrieval::Context> contexts;
            std::vector<std::vector<abbrev::Detection>> dets;
            if (cfg.rag_enabled || artifacts.dict) {
                const auto backends = eval::Backends::from_config(cfg);
                for (const auto& q : questions) {
                    contexts.push_back(eval::retrieve_context(cfg, q.text, artifacts.view(), backends));
                    dets.push_back(abbrev::detect_abbreviations(q.text, artifacts.dict ? *artifacts.dict
                                                                                       : abbrev::AbbrevDict{}));
                }
            }
            const auto records = trainprep::emit_training_set(questions, contexts, dets, prep_epochs, cfg.seed);
            trainprep::TrainingConfig tc;
            tc.quantized = prep_quantized;
            fs::create_directories(prep_out);
            trainprep::write_training_set(fs::path(prep_out) / "train.jsonl", fs::path(prep_out) / "train_manifest.json",
                                          records, tc, prep_epochs, cfg.seed);
            std::cout << records.size() << " training records\n";
        }
    } catch (const Error& e) {
        std::cerr << nlohmann::json{{"error", {{"kind", e.kind()}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << nlohmann::json{{"error", {{"kind", "internal"}, {"message", e.what()}}}}.dump() << '\n';
        return 1;
    }
    return 0;
}
