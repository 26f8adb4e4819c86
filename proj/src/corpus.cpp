#include "telerag/corpus.hpp"

#include <cctype>
#include <fstream>
#include <future>
#include <regex>
#include <set>
#include <sstream>

#include "telerag/error.hpp"
#include "telerag/hash.hpp"
#include "telerag/text.hpp"

namespace telerag::corpus {

void ChunkingConfig::validate() const {
    if (chunk_size == 0) throw Error("config", "chunk_size must be positive");
    if (chunk_overlap >= chunk_size) throw Error("config", "chunk_overlap must be smaller than chunk_size");
}

nlohmann::json ChunkingConfig::to_json() const {
    return {{"chunk_size", chunk_size},
            {"chunk_overlap", chunk_overlap},
            {"heading_pattern", heading_pattern},
            {"front_matter_headings", front_matter_headings}};
}

std::string ChunkingConfig::hash() const { return sha256_hex(to_json().dump()); }

std::string heading_title(std::string_view heading) {
    std::size_t i = 0;
    while (i < heading.size() && (std::isdigit(static_cast<unsigned char>(heading[i])) || heading[i] == '.')) ++i;
    if (i == 0) return text::trim(heading);
    return text::trim(heading.substr(i));
}

namespace {

bool is_front_matter_heading(std::string_view heading, const ChunkingConfig& cfg) {
    const auto title = text::to_lower_ascii(heading_title(heading));
    for (const auto& skip : cfg.front_matter_headings) {
        if (title == text::to_lower_ascii(skip)) return true;
    }
    return false;
}

}  // namespace

Document parse_document(std::string_view raw_text, std::string doc_id, const ChunkingConfig& cfg) {
    if (raw_text.empty()) throw Error("parse", "empty document");
    if (!text::is_valid_utf8(raw_text)) throw Error("parse", "document '" + doc_id + "' is not valid UTF-8");
    if (doc_id.empty()) throw Error("parse", "document id must be non-empty");

    const std::regex heading_re(cfg.heading_pattern);
    Document doc;
    doc.doc_id = std::move(doc_id);

    // Scan line starts; headings open a new section whose body is the raw
    // slice up to the next heading line.
    std::size_t preamble_end = raw_text.size();
    struct Mark {
        std::size_t line_begin, body_begin;
        std::string heading;
    };
    std::vector<Mark> marks;
    std::size_t pos = 0;
    while (pos < raw_text.size()) {
        auto nl = raw_text.find('\n', pos);
        const std::size_t line_end = nl == std::string_view::npos ? raw_text.size() : nl;
        const std::size_t next = nl == std::string_view::npos ? raw_text.size() : nl + 1;
        std::string_view line = raw_text.substr(pos, line_end - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (std::regex_match(line.begin(), line.end(), heading_re)) {
            if (marks.empty()) preamble_end = pos;
            marks.push_back({pos, next, text::trim(line)});
        }
        pos = next;
    }

    const std::string_view preamble = raw_text.substr(0, preamble_end);
    if (!text::trim(preamble).empty()) {
        std::string title;
        for (auto line : text::split_lines(preamble)) {
            title = text::trim(line);
            if (!title.empty()) break;
        }
        doc.title = title;
        doc.sections.push_back({title, std::string(preamble), true});
    }
    for (std::size_t i = 0; i < marks.size(); ++i) {
        const std::size_t end = i + 1 < marks.size() ? marks[i + 1].line_begin : raw_text.size();
        Section s;
        s.heading = marks[i].heading;
        s.body = std::string(raw_text.substr(marks[i].body_begin, end - marks[i].body_begin));
        s.is_front_matter = is_front_matter_heading(s.heading, cfg);
        doc.sections.push_back(std::move(s));
    }
    if (doc.title.empty()) doc.title = doc.doc_id;
    return doc;
}

std::vector<Chunk> chunk_section(const Section& section, const ChunkingConfig& cfg, std::string_view doc_id,
                                 std::size_t section_ordinal) {
    cfg.validate();
    std::vector<Chunk> chunks;
    if (section.is_front_matter || section.body.empty()) return chunks;

    const auto offsets = text::codepoint_offsets(section.body);
    const std::size_t length = offsets.size() - 1;
    const std::size_t stride = cfg.chunk_size - cfg.chunk_overlap;
    for (std::size_t start = 0, ordinal = 0; start < length; start += stride, ++ordinal) {
        const std::size_t stop = std::min(start + cfg.chunk_size, length);
        Chunk c;
        c.chunk_id = std::string(doc_id) + ":" + std::to_string(section_ordinal) + ":" + std::to_string(ordinal);
        c.doc_id = std::string(doc_id);
        c.heading = section.heading;
        c.body = section.body.substr(offsets[start], offsets[stop] - offsets[start]);
        c.text = c.heading + "\n" + c.body;
        chunks.push_back(std::move(c));
        if (stop == length) break;
    }
    return chunks;
}

std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg) {
    std::vector<Chunk> out;
    for (std::size_t i = 0; i < doc.sections.size(); ++i) {
        auto part = chunk_section(doc.sections[i], cfg, doc.doc_id, i);
        out.insert(out.end(), std::make_move_iterator(part.begin()), std::make_move_iterator(part.end()));
    }
    return out;
}

nlohmann::json CorpusManifest::to_json() const {
    nlohmann::json docs = nlohmann::json::array();
    for (const auto& d : documents) {
        docs.push_back({{"doc_id", d.doc_id},
                        {"source", d.source},
                        {"sections", d.sections},
                        {"chunkable_sections", d.chunkable_sections},
                        {"chunks", d.chunks}});
    }
    return {{"config_hash", config_hash}, {"config", config.to_json()}, {"documents", docs},
            {"total_chunks", total_chunks}};
}

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

Corpus build_corpus(const std::vector<std::filesystem::path>& paths, const ChunkingConfig& cfg) {
    cfg.validate();
    Corpus corpus;
    corpus.manifest.config = cfg;
    corpus.manifest.config_hash = cfg.hash();

    std::set<std::string> seen;
    for (const auto& p : paths) {
        if (!seen.insert(p.stem().string()).second) {
            throw Error("corpus", "duplicate document id '" + p.stem().string() + "' from " + p.string());
        }
    }

    std::vector<std::future<Document>> parsed;
    parsed.reserve(paths.size());
    for (const auto& p : paths) {
        parsed.push_back(std::async(std::launch::async, [p, &cfg] {
            return parse_document(read_file(p), p.stem().string(), cfg);
        }));
    }
    for (std::size_t i = 0; i < paths.size(); ++i) {
        Document doc = parsed[i].get();
        DocumentStats stats;
        stats.doc_id = doc.doc_id;
        stats.source = paths[i].filename().string();
        stats.sections = doc.sections.size();
        for (const auto& s : doc.sections) stats.chunkable_sections += s.is_front_matter ? 0 : 1;
        auto chunks = chunk_document(doc, cfg);
        stats.chunks = chunks.size();
        corpus.manifest.total_chunks += chunks.size();
        corpus.manifest.documents.push_back(std::move(stats));
        corpus.chunks.insert(corpus.chunks.end(), std::make_move_iterator(chunks.begin()),
                             std::make_move_iterator(chunks.end()));
        corpus.documents.push_back(std::move(doc));
    }
    return corpus;
}

void write_chunks_jsonl(const std::filesystem::path& path, const std::vector<Chunk>& chunks) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + path.string());
    for (const auto& c : chunks) {
        nlohmann::json j = {{"chunk_id", c.chunk_id}, {"doc_id", c.doc_id}, {"heading", c.heading}, {"body", c.body}};
        out << j.dump() << '\n';
    }
}

std::vector<Chunk> read_chunks_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + path.string());
    std::vector<Chunk> chunks;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            Chunk c;
            c.chunk_id = j.at("chunk_id").get<std::string>();
            c.doc_id = j.at("doc_id").get<std::string>();
            c.heading = j.at("heading").get<std::string>();
            c.body = j.at("body").get<std::string>();
            c.text = c.heading + "\n" + c.body;
            chunks.push_back(std::move(c));
        } catch (const nlohmann::json::exception& e) {
            throw Error("parse", path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return chunks;
}

}  // namespace telerag::corpus
