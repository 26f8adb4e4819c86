#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace telerag::corpus {

struct Section {
    std::string heading;
    std::string body;
    bool is_front_matter = false;
};

struct Document {
    std::string doc_id;
    std::string title;
    std::vector<Section> sections;
};

/// Retrieval unit: a window over one section body, prefixed with the
/// section heading. `text` is `heading + "\n" + body`.
struct Chunk {
    std::string chunk_id;
    std::string doc_id;
    std::string heading;
    std::string body;
    std::string text;

    bool operator==(const Chunk&) const = default;
};

struct ChunkingConfig {
    std::size_t chunk_size = 1024;   // characters (code points)
    std::size_t chunk_overlap = 0;   // characters shared by consecutive windows
    /// ECMAScript regex matched against whole lines.
    std::string heading_pattern = R"(\d+(\.\d+)*[ \t]+\S.*)";
    /// Compared case-insensitively against the heading title (number stripped).
    std::vector<std::string> front_matter_headings = {"Contents", "Scope", "References", "Foreword"};

    /// Throws telerag::Error if chunk_size == 0 or overlap >= chunk_size.
    void validate() const;
    nlohmann::json to_json() const;
    /// SHA-256 over the canonical JSON form.
    std::string hash() const;
};

/// Heading with its leading section number removed ("4.1 Paging" -> "Paging").
std::string heading_title(std::string_view heading);

Document parse_document(std::string_view raw_text, std::string doc_id, const ChunkingConfig& cfg);

/// Splits a non-front-matter section into character windows. Chunk ids are
/// filled from `doc_id`, `section_ordinal` and the window ordinal.
std::vector<Chunk> chunk_section(const Section& section, const ChunkingConfig& cfg,
                                 std::string_view doc_id = {}, std::size_t section_ordinal = 0);

/// All chunks of a document, in section order. Front matter is skipped.
std::vector<Chunk> chunk_document(const Document& doc, const ChunkingConfig& cfg);

struct DocumentStats {
    std::string doc_id;
    std::string source;  // file name
    std::size_t sections = 0;
    std::size_t chunkable_sections = 0;
    std::size_t chunks = 0;
};

struct CorpusManifest {
    std::string config_hash;
    ChunkingConfig config;
    std::vector<DocumentStats> documents;
    std::size_t total_chunks = 0;

    nlohmann::json to_json() const;
};

struct Corpus {
    std::vector<Document> documents;
    std::vector<Chunk> chunks;
    CorpusManifest manifest;
};

/// Reads, parses and chunks every file. Document ids are file stems and must
/// be unique. Output order follows `paths` regardless of parse scheduling.
Corpus build_corpus(const std::vector<std::filesystem::path>& paths, const ChunkingConfig& cfg);

/// Line-delimited JSON {chunk_id, doc_id, heading, body}.
void write_chunks_jsonl(const std::filesystem::path& path, const std::vector<Chunk>& chunks);
std::vector<Chunk> read_chunks_jsonl(const std::filesystem::path& path);

}  // namespace telerag::corpus
