#pragma once

#include <cstddef>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "telerag/corpus.hpp"

namespace telerag::abbrev {

struct AbbrevEntry {
    std::string abbrev;
    std::string expansion;
    std::string source_doc;

    bool operator==(const AbbrevEntry&) const = default;
};

struct Conflict {
    std::string abbrev;
    std::string kept;
    std::string discarded;
    std::string source_doc;  // where the discarded alternate came from
};

/// One expansion per token. Alternates that lost under first-seen-wins are
/// kept in `conflicts`.
struct AbbrevDict {
    struct Value {
        std::string expansion;
        std::string source_doc;
    };
    std::map<std::string, Value> entries;
    std::vector<Conflict> conflicts;

    std::size_t size() const { return entries.size(); }
    const std::string* find(std::string_view token) const;

    /// Adds an entry under first-seen-wins. Returns false if a conflicting
    /// alternate was logged instead.
    bool add(const AbbrevEntry& e);

    /// {abbrev: expansion}
    nlohmann::json to_json() const;
    static AbbrevDict from_json(const nlohmann::json& j);
    void save(const std::filesystem::path& dict_path, const std::filesystem::path& conflicts_path) const;
    static AbbrevDict load(const std::filesystem::path& dict_path);
};

/// Token grammar for abbreviations: length >= min_length, characters drawn
/// from letters, digits and '-', starting with a letter or digit, at least one
/// uppercase letter and strictly more uppercase than lowercase letters.
struct Grammar {
    std::size_t min_length = 2;
    std::set<std::string> stopwords = {"AND", "ARE", "FOR", "NOT", "THE", "OR", "OF", "TO", "IN", "IS",
                                       "IT", "ON", "AT", "BY", "AN", "AS", "BE", "NO", "IF"};

    bool matches(std::string_view token) const;
};

struct Detection {
    std::string token;
    std::optional<std::string> expansion;
    std::size_t begin = 0;  // code point offsets into the source text
    std::size_t end = 0;
};

/// Scans sections whose heading mentions "abbreviation" (case-insensitive);
/// each body line "TOKEN<whitespace>EXPANSION" with a grammatical TOKEN yields
/// one entry. Front matter is never scanned.
std::vector<AbbrevEntry> extract_abbreviations(const corpus::Document& document, const Grammar& grammar = {});

AbbrevDict merge_dictionaries(const std::vector<std::vector<AbbrevEntry>>& entry_lists);

/// One detection per distinct grammatical token, in first-occurrence order.
std::vector<Detection> detect_abbreviations(std::string_view text, const AbbrevDict& dict,
                                            const Grammar& grammar = {});

/// Share of distinct detected tokens across `questions` that the dictionary
/// expands. 1.0 when nothing is detected.
double hit_rate(const std::vector<std::string>& questions, const AbbrevDict& dict, const Grammar& grammar = {});

}  // namespace telerag::abbrev
