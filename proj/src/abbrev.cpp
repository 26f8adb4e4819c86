#include "telerag/abbrev.hpp"

#include <fstream>
#include <unordered_set>

#include "telerag/error.hpp"
#include "telerag/text.hpp"

namespace telerag::abbrev {

const std::string* AbbrevDict::find(std::string_view token) const {
    auto it = entries.find(std::string(token));
    return it == entries.end() ? nullptr : &it->second.expansion;
}

bool AbbrevDict::add(const AbbrevEntry& e) {
    auto [it, inserted] = entries.try_emplace(e.abbrev, Value{e.expansion, e.source_doc});
    if (inserted || it->second.expansion == e.expansion) return true;
    for (const auto& c : conflicts) {
        if (c.abbrev == e.abbrev && c.discarded == e.expansion) return false;
    }
    conflicts.push_back({e.abbrev, it->second.expansion, e.expansion, e.source_doc});
    return false;
}

nlohmann::json AbbrevDict::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [k, v] : entries) j[k] = v.expansion;
    return j;
}

AbbrevDict AbbrevDict::from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw Error("parse", "abbreviation dictionary must be a JSON object");
    AbbrevDict d;
    for (const auto& [k, v] : j.items()) d.entries[k] = {v.get<std::string>(), {}};
    return d;
}

void AbbrevDict::save(const std::filesystem::path& dict_path, const std::filesystem::path& conflicts_path) const {
    std::ofstream out(dict_path, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + dict_path.string());
    out << to_json().dump(2) << '\n';
    std::ofstream log(conflicts_path, std::ios::binary);
    if (!log) throw Error("io", "cannot write file: " + conflicts_path.string());
    for (const auto& c : conflicts) {
        log << nlohmann::json{{"abbrev", c.abbrev}, {"kept", c.kept}, {"discarded", c.discarded},
                              {"source_doc", c.source_doc}}
                   .dump()
            << '\n';
    }
}

AbbrevDict AbbrevDict::load(const std::filesystem::path& dict_path) {
    std::ifstream in(dict_path, std::ios::binary);
    if (!in) throw Error("io", "cannot read file: " + dict_path.string());
    try {
        return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
        throw Error("parse", dict_path.string() + ": " + e.what());
    }
}

bool Grammar::matches(std::string_view token) const {
    if (token.size() < min_length) return false;
    if (!std::isalnum(static_cast<unsigned char>(token.front()))) return false;
    std::size_t upper = 0, lower = 0;
    for (char c : token) {
        if (c >= 'A' && c <= 'Z') ++upper;
        else if (c >= 'a' && c <= 'z') ++lower;
        else if (!(c >= '0' && c <= '9') && c != '-') return false;
    }
    if (upper == 0 || upper <= lower) return false;
    return !stopwords.contains(std::string(token));
}

std::vector<AbbrevEntry> extract_abbreviations(const corpus::Document& document, const Grammar& grammar) {
    std::vector<AbbrevEntry> out;
    for (const auto& section : document.sections) {
        if (section.is_front_matter) continue;
        if (text::to_lower_ascii(section.heading).find("abbreviation") == std::string::npos) continue;
        for (auto line : text::split_lines(section.body)) {
            const auto sep = line.find_first_of(" \t");
            if (sep == std::string_view::npos) continue;
            const auto token = line.substr(0, sep);
            if (!grammar.matches(token)) continue;
            auto expansion = text::trim(line.substr(sep));
            if (expansion.empty()) continue;
            out.push_back({std::string(token), std::move(expansion), document.doc_id});
        }
    }
    return out;
}

AbbrevDict merge_dictionaries(const std::vector<std::vector<AbbrevEntry>>& entry_lists) {
    AbbrevDict dict;
    for (const auto& list : entry_lists) {
        for (const auto& e : list) dict.add(e);
    }
    return dict;
}

namespace {

bool is_token_byte(unsigned char c) { return std::isalnum(c) || c == '-'; }

}  // namespace

std::vector<Detection> detect_abbreviations(std::string_view source, const AbbrevDict& dict, const Grammar& grammar) {
    std::vector<Detection> out;
    std::unordered_set<std::string> seen;
    std::size_t cp = 0;  // code point index of source[i]
    std::size_t i = 0;
    while (i < source.size()) {
        const auto c = static_cast<unsigned char>(source[i]);
        if (!is_token_byte(c)) {
            if ((c & 0xC0) != 0x80) ++cp;
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j < source.size() && is_token_byte(static_cast<unsigned char>(source[j]))) ++j;
        // Strip hyphens at the edges ("-NR-" -> "NR").
        std::size_t b = i, e = j;
        while (b < e && source[b] == '-') ++b;
        while (e > b && source[e - 1] == '-') --e;
        const auto token = source.substr(b, e - b);
        if (grammar.matches(token) && seen.insert(std::string(token)).second) {
            Detection d;
            d.token = std::string(token);
            if (const auto* exp = dict.find(token)) d.expansion = *exp;
            d.begin = cp + (b - i);
            d.end = d.begin + token.size();
            out.push_back(std::move(d));
        }
        cp += j - i;  // token bytes are ASCII
        i = j;
    }
    return out;
}

double hit_rate(const std::vector<std::string>& questions, const AbbrevDict& dict, const Grammar& grammar) {
    std::set<std::string> detected;
    for (const auto& q : questions) {
        for (auto& d : detect_abbreviations(q, dict, grammar)) detected.insert(d.token);
    }
    if (detected.empty()) return 1.0;
    std::size_t hits = 0;
    for (const auto& t : detected) hits += dict.find(t) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(detected.size());
}

}  // namespace telerag::abbrev
