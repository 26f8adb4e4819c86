#include "telerag/answer.hpp"

#include <cctype>
#include <cmath>

#include "telerag/error.hpp"
#include "telerag/rng.hpp"

namespace telerag::answer {

std::string_view to_string(Method m) {
    switch (m) {
        case Method::label_parse: return "label_parse";
        case Method::similarity: return "similarity";
        case Method::random_fallback: return "random_fallback";
    }
    return "label_parse";
}

namespace {

bool is_digit(char c) { return c >= '0' && c <= '9'; }

/// Parses the digit run starting at `pos`; returns (value, end) or nullopt.
std::optional<std::pair<std::size_t, std::size_t>> digits_at(std::string_view s, std::size_t pos) {
    std::size_t end = pos;
    std::size_t value = 0;
    while (end < s.size() && is_digit(s[end])) {
        value = value * 10 + static_cast<std::size_t>(s[end] - '0');
        if (value > 1000000) return std::nullopt;
        ++end;
    }
    if (end == pos) return std::nullopt;
    return std::pair{value, end};
}

bool valid(std::size_t d, std::size_t n) { return d >= 1 && d <= n; }

}  // namespace

std::optional<std::size_t> parse_option_label(std::string_view completion, std::size_t n) {
    // Leading bare number: "3", "3.", "3: ...", "3) ..." but not "3GPP".
    std::size_t lead = 0;
    while (lead < completion.size() && std::isspace(static_cast<unsigned char>(completion[lead]))) ++lead;
    if (auto d = digits_at(completion, lead)) {
        const auto [value, end] = *d;
        const bool delimited = end == completion.size() || std::isspace(static_cast<unsigned char>(completion[end])) ||
                               std::string_view(".:),;").find(completion[end]) != std::string_view::npos;
        if (delimited && valid(value, n)) return value - 1;
    }

    for (std::size_t i = 0; i < completion.size(); ++i) {
        if (completion[i] == '(') {
            if (auto d = digits_at(completion, i + 1)) {
                const auto [value, end] = *d;
                if (end < completion.size() && completion[end] == ')' && valid(value, n)) return value - 1;
            }
            continue;
        }
        if (i + 6 <= completion.size() && (completion[i] == 'o' || completion[i] == 'O')) {
            std::string word(completion.substr(i, 6));
            for (auto& c : word) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            if (word != "option") continue;
            if (i > 0 && std::isalnum(static_cast<unsigned char>(completion[i - 1]))) continue;
            std::size_t j = i + 6;
            while (j < completion.size() && (completion[j] == ' ' || completion[j] == '\t')) ++j;
            if (auto d = digits_at(completion, j)) {
                const auto [value, end] = *d;
                const bool word_end = end == completion.size() || !std::isalnum(static_cast<unsigned char>(completion[end]));
                if (word_end && valid(value, n)) return value - 1;
            }
        }
    }
    return std::nullopt;
}

double cosine(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw Error("answer", "cosine of vectors with different dimensions");
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += static_cast<double>(a[i]) * b[i];
        na += static_cast<double>(a[i]) * a[i];
        nb += static_cast<double>(b[i]) * b[i];
    }
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::size_t select_by_similarity(std::string_view free_text, const std::vector<std::string>& options,
                                 const backend::EmbeddingBackend& embedder) {
    if (options.empty()) throw Error("answer", "no options to select from");
    std::vector<std::string> texts;
    texts.reserve(options.size() + 1);
    texts.emplace_back(free_text);
    texts.insert(texts.end(), options.begin(), options.end());
    const auto vecs = embedder.embed(texts);

    std::size_t best = 0;
    double best_score = cosine(vecs[0], vecs[1]);
    for (std::size_t i = 1; i < options.size(); ++i) {
        const double s = cosine(vecs[0], vecs[i + 1]);
        if (s > best_score) {
            best = i;
            best_score = s;
        }
    }
    return best;
}

std::size_t fallback_random(std::size_t n, std::uint64_t seed, std::string_view question_id) {
    if (n == 0) throw Error("answer", "fallback over zero options");
    return static_cast<std::size_t>(Rng::derive(seed, {"fallback", question_id}).below(n));
}

}  // namespace telerag::answer
