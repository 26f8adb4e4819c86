#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "telerag/backend.hpp"

namespace telerag::answer {

enum class Method { label_parse, similarity, random_fallback };

std::string_view to_string(Method m);

struct ParsedAnswer {
    std::optional<std::size_t> slot;
    Method method = Method::label_parse;
    std::string raw;
};

/// Earliest of "option <d>" (case-insensitive), "(<d>)", or a bare leading
/// number, with 1 <= d <= n. Returns d - 1.
std::optional<std::size_t> parse_option_label(std::string_view completion, std::size_t n);

/// Cosine similarity; zero-magnitude inputs score 0.
double cosine(std::span<const float> a, std::span<const float> b);

/// Index of the option most similar to `free_text` under `embedder`; ties go
/// to the lower index.
std::size_t select_by_similarity(std::string_view free_text, const std::vector<std::string>& options,
                                 const backend::EmbeddingBackend& embedder);

/// Uniform slot in [0, n), fixed per (seed, question_id).
std::size_t fallback_random(std::size_t n, std::uint64_t seed, std::string_view question_id);

}  // namespace telerag::answer
