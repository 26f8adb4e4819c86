#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "telerag/prompt.hpp"

namespace telerag::trainprep {

using TokenId = std::uint32_t;

/// m[t] = 0 for the first `boundary` positions (prompt), 1 afterwards.
std::vector<std::uint8_t> mask_vector(std::size_t length, std::size_t boundary);

/// Row-major T x V table of predicted next-token distributions plus the true
/// token at every position.
class PredictionTable {
public:
    PredictionTable(std::size_t vocab, std::vector<double> probs, std::vector<std::size_t> targets);

    std::size_t length() const { return targets_.size(); }
    std::size_t vocab() const { return vocab_; }
    std::span<const double> row(std::size_t t) const { return {probs_.data() + t * vocab_, vocab_}; }
    std::size_t target(std::size_t t) const { return targets_[t]; }
    double target_probability(std::size_t t) const { return probs_[t * vocab_ + targets_[t]]; }

private:
    std::size_t vocab_;
    std::vector<double> probs_;
    std::vector<std::size_t> targets_;
};

/// -sum_t m_t * log p_t(y_t). Only positions with m_t = 1 are read.
double masked_cross_entropy(const PredictionTable& preds, std::span<const std::uint8_t> mask);

/// Unmasked next-token loss over the whole sequence.
double full_cross_entropy(const PredictionTable& preds);

/// Loss over the prompt positions only: the complement of the answer mask.
double prompt_cross_entropy(const PredictionTable& preds, std::size_t boundary);

/// Q such that tokens [0, Q) are prompt: one past the last token of the first
/// occurrence of `cue`.
std::size_t find_answer_boundary(std::span<const TokenId> tokens, std::span<const TokenId> cue);

/// Deterministic reference tokenizer used to express record boundaries in
/// token units: alphanumeric runs and single punctuation characters, ids
/// from a 31-bit FNV-1a hash. External trainers re-derive boundaries with
/// their own tokenizer from the prompt text and the output cue.
struct HashTokenizer {
    static constexpr std::string_view kId = "telerag-hash-ws-v1";
    std::vector<TokenId> encode(std::string_view text) const;
};

struct TrainingConfig {
    int lora_rank = 64;
    int lora_alpha = 16;
    double lora_dropout = 0.05;
    std::vector<std::string> adapter_targets = {"attention.query", "attention.key", "attention.value",
                                                "feed_forward"};
    bool quantized = false;

    nlohmann::json to_json() const;
};

struct TrainingRecord {
    std::string question_id;
    std::uint64_t epoch = 0;
    std::string prompt;  // ends with the output cue
    std::string answer;  // "option <slot>: <text>" under option_order
    std::size_t boundary = 0;
    std::vector<std::size_t> option_order;
    std::string tokenizer_id;

    nlohmann::json to_json() const;
};

/// Sequence fed to the trainer: prompt, a single space, answer.
std::string training_text(const TrainingRecord& r);

/// Renders `epochs` passes over the questions, reshuffling options each epoch.
/// `contexts` is either empty or aligned with `questions`; `abbrevs` likewise.
std::vector<TrainingRecord> emit_training_set(const std::vector<prompt::McqQuestion>& questions,
                                              const std::vector<retrieval::Context>& contexts,
                                              const std::vector<std::vector<abbrev::Detection>>& abbrevs,
                                              std::uint64_t epochs, std::uint64_t seed);

void write_training_set(const std::filesystem::path& records_path, const std::filesystem::path& manifest_path,
                        const std::vector<TrainingRecord>& records, const TrainingConfig& cfg,
                        std::uint64_t epochs, std::uint64_t seed);

}  // namespace telerag::trainprep
