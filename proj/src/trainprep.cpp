#include "telerag/trainprep.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "telerag/error.hpp"
#include "telerag/hash.hpp"
#include "telerag/shuffle.hpp"

namespace telerag::trainprep {

std::vector<std::uint8_t> mask_vector(std::size_t length, std::size_t boundary) {
    if (boundary > length) {
        throw Error("trainprep", "boundary " + std::to_string(boundary) + " exceeds sequence length " +
                                     std::to_string(length));
    }
    std::vector<std::uint8_t> m(length, 1);
    std::fill_n(m.begin(), boundary, std::uint8_t{0});
    return m;
}

PredictionTable::PredictionTable(std::size_t vocab, std::vector<double> probs, std::vector<std::size_t> targets)
    : vocab_(vocab), probs_(std::move(probs)), targets_(std::move(targets)) {
    if (vocab_ == 0) throw Error("trainprep", "vocabulary must be non-empty");
    if (probs_.size() != vocab_ * targets_.size()) throw Error("trainprep", "prediction table shape mismatch");
    for (std::size_t t = 0; t < targets_.size(); ++t) {
        if (targets_[t] >= vocab_) throw Error("trainprep", "target out of vocabulary at position " + std::to_string(t));
        double sum = 0.0;
        for (double p : row(t)) {
            if (!(p >= 0.0 && p <= 1.0)) throw Error("trainprep", "probability outside [0, 1] at position " + std::to_string(t));
            sum += p;
        }
        if (std::abs(sum - 1.0) > 1e-6) throw Error("trainprep", "row " + std::to_string(t) + " does not sum to 1");
    }
}

double masked_cross_entropy(const PredictionTable& preds, std::span<const std::uint8_t> mask) {
    if (mask.size() != preds.length()) throw Error("trainprep", "mask length does not match prediction table");
    double loss = 0.0;
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (!mask[t]) continue;
        const double p = preds.target_probability(t);
        if (p <= 0.0) {
            throw Error("trainprep", "infinite loss: zero probability for the true token at position " + std::to_string(t));
        }
        loss -= std::log(p);
    }
    return loss;
}

double full_cross_entropy(const PredictionTable& preds) {
    const std::vector<std::uint8_t> ones(preds.length(), 1);
    return masked_cross_entropy(preds, ones);
}

double prompt_cross_entropy(const PredictionTable& preds, std::size_t boundary) {
    auto m = mask_vector(preds.length(), boundary);
    for (auto& x : m) x ^= 1;
    return masked_cross_entropy(preds, m);
}

std::size_t find_answer_boundary(std::span<const TokenId> tokens, std::span<const TokenId> cue) {
    if (cue.empty()) throw Error("trainprep", "output cue must be non-empty");
    const auto it = std::search(tokens.begin(), tokens.end(), cue.begin(), cue.end());
    if (it == tokens.end()) throw Error("trainprep", "output cue not found in token sequence");
    return static_cast<std::size_t>(it - tokens.begin()) + cue.size();
}

std::vector<TokenId> HashTokenizer::encode(std::string_view text) const {
    std::vector<TokenId> out;
    std::size_t i = 0;
    auto emit = [&](std::string_view piece) { out.push_back(static_cast<TokenId>(fnv1a64(piece) & 0x7fffffffu)); };
    while (i < text.size()) {
        const auto c = static_cast<unsigned char>(text[i]);
        if (std::isspace(c)) {
            ++i;
        } else if (std::isalnum(c) || c >= 0x80) {
            std::size_t j = i;
            while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) ||
                                       static_cast<unsigned char>(text[j]) >= 0x80)) {
                ++j;
            }
            emit(text.substr(i, j - i));
            i = j;
        } else {
            emit(text.substr(i, 1));
            ++i;
        }
    }
    return out;
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"lora_rank", lora_rank},
            {"lora_alpha", lora_alpha},
            {"lora_dropout", lora_dropout},
            {"adapter_targets", adapter_targets},
            {"quantized", quantized}};
}

nlohmann::json TrainingRecord::to_json() const {
    return {{"question_id", question_id}, {"epoch", epoch},           {"prompt", prompt},
            {"answer", answer},           {"boundary", boundary},     {"option_order", option_order},
            {"tokenizer_id", tokenizer_id}};
}

std::string training_text(const TrainingRecord& r) { return r.prompt + " " + r.answer; }

std::vector<TrainingRecord> emit_training_set(const std::vector<prompt::McqQuestion>& questions,
                                              const std::vector<retrieval::Context>& contexts,
                                              const std::vector<std::vector<abbrev::Detection>>& abbrevs,
                                              std::uint64_t epochs, std::uint64_t seed) {
    if (!contexts.empty() && contexts.size() != questions.size()) {
        throw Error("trainprep", "contexts are not aligned with questions");
    }
    if (!abbrevs.empty() && abbrevs.size() != questions.size()) {
        throw Error("trainprep", "abbreviations are not aligned with questions");
    }
    for (const auto& q : questions) {
        if (!q.gold) throw Error("trainprep", "question '" + q.question_id + "' has no gold answer");
    }

    const HashTokenizer tok;
    const auto cue = tok.encode(prompt::kOutputCue);
    const retrieval::Context no_context;
    const std::vector<abbrev::Detection> no_abbrevs;

    std::vector<TrainingRecord> out;
    out.reserve(questions.size() * epochs);
    for (std::uint64_t epoch = 0; epoch < epochs; ++epoch) {
        const auto shuffled = shuffle::epoch_shuffle(questions, epoch, seed);
        for (std::size_t i = 0; i < shuffled.size(); ++i) {
            const auto& sq = shuffled[i];
            // The shuffled question already carries the permuted options, so
            // it is rendered in identity order.
            const auto p = prompt::build_phi2_prompt(sq.question, {}, abbrevs.empty() ? no_abbrevs : abbrevs[i],
                                                     contexts.empty() ? no_context : contexts[i]);
            TrainingRecord r;
            r.question_id = sq.question.question_id;
            r.epoch = epoch;
            r.prompt = p.rendered;
            r.answer = "option " + std::to_string(*sq.question.gold + 1) + ": " + sq.question.options[*sq.question.gold];
            r.option_order = sq.order.mapping;
            r.tokenizer_id = std::string(HashTokenizer::kId);
            const auto tokens = tok.encode(training_text(r));
            r.boundary = find_answer_boundary(tokens, cue);
            out.push_back(std::move(r));
        }
    }
    return out;
}

void write_training_set(const std::filesystem::path& records_path, const std::filesystem::path& manifest_path,
                        const std::vector<TrainingRecord>& records, const TrainingConfig& cfg,
                        std::uint64_t epochs, std::uint64_t seed) {
    std::ofstream out(records_path, std::ios::binary);
    if (!out) throw Error("io", "cannot write file: " + records_path.string());
    for (const auto& r : records) out << r.to_json().dump() << '\n';

    const nlohmann::json manifest = {
        {"training_config", cfg.to_json()},
        {"objective", {{"loss", "question_masked_cross_entropy"},
                       {"mask", "zero for tokens before the output cue boundary, one after"},
                       {"recommended_normalization", "mean_over_unmasked_tokens"},
                       {"reference_primitive_normalization", "sum"}}},
        {"output_cue", prompt::kOutputCue},
        {"tokenizer_id", HashTokenizer::kId},
        {"epochs", epochs},
        {"seed", seed},
        {"records", records.size()},
        {"records_sha256", [&] {
             std::string all;
             for (const auto& r : records) all += r.to_json().dump() + '\n';
             return sha256_hex(all);
         }()}};
    std::ofstream m(manifest_path, std::ios::binary);
    if (!m) throw Error("io", "cannot write file: " + manifest_path.string());
    m << manifest.dump(2) << '\n';
}

}  // namespace telerag::trainprep
