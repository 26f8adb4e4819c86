#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "telerag/backend.hpp"
#include "telerag/error.hpp"
#include "telerag/prompt.hpp"

namespace telerag::shuffle {

/// mapping[j] is the canonical option index displayed at slot j.
struct Permutation {
    std::vector<std::size_t> mapping;

    std::size_t size() const { return mapping.size(); }
    bool is_valid() const;
    static Permutation identity(std::size_t n);
    bool operator==(const Permutation&) const = default;
    auto operator<=>(const Permutation&) const = default;
};

/// n!, saturating at UINT64_MAX.
std::uint64_t factorial(std::size_t n);

/// All n! permutations in lexicographic order.
std::vector<Permutation> all_permutations(std::size_t n);

/// min(k, n!) distinct permutations drawn uniformly without replacement.
/// When k >= n! the full lexicographic enumeration is returned.
std::vector<Permutation> sample_permutations(std::size_t n, std::size_t k, std::uint64_t seed);

/// Canonical option shown at `selected_slot`.
std::size_t map_back(const Permutation& perm, std::size_t selected_slot);

struct VoteTally {
    std::vector<std::size_t> counts;  // per canonical option
    std::size_t k = 0;                // prompts issued
    std::size_t winner = 0;
    bool tied = false;                // winner chosen by the lowest-index rule

    std::size_t votes() const;
    nlohmann::json to_json() const;
};

/// Most frequent canonical answer; ties go to the lowest index.
VoteTally majority_vote(const std::vector<std::size_t>& votes, std::size_t n);

/// Everything answer_with_shuffle needs besides the question.
struct ShuffleContext {
    const backend::CompletionBackend* backend = nullptr;
    std::vector<abbrev::Detection> abbrevs;
    retrieval::Context contexts;
    int max_new_tokens = 32;
    double temperature = 0.0;
};

struct ShuffleDiagnostics {
    std::vector<Permutation> permutations;
    std::vector<std::string> completions;
    std::vector<std::optional<std::size_t>> parsed_slots;
    std::vector<std::size_t> canonical_votes;

    nlohmann::json to_json() const;
};

struct ShuffleOutcome {
    VoteTally tally;
    ShuffleDiagnostics diagnostics;
};

/// Samples permutations, renders one prompt per permutation, submits them as
/// a single batch and votes over the parsed answers mapped back to canonical
/// indices. Unparsable completions are left out of the tally. Throws
/// NoParsableAnswers (with diagnostics) when nothing parses.
ShuffleOutcome answer_with_shuffle(const prompt::McqQuestion& q, std::size_t k, std::uint64_t seed,
                                   const ShuffleContext& ctx);

class NoParsableAnswers : public Error {
public:
    explicit NoParsableAnswers(ShuffleDiagnostics d)
        : Error("no_parsable_answers", "no parsable answers"), diagnostics(std::move(d)) {}
    ShuffleDiagnostics diagnostics;
};

struct ShuffledQuestion {
    prompt::McqQuestion question;  // options permuted, gold remapped
    Permutation order;             // slot -> original canonical index
};

/// Per-epoch option reshuffle for training. Each question's permutation is
/// drawn from (seed, epoch, question_id) only.
std::vector<ShuffledQuestion> epoch_shuffle(const std::vector<prompt::McqQuestion>& records, std::uint64_t epoch,
                                            std::uint64_t seed);

}  // namespace telerag::shuffle
