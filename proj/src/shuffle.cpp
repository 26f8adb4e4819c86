#include "telerag/shuffle.hpp"

#include <algorithm>
#include <numeric>
#include <set>

#include "telerag/answer.hpp"
#include "telerag/rng.hpp"

namespace telerag::shuffle {

bool Permutation::is_valid() const {
    std::vector<bool> seen(mapping.size(), false);
    for (auto c : mapping) {
        if (c >= mapping.size() || seen[c]) return false;
        seen[c] = true;
    }
    return true;
}

Permutation Permutation::identity(std::size_t n) {
    Permutation p;
    p.mapping.resize(n);
    std::iota(p.mapping.begin(), p.mapping.end(), std::size_t{0});
    return p;
}

std::uint64_t factorial(std::size_t n) {
    std::uint64_t f = 1;
    for (std::size_t i = 2; i <= n; ++i) {
        if (f > UINT64_MAX / i) return UINT64_MAX;
        f *= i;
    }
    return f;
}

std::vector<Permutation> all_permutations(std::size_t n) {
    std::vector<Permutation> out;
    auto p = Permutation::identity(n);
    do {
        out.push_back(p);
    } while (std::next_permutation(p.mapping.begin(), p.mapping.end()));
    return out;
}

namespace {

constexpr std::uint64_t kEnumerationLimit = 720;

Permutation random_permutation(std::size_t n, Rng& rng) {
    auto p = Permutation::identity(n);
    for (std::size_t i = n; i > 1; --i) {
        const auto j = static_cast<std::size_t>(rng.below(i));
        std::swap(p.mapping[i - 1], p.mapping[j]);
    }
    return p;
}

}  // namespace

std::vector<Permutation> sample_permutations(std::size_t n, std::size_t k, std::uint64_t seed) {
    if (n == 0 || k == 0) throw Error("shuffle", "sample_permutations requires n >= 1 and k >= 1");
    const std::uint64_t total = factorial(n);
    if (k >= total) return all_permutations(n);

    Rng rng(seed);
    if (total <= kEnumerationLimit) {
        // Partial Fisher-Yates over the enumeration.
        auto all = all_permutations(n);
        for (std::size_t i = 0; i < k; ++i) {
            const auto j = i + static_cast<std::size_t>(rng.below(all.size() - i));
            std::swap(all[i], all[j]);
        }
        all.resize(k);
        return all;
    }
    std::vector<Permutation> out;
    std::set<Permutation> seen;
    while (out.size() < k) {
        auto p = random_permutation(n, rng);
        if (seen.insert(p).second) out.push_back(std::move(p));
    }
    return out;
}

std::size_t map_back(const Permutation& perm, std::size_t selected_slot) {
    if (selected_slot >= perm.size()) {
        throw Error("shuffle", "slot " + std::to_string(selected_slot) + " out of range for " +
                                   std::to_string(perm.size()) + " options");
    }
    return perm.mapping[selected_slot];
}

std::size_t VoteTally::votes() const { return std::accumulate(counts.begin(), counts.end(), std::size_t{0}); }

nlohmann::json VoteTally::to_json() const {
    return {{"counts", counts}, {"k", k}, {"winner", winner}, {"tied", tied}};
}

VoteTally majority_vote(const std::vector<std::size_t>& votes, std::size_t n) {
    if (votes.empty()) throw Error("no_parsable_answers", "no parsable answers");
    VoteTally t;
    t.counts.assign(n, 0);
    t.k = votes.size();
    for (auto v : votes) {
        if (v >= n) throw Error("shuffle", "vote " + std::to_string(v) + " out of range for " + std::to_string(n) + " options");
        ++t.counts[v];
    }
    const auto best = std::max_element(t.counts.begin(), t.counts.end());  // first maximum
    t.winner = static_cast<std::size_t>(best - t.counts.begin());
    t.tied = std::count(t.counts.begin(), t.counts.end(), *best) > 1;
    return t;
}

nlohmann::json ShuffleDiagnostics::to_json() const {
    nlohmann::json perms = nlohmann::json::array();
    for (const auto& p : permutations) perms.push_back(p.mapping);
    nlohmann::json slots = nlohmann::json::array();
    for (const auto& s : parsed_slots) slots.push_back(s ? nlohmann::json(*s) : nlohmann::json(nullptr));
    return {{"permutations", perms}, {"completions", completions}, {"parsed_slots", slots},
            {"canonical_votes", canonical_votes}};
}

ShuffleOutcome answer_with_shuffle(const prompt::McqQuestion& q, std::size_t k, std::uint64_t seed,
                                   const ShuffleContext& ctx) {
    if (!ctx.backend) throw Error("config", "no completion backend configured");
    const std::size_t n = q.options.size();
    const auto stream_seed = Rng::derive(seed, {"shuffle", q.question_id}).next();

    ShuffleOutcome out;
    auto& diag = out.diagnostics;
    diag.permutations = sample_permutations(n, k, stream_seed);

    backend::CompletionRequest req;
    req.max_new_tokens = ctx.max_new_tokens;
    req.temperature = ctx.temperature;
    req.seed = seed;
    req.prompts.reserve(diag.permutations.size());
    for (const auto& p : diag.permutations) {
        req.prompts.push_back(prompt::build_phi2_prompt(q, p.mapping, ctx.abbrevs, ctx.contexts).rendered);
    }
    diag.completions = ctx.backend->complete(req);

    for (std::size_t i = 0; i < diag.completions.size(); ++i) {
        const auto slot = answer::parse_option_label(diag.completions[i], n);
        diag.parsed_slots.push_back(slot);
        if (slot) diag.canonical_votes.push_back(map_back(diag.permutations[i], *slot));
    }
    if (diag.canonical_votes.empty()) throw NoParsableAnswers(std::move(diag));
    out.tally = majority_vote(diag.canonical_votes, n);
    out.tally.k = diag.permutations.size();
    return out;
}

std::vector<ShuffledQuestion> epoch_shuffle(const std::vector<prompt::McqQuestion>& records, std::uint64_t epoch,
                                            std::uint64_t seed) {
    std::vector<ShuffledQuestion> out;
    out.reserve(records.size());
    for (const auto& q : records) {
        auto rng = Rng::derive(seed, {"epoch", std::to_string(epoch), q.question_id});
        ShuffledQuestion s;
        s.order = random_permutation(q.options.size(), rng);
        s.question = q;
        for (std::size_t slot = 0; slot < s.order.size(); ++slot) {
            s.question.options[slot] = q.options[s.order.mapping[slot]];
            if (q.gold && *q.gold == s.order.mapping[slot]) s.question.gold = slot;
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace telerag::shuffle
