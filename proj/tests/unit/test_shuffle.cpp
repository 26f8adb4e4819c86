#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>

#include "support/prompt_fixture.hpp"
#include "telerag/answer.hpp"
#include "telerag/error.hpp"
#include "telerag/shuffle.hpp"

using namespace telerag;
using shuffle::Permutation;

namespace {

/// Wraps a mock and records every request.
class RecordingBackend : public backend::CompletionBackend {
public:
    explicit RecordingBackend(backend::MockCompletionBackend inner) : inner_(std::move(inner)) {}
    std::string id() const override { return "recording"; }
    mutable std::vector<std::size_t> batch_sizes;

protected:
    std::vector<std::string> do_complete(const backend::CompletionRequest& req) const override {
        batch_sizes.push_back(req.prompts.size());
        return inner_.complete(req);
    }

private:
    backend::MockCompletionBackend inner_;
};

backend::MockCompletionBackend truth_teller(const prompt::McqQuestion& q, double accuracy = 1.0, std::size_t slot = 1) {
    backend::MockCompletionBackend m;
    m.golds.push_back({q.text, q.options[*q.gold]});
    m.rules.push_back({backend::MockCompletionBackend::Rule::Kind::truth, slot, accuracy, "", ""});
    return m;
}

backend::MockCompletionBackend slot_biased(std::size_t slot) {
    backend::MockCompletionBackend m;
    m.rules.push_back({backend::MockCompletionBackend::Rule::Kind::always_slot, slot, 1.0, "", ""});
    return m;
}

/// Pearson statistic against a uniform expectation.
double chi_square(const std::vector<std::size_t>& counts) {
    double total = 0;
    for (auto c : counts) total += static_cast<double>(c);
    const double e = total / static_cast<double>(counts.size());
    double x = 0;
    for (auto c : counts) x += (static_cast<double>(c) - e) * (static_cast<double>(c) - e) / e;
    return x;
}

std::size_t perm_rank(const Permutation& p, const std::vector<Permutation>& all) {
    return static_cast<std::size_t>(std::find(all.begin(), all.end(), p) - all.begin());
}

}  // namespace

TEST(Factorial, Values) {
    EXPECT_EQ(shuffle::factorial(0), 1u);
    EXPECT_EQ(shuffle::factorial(4), 24u);
    EXPECT_EQ(shuffle::factorial(5), 120u);
    EXPECT_EQ(shuffle::factorial(20), 2432902008176640000ull);
    EXPECT_EQ(shuffle::factorial(30), UINT64_MAX);
}

TEST(AllPermutations, LexicographicAndComplete) {
    const auto all = shuffle::all_permutations(4);
    ASSERT_EQ(all.size(), 24u);
    EXPECT_TRUE(std::is_sorted(all.begin(), all.end()));
    EXPECT_EQ(std::set<Permutation>(all.begin(), all.end()).size(), 24u);
    for (const auto& p : all) EXPECT_TRUE(p.is_valid());
}

TEST(SamplePermutations, FourOptionsAllTwentyFour) {
    const auto s = shuffle::sample_permutations(4, 24, 1);
    EXPECT_EQ(s.size(), 24u);
    EXPECT_EQ(std::set<Permutation>(s.begin(), s.end()).size(), 24u);
    EXPECT_EQ(s, shuffle::all_permutations(4));
}

TEST(SamplePermutations, FiveOptionsCappedAt120) {
    for (std::size_t k : {120u, 121u, 500u}) {
        const auto s = shuffle::sample_permutations(5, k, 8);
        EXPECT_EQ(s.size(), 120u);
        EXPECT_EQ(std::set<Permutation>(s.begin(), s.end()).size(), 120u);
    }
}

TEST(SamplePermutations, SingleOption) {
    const auto s = shuffle::sample_permutations(1, 20, 3);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0], Permutation::identity(1));
}

TEST(SamplePermutations, ThreeOptionsTwoSamples) {
    const auto a = shuffle::sample_permutations(3, 2, 99);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_NE(a[0], a[1]);
    for (const auto& p : a) EXPECT_TRUE(p.is_valid());
    EXPECT_EQ(a, shuffle::sample_permutations(3, 2, 99));
}

TEST(SamplePermutations, EnumerationPathIsUniform) {
    // Each ordered pair of distinct permutations of 3 is equally likely; check
    // the first draw's marginal and the unordered pair distribution.
    const auto all = shuffle::all_permutations(3);
    std::vector<std::size_t> first(6, 0), pair(36, 0);
    for (std::uint64_t seed = 0; seed < 6000; ++seed) {
        const auto s = shuffle::sample_permutations(3, 2, seed);
        const auto r0 = perm_rank(s[0], all), r1 = perm_rank(s[1], all);
        ASSERT_LT(r0, 6u);
        ASSERT_LT(r1, 6u);
        ASSERT_NE(r0, r1);
        ++first[r0];
        ++pair[r0 * 6 + r1];
    }
    std::vector<std::size_t> ordered;
    for (std::size_t i = 0; i < 36; ++i)
        if (i / 6 != i % 6) ordered.push_back(pair[i]);
    EXPECT_LT(chi_square(first), 20.52);    // df 5, p = 0.001
    EXPECT_LT(chi_square(ordered), 59.70);  // df 29, p = 0.001
}

TEST(SamplePermutations, RejectionPathDistinctAndUniform) {
    // 7! = 5040 exceeds the enumeration threshold.
    std::vector<std::size_t> lead(7, 0);
    for (std::uint64_t seed = 0; seed < 700; ++seed) {
        const auto s = shuffle::sample_permutations(7, 20, seed);
        ASSERT_EQ(s.size(), 20u);
        ASSERT_EQ(std::set<Permutation>(s.begin(), s.end()).size(), 20u);
        for (const auto& p : s) {
            ASSERT_TRUE(p.is_valid());
            ++lead[p.mapping[0]];
        }
    }
    EXPECT_LT(chi_square(lead), 22.46);  // df 6, p = 0.001
    EXPECT_EQ(shuffle::sample_permutations(7, 20, 5), shuffle::sample_permutations(7, 20, 5));
}

TEST(SamplePermutations, Errors) {
    EXPECT_THROW(shuffle::sample_permutations(0, 1, 0), Error);
    EXPECT_THROW(shuffle::sample_permutations(3, 0, 0), Error);
}

TEST(MapBack, Examples) {
    EXPECT_EQ(shuffle::map_back(Permutation{{2, 0, 1}}, 0), 2u);
    for (std::size_t s = 0; s < 5; ++s) EXPECT_EQ(shuffle::map_back(Permutation::identity(5), s), s);
    EXPECT_THROW(shuffle::map_back(Permutation{{2, 0, 1}}, 3), Error);
}

TEST(MapBack, RoundTripOverAllPermutations) {
    for (const auto& p : shuffle::all_permutations(4)) {
        for (std::size_t c = 0; c < 4; ++c) {
            const auto slot = static_cast<std::size_t>(std::find(p.mapping.begin(), p.mapping.end(), c) - p.mapping.begin());
            EXPECT_EQ(shuffle::map_back(p, slot), c);
        }
    }
}

TEST(MajorityVote, Examples) {
    auto t = shuffle::majority_vote({0, 0, 1, 2}, 4);
    EXPECT_EQ(t.winner, 0u);
    EXPECT_FALSE(t.tied);
    t = shuffle::majority_vote({1, 1, 0, 0}, 4);
    EXPECT_EQ(t.winner, 0u);
    EXPECT_TRUE(t.tied);
    std::vector<std::size_t> votes(11, 2);
    for (int i = 0; i < 9; ++i) votes.push_back(i % 2);
    t = shuffle::majority_vote(votes, 4);
    EXPECT_EQ(t.winner, 2u);
    EXPECT_EQ(t.counts, (std::vector<std::size_t>{5, 4, 11, 0}));
    EXPECT_EQ(t.votes(), 20u);
}

TEST(MajorityVote, Errors) {
    EXPECT_THROW(shuffle::majority_vote({}, 4), Error);
    EXPECT_THROW(shuffle::majority_vote({0, 4}, 4), Error);
}

TEST(MajorityVote, InvariantUnderReordering) {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> votes(1 + rng() % 30);
        for (auto& v : votes) v = rng() % 5;
        const auto base = shuffle::majority_vote(votes, 5);
        std::shuffle(votes.begin(), votes.end(), rng);
        const auto again = shuffle::majority_vote(votes, 5);
        EXPECT_EQ(base.winner, again.winner);
        EXPECT_EQ(base.counts, again.counts);
        // Oracle: first index holding the maximum count.
        EXPECT_EQ(base.winner,
                  static_cast<std::size_t>(std::max_element(base.counts.begin(), base.counts.end()) - base.counts.begin()));
    }
}

TEST(AnswerWithShuffle, TruthTellerAlwaysWins) {
    auto q = fixture::golden_question();
    const auto mock = truth_teller(q);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        const auto out = shuffle::answer_with_shuffle(q, 20, seed, {&mock, {}, {}, 32, 0.0});
        EXPECT_EQ(out.tally.winner, *q.gold);
        EXPECT_EQ(out.tally.counts[*q.gold], 20u);
    }
}

TEST(AnswerWithShuffle, SlotBiasedAnswererIsSymmetricOverSeeds) {
    // Every slot-0 vote lands on whichever option the permutation put first,
    // so per-option vote totals and untied winners are uniform over seeds.
    // Tied tallies resolve to the lowest tied index, which is checked
    // separately rather than folded into the uniformity test.
    const auto q = fixture::golden_question();
    const auto mock = slot_biased(1);
    std::vector<std::size_t> untied(4, 0), votes(4, 0);
    for (std::uint64_t seed = 0; seed < 800; ++seed) {
        const auto t = shuffle::answer_with_shuffle(q, 20, seed, {&mock, {}, {}, 32, 0.0}).tally;
        for (std::size_t c = 0; c < 4; ++c) votes[c] += t.counts[c];
        const auto top = *std::max_element(t.counts.begin(), t.counts.end());
        const auto leaders = static_cast<std::size_t>(std::count(t.counts.begin(), t.counts.end(), top));
        EXPECT_EQ(t.tied, leaders > 1);
        EXPECT_EQ(t.winner, static_cast<std::size_t>(std::find(t.counts.begin(), t.counts.end(), top) - t.counts.begin()));
        if (!t.tied) ++untied[t.winner];
    }
    EXPECT_LT(chi_square(untied), 16.27);  // df 3, p = 0.001
    EXPECT_LT(chi_square(votes), 16.27);
}

TEST(AnswerWithShuffle, PromptsIssuedIsMinOfKAndFactorial) {
    const auto q4 = fixture::golden_question();
    for (const auto& [q, k, expected] : std::vector<std::tuple<prompt::McqQuestion, std::size_t, std::size_t>>{
             {q4, 1, 1}, {q4, 20, 20}, {q4, 24, 24}, {q4, 50, 24}}) {
        RecordingBackend rec(truth_teller(q));
        const auto out = shuffle::answer_with_shuffle(q, k, 3, {&rec, {}, {}, 32, 0.0});
        EXPECT_EQ(rec.batch_sizes, std::vector<std::size_t>{expected});
        EXPECT_EQ(out.tally.k, expected);
        EXPECT_EQ(out.diagnostics.permutations.size(), expected);
    }
}

TEST(AnswerWithShuffle, SinglePromptMatchesUnshuffledForUnbiasedAnswerer) {
    // A noisy but position-blind answerer: with k=1 the vote equals the
    // parsed answer of the single prompt mapped back.
    const auto q = fixture::golden_question();
    const auto mock = truth_teller(q, 0.5, 3);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        const auto out = shuffle::answer_with_shuffle(q, 1, seed, {&mock, {}, {}, 32, 0.0});
        const auto& perm = out.diagnostics.permutations.at(0);
        const auto slot = answer::parse_option_label(out.diagnostics.completions.at(0), 4);
        ASSERT_TRUE(slot);
        EXPECT_EQ(out.tally.winner, shuffle::map_back(perm, *slot));
    }
}

TEST(AnswerWithShuffle, UnparsableDroppedAndAllUnparsableThrows) {
    const auto q = fixture::golden_question();
    backend::MockCompletionBackend never;
    never.default_response = "I am not sure";
    try {
        shuffle::answer_with_shuffle(q, 5, 0, {&never, {}, {}, 32, 0.0});
        FAIL();
    } catch (const shuffle::NoParsableAnswers& e) {
        EXPECT_EQ(e.diagnostics.completions.size(), 5u);
        EXPECT_TRUE(e.diagnostics.canonical_votes.empty());
    }
}

TEST(AnswerWithShuffle, ShuffleBeatsNoShuffleForBiasedAnswerer) {
    // Noisy truth-teller that falls back to slot 1 when wrong; gold sits at
    // canonical index 1. Without shuffling, wrong answers land on slot 1 too.
    std::vector<prompt::McqQuestion> qs;
    for (int i = 0; i < 60; ++i) {
        auto q = fixture::golden_question();
        q.question_id = "q" + std::to_string(i);
        q.text = "Question number " + std::to_string(i) + " about registration?";
        q.gold = static_cast<std::size_t>(i % 4);
        qs.push_back(q);
    }
    backend::MockCompletionBackend m;
    for (const auto& q : qs) m.golds.push_back({q.text, q.options[*q.gold]});
    m.rules.push_back({backend::MockCompletionBackend::Rule::Kind::truth, 1, 0.6, "", ""});
    std::size_t plain = 0, shuffled = 0;
    for (const auto& q : qs) {
        const auto p = prompt::build_phi2_prompt(q, {}, {}, {});
        const auto c = m.complete({{p.rendered}, 32, 0.0, std::nullopt, ""});
        const auto slot = answer::parse_option_label(c.at(0), 4);
        plain += slot && *slot == *q.gold;
        shuffled += shuffle::answer_with_shuffle(q, 20, 0, {&m, {}, {}, 32, 0.0}).tally.winner == *q.gold;
    }
    EXPECT_GE(shuffled, plain);
}

TEST(EpochShuffle, DeterministicAndGoldTracksText) {
    std::vector<prompt::McqQuestion> qs;
    for (int i = 0; i < 25; ++i) {
        auto q = fixture::golden_question();
        q.question_id = "e" + std::to_string(i);
        q.gold = static_cast<std::size_t>(i % 4);
        qs.push_back(q);
    }
    const auto e0 = shuffle::epoch_shuffle(qs, 0, 11);
    const auto e1 = shuffle::epoch_shuffle(qs, 1, 11);
    ASSERT_EQ(e0.size(), qs.size());
    bool any_diff = false;
    for (std::size_t i = 0; i < qs.size(); ++i) {
        for (const auto* e : {&e0, &e1}) {
            const auto& s = (*e)[i];
            EXPECT_TRUE(s.order.is_valid());
            EXPECT_EQ(s.question.options[*s.question.gold], qs[i].options[*qs[i].gold]);
            for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(s.question.options[j], qs[i].options[s.order.mapping[j]]);
            EXPECT_EQ(s.question.text, qs[i].text);
        }
        any_diff |= e0[i].order != e1[i].order;
    }
    EXPECT_TRUE(any_diff);
    const auto again = shuffle::epoch_shuffle(qs, 1, 11);
    for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(again[i].order, e1[i].order);
}

TEST(EpochShuffle, IndependentOfRecordOrder) {
    std::vector<prompt::McqQuestion> qs;
    for (int i = 0; i < 10; ++i) {
        auto q = fixture::golden_question();
        q.question_id = "o" + std::to_string(i);
        qs.push_back(q);
    }
    const auto fwd = shuffle::epoch_shuffle(qs, 2, 4);
    std::reverse(qs.begin(), qs.end());
    const auto rev = shuffle::epoch_shuffle(qs, 2, 4);
    for (std::size_t i = 0; i < qs.size(); ++i) EXPECT_EQ(fwd[i].order, rev[qs.size() - 1 - i].order);
}
