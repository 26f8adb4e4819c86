#include "telerag/prompt.hpp"

#include <numeric>

#include "telerag/error.hpp"

namespace telerag::prompt {

void McqQuestion::validate() const {
    if (options.size() < 2 || options.size() > 5) {
        throw Error("dataset", "question '" + question_id + "' has " + std::to_string(options.size()) +
                                   " options; expected 2 to 5");
    }
    if (gold && *gold >= options.size()) {
        throw Error("dataset", "question '" + question_id + "' has gold index out of range");
    }
}

std::string_view to_string(Style s) { return s == Style::phi2_mcq ? "phi2_mcq" : "falcon_free"; }

std::string render_abbrev_block(const std::vector<abbrev::Detection>& detections) {
    std::string out;
    for (const auto& d : detections) {
        if (!d.expansion) continue;
        if (!out.empty()) out += '\n';
        out += d.token + ": " + *d.expansion;
    }
    return out;
}

namespace {

// Shared middle section: abbreviations (if any) and the context list.
void append_abbrevs_and_contexts(std::string& out, const std::vector<abbrev::Detection>& abbrevs,
                                 const retrieval::Context& contexts) {
    if (const auto block = render_abbrev_block(abbrevs); !block.empty()) {
        out += "Abbreviations:\n";
        out += block;
        out += "\n\n";
    }
    out += kContextHeader;
    out += '\n';
    for (std::size_t i = 0; i < contexts.entries.size(); ++i) {
        out += "context " + std::to_string(i + 1) + ": " + contexts.entries[i].text + '\n';
    }
    out += '\n';
}

}  // namespace

PromptText build_phi2_prompt(const McqQuestion& q, const std::vector<std::size_t>& option_order,
                             const std::vector<abbrev::Detection>& abbrevs, const retrieval::Context& contexts) {
    if (q.options.empty()) throw Error("prompt", "question '" + q.question_id + "' has no options");
    std::vector<std::size_t> order = option_order;
    if (order.empty()) {
        order.resize(q.options.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
    }
    if (order.size() != q.options.size()) throw Error("prompt", "option order is not a permutation of the options");
    std::vector<bool> used(order.size(), false);
    for (auto c : order) {
        if (c >= order.size() || used[c]) throw Error("prompt", "option order is not a permutation of the options");
        used[c] = true;
    }

    std::string out = "Instruct: " + q.text + "\n\n";
    append_abbrevs_and_contexts(out, abbrevs, contexts);
    out += q.text + '\n';
    for (std::size_t slot = 0; slot < order.size(); ++slot) {
        out += "option " + std::to_string(slot + 1) + ": " + q.options[order[slot]] + '\n';
    }
    out += kOutputCue;
    return {std::move(out), Style::phi2_mcq, std::move(order)};
}

PromptText build_falcon_prompt(const McqQuestion& q, const std::vector<abbrev::Detection>& abbrevs,
                               const retrieval::Context& contexts) {
    std::string out(kFalconPreamble);
    out += "\n\n" + q.text + "\n\n";
    append_abbrevs_and_contexts(out, abbrevs, contexts);
    out += q.text + '\n';
    std::vector<std::size_t> order(q.options.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    return {std::move(out), Style::falcon_free, std::move(order)};
}

}  // namespace telerag::prompt
