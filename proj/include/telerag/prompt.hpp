#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "telerag/abbrev.hpp"
#include "telerag/retrieval.hpp"

namespace telerag::prompt {

struct McqQuestion {
    std::string question_id;
    std::string text;
    std::vector<std::string> options;  // canonical order, 2..5 entries
    std::optional<std::size_t> gold;   // canonical index
    std::string category;

    /// Throws if the option count or gold index is out of range.
    void validate() const;
};

enum class Style { phi2_mcq, falcon_free };

std::string_view to_string(Style s);

struct PromptText {
    std::string rendered;
    Style style = Style::phi2_mcq;
    /// Slot j shows canonical option option_order[j]. Identity when unshuffled.
    std::vector<std::size_t> option_order;
};

inline constexpr std::string_view kOutputCue = "Output :";
inline constexpr std::string_view kContextHeader = "Considering the following retrieved contexts";
inline constexpr std::string_view kFalconPreamble =
    "Youre a Telecommunication standards expert. Please answer the question first consider the given context "
    "for the answer.";

/// "token: expansion" per expanded detection, newline separated, input
/// order. Empty when nothing is expanded.
std::string render_abbrev_block(const std::vector<abbrev::Detection>& detections);

/// Instruction-style prompt with the question before and after the retrieved
/// contexts and the options in `option_order` (slot -> canonical index).
/// An empty `option_order` means identity.
PromptText build_phi2_prompt(const McqQuestion& q, const std::vector<std::size_t>& option_order,
                             const std::vector<abbrev::Detection>& abbrevs, const retrieval::Context& contexts);

/// Free-answer prompt: no options and no output cue.
PromptText build_falcon_prompt(const McqQuestion& q, const std::vector<abbrev::Detection>& abbrevs,
                               const retrieval::Context& contexts);

}  // namespace telerag::prompt
