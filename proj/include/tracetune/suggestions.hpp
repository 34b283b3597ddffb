#pragma once

#include "tracetune/prompt.hpp"
#include "tracetune/providers.hpp"

#include <optional>
#include <string>
#include <vector>

namespace tracetune {

enum class SuggestionKind { Global, LabelBased, Expanded };

std::string_view to_string(SuggestionKind k);
SuggestionKind suggestion_kind_from_string(std::string_view s);

inline constexpr std::size_t kGlobalSuggestionCount = 5;
inline constexpr std::size_t kLabelRefineCount = 3;
inline constexpr std::size_t kLabelReplaceCount = 3;
inline constexpr std::size_t kExpandedSuggestionCount = 5;

struct Suggestion {
    std::string text;
    std::string tag; ///< "refine" / "replace" for label-based sets, empty otherwise

    bool operator==(const Suggestion&) const = default;
};

struct SuggestionProvenance {
    std::string prompt_digest;
    std::optional<std::string> label;
    std::optional<std::string> user_input;

    bool operator==(const SuggestionProvenance&) const = default;
};

struct SuggestionSet {
    SuggestionKind kind = SuggestionKind::Global;
    std::vector<Suggestion> items;
    SuggestionProvenance provenance;

    bool operator==(const SuggestionSet&) const = default;
};

/// Suggestions are text for the user; applying one means sending it back as
/// a refinement instruction. Counts are enforced here: duplicates are
/// dropped, a deficit triggers one retry whose new items top up the set,
/// surplus is truncated, and a remaining deficit is a SchemaViolation.
class Suggester {
public:
    Suggester(std::shared_ptr<TextProvider> text, TemplateSet templates);

    SuggestionSet suggest_global(const StructuredPrompt& p);
    SuggestionSet suggest_for_label(const StructuredPrompt& p, const std::string& label);
    SuggestionSet suggest_expanded(const StructuredPrompt& p, const std::optional<std::string>& label,
                                   const std::string& user_input);

private:
    std::shared_ptr<TextProvider> text_;
    TemplateSet templates_;
};

} // namespace tracetune
