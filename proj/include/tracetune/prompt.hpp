#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace tracetune {

inline constexpr std::string_view kPromptSchema = "tracetune/prompt/v1";

enum class Category { Theme, ArtStyle, Content, Lighting, Color, ShotAngle };

inline constexpr std::array<Category, 6> kAllCategories{
    Category::Theme, Category::ArtStyle, Category::Content,
    Category::Lighting, Category::Color, Category::ShotAngle};

std::string_view to_string(Category c);

/// One labeled element of the content category. The label is the unit of
/// selection and refinement; `description` is the prompt segment it owns.
struct ContentElement {
    std::string label;
    std::string description;
    std::optional<std::string> parent_label;

    bool operator==(const ContentElement&) const = default;
};

/// A generation prompt split into the six fixed categories. Only `content`
/// carries labeled elements; the rest are opaque text.
struct StructuredPrompt {
    std::string theme;
    std::string art_style;
    std::vector<ContentElement> content;
    std::string lighting;
    std::string color;
    std::string shot_angle;

    bool operator==(const StructuredPrompt&) const = default;

    const std::string& category_text(Category c) const;
    std::string& category_text(Category c);

    /// Case-folded, trimmed lookup. Returns nullptr when absent.
    const ContentElement* find(std::string_view label) const;
    std::vector<std::string> labels() const;
};

struct LabelNode {
    std::string label;
    std::vector<LabelNode> children;

    bool operator==(const LabelNode&) const = default;
};

struct LabelTree {
    std::vector<LabelNode> roots;

    std::size_t size() const;
    bool operator==(const LabelTree&) const = default;
};

struct SegmentLookup {
    ContentElement element;
    std::vector<std::string> ancestors; ///< root first, excluding the element
};

struct PromptDiff {
    std::set<Category> changed_categories;
    std::set<std::string> changed_labels;
    std::set<std::string> added_labels;
    std::set<std::string> removed_labels;

    bool empty() const {
        return changed_categories.empty() && changed_labels.empty() && added_labels.empty() &&
               removed_labels.empty();
    }
    bool operator==(const PromptDiff&) const = default;
};

/// Trim surrounding whitespace and ASCII-lowercase. Label identity is
/// equality of normalized forms.
std::string normalize_label(std::string_view label);

/// Throws tracetune::Error (MissingCategory, EmptyContent, DuplicateLabel,
/// CyclicParent, UnknownLabel for a dangling parent, MalformedDocument).
void validate(const StructuredPrompt& p);

StructuredPrompt parse_structured_prompt(std::string_view document);
std::string serialize_structured_prompt(const StructuredPrompt& p);

LabelTree derive_label_tree(const StructuredPrompt& p);
SegmentLookup segment_for_label(const StructuredPrompt& p, std::string_view label);
PromptDiff diff_prompts(const StructuredPrompt& before, const StructuredPrompt& after);

/// Flattened text handed to the image-generation provider.
std::string render_prompt_text(const StructuredPrompt& p);

/// SHA-256 of the canonical serialization.
std::string prompt_digest(const StructuredPrompt& p);

} // namespace tracetune
