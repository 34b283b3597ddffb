#include "tracetune/suggestions.hpp"

#include "tracetune/refinement.hpp"

#include <json.hpp>

#include <algorithm>

namespace tracetune {

std::string_view to_string(SuggestionKind k) {
    switch (k) {
    case SuggestionKind::Global: return "global";
    case SuggestionKind::LabelBased: return "label_based";
    case SuggestionKind::Expanded: return "expanded";
    }
    return "?";
}

SuggestionKind suggestion_kind_from_string(std::string_view s) {
    for (auto k : {SuggestionKind::Global, SuggestionKind::LabelBased, SuggestionKind::Expanded}) {
        if (to_string(k) == s) return k;
    }
    throw Error(ErrorCode::InvalidArgument, "suggestion kind must be global, label_based or expanded", std::string(s));
}

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

/// Parses {"suggestions": [...]} where entries are strings or
/// {"tag","text"} objects. Unparseable output yields no items.
std::vector<Suggestion> parse_items(const std::string& raw) {
    std::vector<Suggestion> out;
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(strip_code_fence(raw));
    } catch (const nlohmann::json::parse_error&) {
        return out;
    }
    const nlohmann::json* list = &doc;
    if (doc.is_object()) {
        auto it = doc.find("suggestions");
        if (it == doc.end()) return out;
        list = &*it;
    }
    if (!list->is_array()) return out;
    for (const auto& item : *list) {
        if (item.is_string()) {
            out.push_back({trim(item.get<std::string>()), ""});
        } else if (item.is_object() && item.contains("text") && item["text"].is_string()) {
            out.push_back({trim(item["text"].get<std::string>()), item.value("tag", "")});
        }
    }
    return out;
}

struct Bucket {
    std::string tag;
    std::size_t want;
    std::vector<Suggestion> items;
};

/// Add `incoming` to the buckets, dropping empties, duplicates (by
/// case-folded text, across buckets) and items whose tag has no bucket.
void absorb(std::vector<Bucket>& buckets, const std::vector<Suggestion>& incoming) {
    auto seen = [&](const std::string& key) {
        for (const auto& b : buckets) {
            for (const auto& s : b.items) {
                if (normalize_label(s.text) == key) return true;
            }
        }
        return false;
    };
    const bool untagged = buckets.size() == 1 && buckets.front().tag.empty();
    for (const auto& s : incoming) {
        if (s.text.empty() || seen(normalize_label(s.text))) continue;
        if (untagged) {
            buckets.front().items.push_back({s.text, ""});
            continue;
        }
        for (auto& b : buckets) {
            if (b.tag == s.tag) {
                b.items.push_back(s);
                break;
            }
        }
    }
}

bool satisfied(const std::vector<Bucket>& buckets) {
    return std::all_of(buckets.begin(), buckets.end(), [](const Bucket& b) { return b.items.size() >= b.want; });
}

std::vector<Suggestion> collect(TextProvider& text, const TemplateSet& templates, const std::string& template_id,
                                const std::map<std::string, std::string>& vars, std::vector<Bucket> buckets) {
    const std::string first = call_text(text, templates, template_id, vars);
    absorb(buckets, parse_items(first));
    if (!satisfied(buckets)) {
        std::string problem;
        for (const auto& b : buckets) {
            problem += "expected " + std::to_string(b.want) + (b.tag.empty() ? "" : " '" + b.tag + "'") +
                       " distinct suggestions, got " + std::to_string(b.items.size()) + "; ";
        }
        const std::string correction =
            templates.render(tmpl::kSchemaCorrection, {{"error", problem}, {"previous", first}});
        absorb(buckets, parse_items(call_text(text, templates, template_id, vars, correction)));
        if (!satisfied(buckets)) {
            throw Error(ErrorCode::SchemaViolation, "too few distinct suggestions after one retry", template_id);
        }
    }
    std::vector<Suggestion> out;
    for (auto& b : buckets) {
        b.items.resize(b.want);
        out.insert(out.end(), b.items.begin(), b.items.end());
    }
    return out;
}

} // namespace

Suggester::Suggester(std::shared_ptr<TextProvider> text, TemplateSet templates)
    : text_(std::move(text)), templates_(std::move(templates)) {}

SuggestionSet Suggester::suggest_global(const StructuredPrompt& p) {
    SuggestionSet set;
    set.kind = SuggestionKind::Global;
    set.provenance.prompt_digest = prompt_digest(p);
    set.items = collect(*text_, templates_, tmpl::kSuggestGlobal,
                        {{"prompt", serialize_structured_prompt(p)}, {"count", std::to_string(kGlobalSuggestionCount)}},
                        {{"", kGlobalSuggestionCount, {}}});
    return set;
}

SuggestionSet Suggester::suggest_for_label(const StructuredPrompt& p, const std::string& label) {
    const auto seg = segment_for_label(p, label);
    SuggestionSet set;
    set.kind = SuggestionKind::LabelBased;
    set.provenance.prompt_digest = prompt_digest(p);
    set.provenance.label = seg.element.label;
    set.items = collect(*text_, templates_, tmpl::kSuggestLabel,
                        {{"prompt", serialize_structured_prompt(p)},
                         {"label", seg.element.label},
                         {"segment", seg.element.description}},
                        {{"refine", kLabelRefineCount, {}}, {"replace", kLabelReplaceCount, {}}});
    return set;
}

SuggestionSet Suggester::suggest_expanded(const StructuredPrompt& p, const std::optional<std::string>& label,
                                          const std::string& user_input) {
    if (trim(user_input).empty()) throw Error(ErrorCode::InvalidArgument, "user input is empty", "input");
    SuggestionSet set;
    set.kind = SuggestionKind::Expanded;
    set.provenance.prompt_digest = prompt_digest(p);
    set.provenance.user_input = trim(user_input);
    std::string label_text = "none";
    std::string segment = "whole scene";
    if (label) {
        const auto seg = segment_for_label(p, *label);
        set.provenance.label = seg.element.label;
        label_text = seg.element.label;
        segment = seg.element.description;
    }
    set.items = collect(*text_, templates_, tmpl::kSuggestExpanded,
                        {{"prompt", serialize_structured_prompt(p)},
                         {"label", label_text},
                         {"segment", segment},
                         {"input", trim(user_input)},
                         {"count", std::to_string(kExpandedSuggestionCount)}},
                        {{"", kExpandedSuggestionCount, {}}});
    return set;
}

} // namespace tracetune
