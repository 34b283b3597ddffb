#include "tracetune/prompt.hpp"

#include "tracetune/digest.hpp"
#include "tracetune/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>
#include <unordered_set>

namespace tracetune {

using ordered_json = nlohmann::ordered_json;

std::string_view to_string(Category c) {
    switch (c) {
    case Category::Theme: return "theme";
    case Category::ArtStyle: return "art_style";
    case Category::Content: return "content";
    case Category::Lighting: return "lighting";
    case Category::Color: return "color";
    case Category::ShotAngle: return "shot_angle";
    }
    return "?";
}

std::string normalize_label(std::string_view label) {
    auto is_space = [](unsigned char ch) { return std::isspace(ch) != 0; };
    std::size_t b = 0;
    std::size_t e = label.size();
    while (b < e && is_space(static_cast<unsigned char>(label[b]))) ++b;
    while (e > b && is_space(static_cast<unsigned char>(label[e - 1]))) --e;
    std::string out(label.substr(b, e - b));
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
    return out;
}

const std::string& StructuredPrompt::category_text(Category c) const {
    switch (c) {
    case Category::Theme: return theme;
    case Category::ArtStyle: return art_style;
    case Category::Lighting: return lighting;
    case Category::Color: return color;
    case Category::ShotAngle: return shot_angle;
    case Category::Content: break;
    }
    throw Error(ErrorCode::InvalidArgument, "content is not a text category");
}

std::string& StructuredPrompt::category_text(Category c) {
    return const_cast<std::string&>(std::as_const(*this).category_text(c));
}

const ContentElement* StructuredPrompt::find(std::string_view label) const {
    const std::string key = normalize_label(label);
    for (const auto& e : content) {
        if (normalize_label(e.label) == key) return &e;
    }
    return nullptr;
}

std::vector<std::string> StructuredPrompt::labels() const {
    std::vector<std::string> out;
    out.reserve(content.size());
    for (const auto& e : content) out.push_back(e.label);
    return out;
}

std::size_t LabelTree::size() const {
    std::size_t n = 0;
    std::vector<const LabelNode*> stack;
    for (const auto& r : roots) stack.push_back(&r);
    while (!stack.empty()) {
        const LabelNode* node = stack.back();
        stack.pop_back();
        ++n;
        for (const auto& c : node->children) stack.push_back(&c);
    }
    return n;
}

void validate(const StructuredPrompt& p) {
    if (p.content.empty()) throw Error(ErrorCode::EmptyContent, "content has no elements", "content");

    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < p.content.size(); ++i) {
        const std::string key = normalize_label(p.content[i].label);
        if (key.empty()) {
            throw Error(ErrorCode::MalformedDocument, "content element has an empty label",
                        "content[" + std::to_string(i) + "]");
        }
        if (!index.emplace(key, i).second) {
            throw Error(ErrorCode::DuplicateLabel, "label appears more than once", key);
        }
    }

    std::vector<std::optional<std::size_t>> parent(p.content.size());
    for (std::size_t i = 0; i < p.content.size(); ++i) {
        const auto& pl = p.content[i].parent_label;
        if (!pl) continue;
        auto it = index.find(normalize_label(*pl));
        if (it == index.end()) {
            throw Error(ErrorCode::UnknownLabel, "parent label does not name a content element", *pl);
        }
        parent[i] = it->second;
    }

    // Walk each parent chain; a chain longer than the element count revisits a node.
    for (std::size_t i = 0; i < p.content.size(); ++i) {
        std::optional<std::size_t> cur = parent[i];
        std::size_t steps = 0;
        while (cur) {
            if (*cur == i || ++steps > p.content.size()) {
                throw Error(ErrorCode::CyclicParent, "parent links form a cycle",
                            p.content[i].label);
            }
            cur = parent[*cur];
        }
    }
}

namespace {

const std::string& require_string(const ordered_json& doc, std::string_view key, Category c) {
    auto it = doc.find(key);
    if (it == doc.end()) {
        throw Error(ErrorCode::MissingCategory, "category is absent", std::string(to_string(c)));
    }
    if (!it->is_string()) {
        throw Error(ErrorCode::MalformedDocument, "category must be a string", std::string(key));
    }
    return it->get_ref<const std::string&>();
}

ContentElement parse_element(const ordered_json& j, std::size_t i) {
    const std::string where = "content[" + std::to_string(i) + "]";
    if (!j.is_object()) throw Error(ErrorCode::MalformedDocument, "element must be an object", where);
    for (const auto& [k, v] : j.items()) {
        if (k != "label" && k != "description" && k != "parent") {
            throw Error(ErrorCode::MalformedDocument, "unknown element field", where + "." + k);
        }
    }
    ContentElement e;
    auto get = [&](const char* key) -> std::string {
        auto it = j.find(key);
        if (it == j.end() || !it->is_string()) {
            throw Error(ErrorCode::MalformedDocument, "element field must be a string",
                        where + "." + key);
        }
        return it->get<std::string>();
    };
    e.label = get("label");
    e.description = get("description");
    if (auto it = j.find("parent"); it != j.end() && !it->is_null()) {
        if (!it->is_string()) {
            throw Error(ErrorCode::MalformedDocument, "parent must be a string", where + ".parent");
        }
        e.parent_label = it->get<std::string>();
    }
    return e;
}

} // namespace

StructuredPrompt parse_structured_prompt(std::string_view document) {
    ordered_json doc;
    try {
        doc = ordered_json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedDocument, "not a JSON document", e.what());
    }
    if (!doc.is_object()) throw Error(ErrorCode::MalformedDocument, "prompt must be a JSON object");

    static const std::unordered_set<std::string> kKnown{
        "schema", "theme", "art_style", "content", "lighting", "color", "shot_angle"};
    for (const auto& [k, v] : doc.items()) {
        if (!kKnown.contains(k)) throw Error(ErrorCode::MalformedDocument, "unknown field", k);
    }
    if (auto it = doc.find("schema"); it == doc.end() || *it != kPromptSchema) {
        throw Error(ErrorCode::MalformedDocument, "schema must be tracetune/prompt/v1", "schema");
    }

    StructuredPrompt p;
    for (Category c : kAllCategories) {
        if (c == Category::Content) continue;
        p.category_text(c) = require_string(doc, to_string(c), c);
    }
    auto content = doc.find("content");
    if (content == doc.end()) {
        throw Error(ErrorCode::MissingCategory, "category is absent", "content");
    }
    if (!content->is_array()) throw Error(ErrorCode::MalformedDocument, "content must be an array", "content");
    for (std::size_t i = 0; i < content->size(); ++i) p.content.push_back(parse_element((*content)[i], i));

    validate(p);
    return p;
}

std::string serialize_structured_prompt(const StructuredPrompt& p) {
    ordered_json doc;
    doc["schema"] = kPromptSchema;
    doc["theme"] = p.theme;
    doc["art_style"] = p.art_style;
    ordered_json content = ordered_json::array();
    for (const auto& e : p.content) {
        ordered_json el;
        el["label"] = e.label;
        el["description"] = e.description;
        if (e.parent_label) el["parent"] = *e.parent_label;
        content.push_back(std::move(el));
    }
    doc["content"] = std::move(content);
    doc["lighting"] = p.lighting;
    doc["color"] = p.color;
    doc["shot_angle"] = p.shot_angle;
    return doc.dump(2);
}

LabelTree derive_label_tree(const StructuredPrompt& p) {
    std::unordered_map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < p.content.size(); ++i) index.emplace(normalize_label(p.content[i].label), i);

    std::vector<std::vector<std::size_t>> children(p.content.size());
    std::vector<std::size_t> roots;
    for (std::size_t i = 0; i < p.content.size(); ++i) {
        const auto& pl = p.content[i].parent_label;
        auto it = pl ? index.find(normalize_label(*pl)) : index.end();
        if (it == index.end()) {
            roots.push_back(i);
        } else {
            children[it->second].push_back(i);
        }
    }

    auto build = [&](auto&& self, std::size_t i) -> LabelNode {
        LabelNode node{p.content[i].label, {}};
        for (std::size_t c : children[i]) node.children.push_back(self(self, c));
        return node;
    };
    LabelTree tree;
    for (std::size_t r : roots) tree.roots.push_back(build(build, r));
    return tree;
}

SegmentLookup segment_for_label(const StructuredPrompt& p, std::string_view label) {
    const ContentElement* e = p.find(label);
    if (!e) throw Error(ErrorCode::UnknownLabel, "label not in prompt", std::string(label));
    SegmentLookup out{*e, {}};
    const ContentElement* cur = e;
    std::size_t guard = 0;
    while (cur->parent_label && guard++ < p.content.size()) {
        cur = p.find(*cur->parent_label);
        if (!cur) break;
        out.ancestors.push_back(cur->label);
    }
    std::reverse(out.ancestors.begin(), out.ancestors.end());
    return out;
}

PromptDiff diff_prompts(const StructuredPrompt& before, const StructuredPrompt& after) {
    PromptDiff d;
    for (Category c : kAllCategories) {
        if (c == Category::Content) {
            if (before.content != after.content) d.changed_categories.insert(c);
        } else if (before.category_text(c) != after.category_text(c)) {
            d.changed_categories.insert(c);
        }
    }
    std::map<std::string, const ContentElement*> b;
    std::map<std::string, const ContentElement*> a;
    for (const auto& e : before.content) b.emplace(normalize_label(e.label), &e);
    for (const auto& e : after.content) a.emplace(normalize_label(e.label), &e);
    for (const auto& [key, e] : b) {
        auto it = a.find(key);
        if (it == a.end()) {
            d.removed_labels.insert(e->label);
        } else if (!(*it->second == *e)) {
            d.changed_labels.insert(it->second->label);
        }
    }
    for (const auto& [key, e] : a) {
        if (!b.contains(key)) d.added_labels.insert(e->label);
    }
    return d;
}

std::string render_prompt_text(const StructuredPrompt& p) {
    std::string out = p.theme;
    auto add = [&out](std::string_view prefix, const std::string& text) {
        if (text.empty()) return;
        if (!out.empty()) out += ". ";
        out += prefix;
        out += text;
    };
    add("Art style: ", p.art_style);
    for (const auto& e : p.content) add("", e.description);
    add("Lighting: ", p.lighting);
    add("Color: ", p.color);
    add("Shot angle: ", p.shot_angle);
    return out;
}

std::string prompt_digest(const StructuredPrompt& p) {
    return sha256_hex(serialize_structured_prompt(p));
}

} // namespace tracetune
