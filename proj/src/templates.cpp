#include "tracetune/templates.hpp"

#include "tracetune/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace tracetune {

namespace {

constexpr const char* kSchemaRules =
    "Reply with a single JSON object and nothing else. It must have exactly these keys: "
    "\"schema\" (always \"tracetune/prompt/v1\"), \"theme\", \"art_style\", \"content\", "
    "\"lighting\", \"color\", \"shot_angle\". Every key except content is a string. content is an "
    "array of {{\"label\": short noun phrase, \"description\": the prompt text for that element, "
    "\"parent\": optional label of an enclosing element}}. Labels are unique.";

std::string with_rules(const std::string& body) { return body + "\n\n" + kSchemaRules; }

} // namespace

TemplateSet TemplateSet::defaults() {
    TemplateSet t;
    t.id_ = "default";
    t.canonical_ = false;
    t.templates_[tmpl::kBrainstorm] = with_rules(
        "You expand a short design request into a detailed image-generation prompt for environment "
        "concept art. Split the prompt into theme, art style, content, lighting, color and shot angle. "
        "List each visible element of the scene as its own content entry.\n\nRequest: {input}");
    t.templates_[tmpl::kGlobalRefine] = with_rules(
        "Rewrite the structured prompt below to apply the instruction to the whole image. Change any "
        "category the instruction calls for and keep the rest.\n\nPrompt:\n{prompt}\n\n"
        "Instruction: {instruction}");
    t.templates_[tmpl::kPromptRefine] = with_rules(
        "The user selected the element labeled \"{label}\", described as: {segment}\n"
        "Apply the instruction to that element only. You may replace the element (new label) or add "
        "an element that the change requires for the scene to stay coherent. Leave every other "
        "category and element exactly as it is.\n\nPrompt:\n{prompt}\n\nInstruction: {instruction}");
    t.templates_[tmpl::kInpaintPrompt] =
        "Write a single image-generation prompt for repainting only the region labeled \"{label}\" "
        "(currently: {segment}) according to the instruction. Keep the art style, lighting and color of "
        "the scene so the region blends in. Reply with the prompt text only.\n\nScene prompt:\n{prompt}\n\n"
        "Instruction: {instruction}";
    t.templates_[tmpl::kInpaintMerge] = with_rules(
        "A region of the image generated from the prompt below was repainted with the region prompt. "
        "Produce the structured prompt that describes the new image: update the element that was "
        "repainted, or add new elements for new content, and keep all other elements.\n\nPrompt:\n{prompt}"
        "\n\nRegion prompt: {region_prompt}");
    t.templates_[tmpl::kSuggestGlobal] =
        "Suggest {count} different refinement instructions for the image generated from this prompt. "
        "Each suggestion changes the content, the lighting or the atmosphere of the whole scene. Reply "
        "with JSON: {{\"suggestions\": [\"...\"]}}\n\nPrompt:\n{prompt}";
    t.templates_[tmpl::kSuggestLabel] =
        "The user selected the element labeled \"{label}\", described as: {segment}\nSuggest 3 "
        "instructions that refine this element and 3 that replace it with something else. Reply with "
        "JSON: {{\"suggestions\": [{{\"tag\": \"refine\" or \"replace\", \"text\": \"...\"}}]}}\n\n"
        "Prompt:\n{prompt}";
    t.templates_[tmpl::kSuggestExpanded] =
        "Complete the user's partial instruction \"{input}\" into {count} specific refinement "
        "instructions. Selected element: \"{label}\" ({segment}). If no element is selected, the "
        "instructions apply to the whole scene. Reply with JSON: {{\"suggestions\": [\"...\"]}}\n\n"
        "Prompt:\n{prompt}";
    t.templates_[tmpl::kSchemaCorrection] =
        "Your previous reply could not be used: {error}\nPrevious reply:\n{previous}\n"
        "Answer again and follow the required format exactly.";
    t.templates_[tmpl::kLabelQuery] = "The bright part is a segmentation of {label}";
    return t;
}

TemplateSet TemplateSet::parse(std::string_view document) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedConfig, "template file is not JSON", e.what());
    }
    if (!doc.is_object() || doc.value("schema", "") != kTemplateSchema) {
        throw Error(ErrorCode::MalformedConfig, "template file schema must be tracetune/templates/v1");
    }
    auto it = doc.find("templates");
    if (it == doc.end() || !it->is_object()) {
        throw Error(ErrorCode::MalformedConfig, "template file needs a templates object");
    }
    // Missing ids fall back to the built-in text.
    TemplateSet t = defaults();
    t.id_ = doc.value("set", "custom");
    t.canonical_ = doc.value("canonical", false);
    for (const auto& [name, value] : it->items()) {
        if (value.is_string()) {
            t.templates_[name] = value.get<std::string>();
        } else if (value.is_array()) {
            std::string joined;
            for (std::size_t i = 0; i < value.size(); ++i) {
                if (!value[i].is_string()) {
                    throw Error(ErrorCode::MalformedConfig, "template lines must be strings", name);
                }
                if (i) joined += '\n';
                joined += value[i].get<std::string>();
            }
            t.templates_[name] = std::move(joined);
        } else {
            throw Error(ErrorCode::MalformedConfig, "template must be a string or array of lines", name);
        }
    }
    return t;
}

TemplateSet TemplateSet::load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedConfig, "cannot read template file", path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse(ss.str());
}

std::string TemplateSet::to_document() const {
    nlohmann::ordered_json doc;
    doc["schema"] = kTemplateSchema;
    doc["set"] = id_;
    doc["canonical"] = canonical_;
    nlohmann::ordered_json ts = nlohmann::ordered_json::object();
    for (const auto& [name, text] : templates_) ts[name] = text;
    doc["templates"] = std::move(ts);
    return doc.dump(2) + "\n";
}

const std::string& TemplateSet::raw(const std::string& name) const {
    auto it = templates_.find(name);
    if (it == templates_.end()) throw Error(ErrorCode::MalformedConfig, "unknown template", name);
    return it->second;
}

std::string TemplateSet::render(const std::string& name,
                                const std::map<std::string, std::string>& vars) const {
    try {
        return render_template(raw(name), vars);
    } catch (const Error& e) {
        throw Error(e.code(), std::string("template ") + name + ": " + e.what(), e.detail());
    }
}

std::string render_template(std::string_view text, const std::map<std::string, std::string>& vars) {
    std::string out;
    out.reserve(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '{' && i + 1 < text.size() && text[i + 1] == '{') {
            out += '{';
            ++i;
        } else if (c == '}' && i + 1 < text.size() && text[i + 1] == '}') {
            out += '}';
            ++i;
        } else if (c == '{') {
            const std::size_t close = text.find('}', i);
            if (close == std::string_view::npos) {
                throw Error(ErrorCode::MalformedConfig, "unterminated placeholder");
            }
            const std::string key(text.substr(i + 1, close - i - 1));
            auto it = vars.find(key);
            if (it == vars.end()) throw Error(ErrorCode::MalformedConfig, "no value for placeholder", key);
            out += it->second;
            i = close;
        } else {
            out += c;
        }
    }
    return out;
}

} // namespace tracetune
