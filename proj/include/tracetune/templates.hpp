#pragma once

#include <map>
#include <string>
#include <string_view>

namespace tracetune {

inline constexpr std::string_view kTemplateSchema = "tracetune/templates/v1";

/// Template ids understood by the pipelines.
namespace tmpl {
inline constexpr const char* kBrainstorm = "brainstorm";
inline constexpr const char* kGlobalRefine = "global_refine";
inline constexpr const char* kPromptRefine = "prompt_refine";
inline constexpr const char* kInpaintPrompt = "inpaint_prompt";
inline constexpr const char* kInpaintMerge = "inpaint_merge";
inline constexpr const char* kSuggestGlobal = "suggest_global";
inline constexpr const char* kSuggestLabel = "suggest_label";
inline constexpr const char* kSuggestExpanded = "suggest_expanded";
inline constexpr const char* kSchemaCorrection = "schema_correction";
inline constexpr const char* kLabelQuery = "label_query";
} // namespace tmpl

/// Named prompt templates with `{variable}` placeholders. `{{` and `}}`
/// produce literal braces.
class TemplateSet {
public:
    TemplateSet() = default;

    static TemplateSet defaults();
    /// Throws Error(MalformedConfig).
    static TemplateSet parse(std::string_view document);
    static TemplateSet load(const std::string& path);

    std::string to_document() const;

    const std::string& id() const { return id_; }
    bool contains(const std::string& name) const { return templates_.contains(name); }
    const std::string& raw(const std::string& name) const;

    /// Throws Error(MalformedConfig) for an unknown template or a
    /// placeholder with no matching variable.
    std::string render(const std::string& name, const std::map<std::string, std::string>& vars) const;

    void set(const std::string& name, std::string text) { templates_[name] = std::move(text); }

private:
    std::string id_ = "default";
    bool canonical_ = false;
    std::map<std::string, std::string> templates_;
};

std::string render_template(std::string_view text, const std::map<std::string, std::string>& vars);

} // namespace tracetune
