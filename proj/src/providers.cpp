#include "tracetune/providers.hpp"

#include "tracetune/selection.hpp"

namespace tracetune {

void RegionSelection::validate(int width, int height) const {
    if (kind == Kind::Point) {
        if (point.x < 0 || point.y < 0 || point.x >= width || point.y >= height) {
            throw Error(ErrorCode::InvalidArgument, "point lies outside the image",
                        std::to_string(point.x) + "," + std::to_string(point.y));
        }
        return;
    }
    if (box.empty()) throw Error(ErrorCode::InvalidArgument, "box has no area");
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > width || box.y1 > height) {
        throw Error(ErrorCode::InvalidArgument, "box lies outside the image",
                    std::to_string(box.x0) + "," + std::to_string(box.y0) + "," + std::to_string(box.x1) +
                        "," + std::to_string(box.y1));
    }
}

std::string call_text(TextProvider& provider, const TemplateSet& templates, const std::string& template_id,
                      const std::map<std::string, std::string>& variables, const std::string& suffix) {
    TextRequest req{template_id, variables, templates.render(template_id, variables)};
    if (!suffix.empty()) req.text += "\n\n" + suffix;
    return guard_provider("text", [&] {
        try {
            return provider.generate(req);
        } catch (const Error& e) {
            if (e.code() == ErrorCode::UnscriptedInput || e.code() == ErrorCode::ProviderFailure) throw;
            throw Error(ErrorCode::ProviderFailure, "text provider failed", e.what());
        }
    });
}

} // namespace tracetune
