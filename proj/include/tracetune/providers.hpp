#pragma once

// The six external-model contracts. Every LLM role shares TextProvider and
// is told apart by template id only.

#include "tracetune/error.hpp"
#include "tracetune/image.hpp"
#include "tracetune/selection.hpp"
#include "tracetune/templates.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace tracetune {

using Seed = std::int64_t;

struct TextRequest {
    std::string template_id;
    std::map<std::string, std::string> variables;
    std::string text; ///< the rendered template sent to the model
};

class TextProvider {
public:
    virtual ~TextProvider() = default;
    virtual std::string generate(const TextRequest& request) = 0;
};

/// Image i of the result was produced with seed + i.
class ImageProvider {
public:
    virtual ~ImageProvider() = default;
    virtual std::vector<Image> generate(const std::string& prompt, Seed seed, int count) = 0;
};

struct FillSample {
    Image image;
    std::optional<Seed> seed; ///< provider-reported, when it reports one
};

class InpaintProvider {
public:
    virtual ~InpaintProvider() = default;
    virtual std::vector<FillSample> fill(const Image& image, const Mask& mask,
                                         const std::string& region_prompt, Seed seed, int count) = 0;
};

/// Whatever a segmentation backend precomputes per image (SAM-style image
/// encoder output). Opaque to the caller.
class SegmentationContext {
public:
    virtual ~SegmentationContext() = default;
    int width = 0;
    int height = 0;
};

class SegmentationProvider {
public:
    virtual ~SegmentationProvider() = default;
    /// The expensive per-image step. Callers cache the result.
    virtual std::shared_ptr<const SegmentationContext> prepare(const Image& image) = 0;
    virtual Mask segment(const SegmentationContext& context, const Image& image,
                         const RegionSelection& selection) = 0;
};

/// Joint text/image embedding space. Vectors are unit-norm and of
/// dimension() length.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::size_t dimension() const = 0;
    virtual std::vector<float> embed_text(const std::string& text) = 0;
    virtual std::vector<float> embed_image(const Image& image) = 0;
};

class CaptionProvider {
public:
    virtual ~CaptionProvider() = default;
    virtual std::string caption(const Image& image) = 0;
};

struct Providers {
    std::shared_ptr<TextProvider> text;
    std::shared_ptr<ImageProvider> image;
    std::shared_ptr<InpaintProvider> inpaint;
    std::shared_ptr<SegmentationProvider> segmentation;
    std::shared_ptr<EmbeddingProvider> embedding;
    std::shared_ptr<CaptionProvider> caption;
    TemplateSet templates = TemplateSet::defaults();
};

/// Render `template_id` from `templates` and send it to `provider`.
/// Non-library exceptions are wrapped as ProviderFailure.
std::string call_text(TextProvider& provider, const TemplateSet& templates,
                      const std::string& template_id,
                      const std::map<std::string, std::string>& variables,
                      const std::string& suffix = {});

/// Runs `fn`, converting any foreign exception into Error(ProviderFailure).
/// Library errors pass through unchanged.
template <typename Fn>
auto guard_provider(const char* what, Fn&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(ErrorCode::ProviderFailure, std::string(what) + " provider failed", e.what());
    } catch (...) {
        throw Error(ErrorCode::ProviderFailure, std::string(what) + " provider failed");
    }
}

} // namespace tracetune
