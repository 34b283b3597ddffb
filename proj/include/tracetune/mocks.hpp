#pragma once

// Deterministic provider implementations. They back the whole test suite
// and `--mock-only` runs; nothing here touches the network.

#include "tracetune/providers.hpp"

#include <json.hpp>

#include <array>
#include <atomic>
#include <functional>
#include <mutex>
#include <regex>
#include <set>

namespace tracetune::mock {

/// A flat-colored shape painted into mock images whenever one of its
/// keywords occurs in the generation prompt.
struct SceneBlob {
    enum class Shape { Rect, Ellipse };

    std::string label;
    std::array<std::uint8_t, 3> color{};
    Shape shape = Shape::Rect;
    BBox box;
    std::vector<std::string> keywords; ///< defaults to {label}

    bool covers(int x, int y) const;
    bool triggered_by(std::string_view prompt_text) const;
};

/// Shared fixture for the image, inpaint, segmentation and embedding mocks.
struct SceneFixture {
    int width = 512;
    int height = 512;
    int tile = 16;
    std::vector<SceneBlob> blobs;

    static SceneFixture from_json(const nlohmann::json& j);
    static SceneFixture load(const std::string& path);
    nlohmann::json to_json() const;

    const SceneBlob* find(std::string_view label) const;
};

// -- text ------------------------------------------------------------------

/// Table of (template id, regex) -> responses. Each match consumes the next
/// response; the last one repeats. No match is an authoring error.
class ScriptedTextProvider : public TextProvider {
public:
    struct Entry {
        std::string template_id; ///< "*" matches any template
        std::string pattern;     ///< ECMAScript regex searched in the rendered text
        std::vector<std::string> responses;
    };

    ScriptedTextProvider() = default;
    explicit ScriptedTextProvider(std::vector<Entry> entries);
    static std::shared_ptr<ScriptedTextProvider> from_json(const nlohmann::json& j);
    static std::shared_ptr<ScriptedTextProvider> load(const std::string& path);

    void add(Entry entry);
    std::string generate(const TextRequest& request) override;

    std::vector<TextRequest> calls() const;
    std::size_t call_count() const;

private:
    struct Compiled {
        Entry entry;
        std::regex regex;
        std::size_t next = 0;
    };
    mutable std::mutex mutex_;
    std::vector<Compiled> entries_;
    std::vector<TextRequest> calls_;
};

/// Text provider backed by a callback, for generated test scenarios.
class FunctionTextProvider : public TextProvider {
public:
    using Fn = std::function<std::string(const TextRequest&)>;
    explicit FunctionTextProvider(Fn fn) : fn_(std::move(fn)) {}
    std::string generate(const TextRequest& request) override;
    std::size_t call_count() const { return calls_.load(); }

private:
    Fn fn_;
    std::atomic<std::size_t> calls_{0};
};

// -- images ----------------------------------------------------------------

/// Paint every blob of `scene` triggered by `prompt_text` into `img`.
void paint_scene(Image& img, const SceneFixture& scene, std::string_view prompt_text);

/// Raster = hash noise keyed by (prompt, seed) plus triggered scene blobs.
/// Equal (prompt, seed) always yields identical pixels.
struct ImageFailurePlan {
    std::set<Seed> fail_seeds;
    int fail_first_calls = 0;
};

class HashImageProvider : public ImageProvider {
public:
    using FailurePlan = ImageFailurePlan;

    explicit HashImageProvider(SceneFixture scene, FailurePlan failures = {});
    std::vector<Image> generate(const std::string& prompt, Seed seed, int count) override;

    static Image render(const SceneFixture& scene, const std::string& prompt, Seed seed);
    std::size_t call_count() const { return calls_.load(); }

private:
    SceneFixture scene_;
    FailurePlan failures_;
    std::atomic<int> calls_{0};
};

/// Fills the mask with noise keyed by (region prompt, seed) and paints
/// triggered blobs clipped to the mask. With `bleed`, it also perturbs every
/// pixel outside the mask so callers must re-composite.
class MockInpaintProvider : public InpaintProvider {
public:
    explicit MockInpaintProvider(SceneFixture scene, bool bleed = true, bool report_seed = true);
    std::vector<FillSample> fill(const Image& image, const Mask& mask, const std::string& region_prompt,
                                 Seed seed, int count) override;
    std::size_t call_count() const { return calls_.load(); }

private:
    SceneFixture scene_;
    bool bleed_;
    bool report_seed_;
    std::atomic<std::size_t> calls_{0};
};

// -- segmentation ------------------------------------------------------------

/// Masks are the visible part of a fixture blob: pixels inside its shape
/// that still carry its color. A point picks the topmost blob under it; a
/// box picks the blob with the most visible pixels inside the box.
/// Anything else yields an all-false mask.
class MockSegmentationProvider : public SegmentationProvider {
public:
    explicit MockSegmentationProvider(SceneFixture scene);

    std::shared_ptr<const SegmentationContext> prepare(const Image& image) override;
    Mask segment(const SegmentationContext& context, const Image& image,
                 const RegionSelection& selection) override;

    std::size_t prepare_calls() const { return prepare_calls_.load(); }
    std::size_t segment_calls() const { return segment_calls_.load(); }

    /// Visible-pixel mask of one blob.
    static Mask blob_mask(const SceneBlob& blob, const Image& image);

private:
    SceneFixture scene_;
    std::atomic<std::size_t> prepare_calls_{0};
    std::atomic<std::size_t> segment_calls_{0};
};

/// Returns a fixed mask regardless of input.
class FixedMaskSegmentationProvider : public SegmentationProvider {
public:
    explicit FixedMaskSegmentationProvider(Mask mask) : mask_(std::move(mask)) {}
    std::shared_ptr<const SegmentationContext> prepare(const Image& image) override;
    Mask segment(const SegmentationContext&, const Image&, const RegionSelection&) override { return mask_; }

private:
    Mask mask_;
};

// -- embeddings --------------------------------------------------------------

/// One-hot embedding space. Registered label i maps to basis vector e_i;
/// text of the form "<label query prefix><label>" maps to its label's
/// vector. Images map to the label whose palette color covers the most
/// pixels. Anything unregistered hashes into one of `spare` extra axes.
class OneHotEmbeddingProvider : public EmbeddingProvider {
public:
    struct Entry {
        std::string label;
        std::optional<std::array<std::uint8_t, 3>> color;
    };

    explicit OneHotEmbeddingProvider(std::vector<Entry> entries, std::size_t spare = 64,
                                     std::string query_prefix = "The bright part is a segmentation of ");
    static std::shared_ptr<OneHotEmbeddingProvider> from_scene(const SceneFixture& scene);

    /// Override: text -> explicit vector (normalized on use).
    void set_text_vector(const std::string& text, std::vector<float> v);
    /// Override: every image embeds to this vector.
    void set_image_vector(std::vector<float> v);

    std::size_t dimension() const override { return entries_.size() + spare_; }
    std::vector<float> embed_text(const std::string& text) override;
    std::vector<float> embed_image(const Image& image) override;

    std::size_t text_calls() const { return text_calls_.load(); }
    std::size_t image_calls() const { return image_calls_.load(); }

private:
    std::vector<float> basis(std::size_t i) const;
    std::vector<float> spare_axis(std::string_view key) const;

    std::vector<Entry> entries_;
    std::size_t spare_;
    std::string query_prefix_;
    std::mutex mutex_;
    std::map<std::string, std::vector<float>> text_overrides_;
    std::optional<std::vector<float>> image_override_;
    std::atomic<std::size_t> text_calls_{0};
    std::atomic<std::size_t> image_calls_{0};
};

// -- captions ---------------------------------------------------------------

class TableCaptionProvider : public CaptionProvider {
public:
    TableCaptionProvider(std::map<std::string, std::string> by_digest, std::string fallback);
    std::string caption(const Image& image) override;
    std::size_t call_count() const { return calls_.load(); }

private:
    std::map<std::string, std::string> by_digest_;
    std::string fallback_;
    std::atomic<std::size_t> calls_{0};
};

/// Mock-only provider bundle built around one scene.
Providers make_mock_providers(const SceneFixture& scene, std::shared_ptr<TextProvider> text,
                              std::map<std::string, std::string> captions = {},
                              std::string fallback_caption = "a reference photograph");

} // namespace tracetune::mock
