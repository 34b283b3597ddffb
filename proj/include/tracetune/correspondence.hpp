#pragma once

#include "tracetune/image.hpp"
#include "tracetune/providers.hpp"
#include "tracetune/selection.hpp"

#include <future>
#include <memory>
#include <shared_mutex>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tracetune {

inline constexpr std::string_view kLabelQueryTemplate = "The bright part is a segmentation of {label}";
inline constexpr std::size_t kTopLabelCount = 5;
inline constexpr double kDefaultCropPadding = 0.10;

struct SegmentationResult {
    Mask mask;
    BBox bbox; ///< tight bound of the mask, computed locally
};

/// Padded bbox crop of the source image with everything outside the mask
/// darkened to a fifth of its value.
struct QueryImage {
    Image pixels;
    std::string source_image_id;
    BBox bbox;        ///< tight mask bound in source coordinates
    BBox crop;        ///< padded, clamped crop in source coordinates
    int padding = 0;  ///< pixels added on each side before clamping
};

struct LabelScore {
    std::string label;
    float score = 0.0f; ///< cosine similarity in [-1, 1]

    bool operator==(const LabelScore&) const = default;
};

/// bbox grown by `fraction` of its longer side on every side, clamped to
/// the image.
BBox padded_crop(BBox bbox, double fraction, int width, int height);

/// `label_query` with {label} substituted.
std::string label_query_text(std::string_view label, std::string_view query_template = kLabelQueryTemplate);

SegmentationResult segment_region(const Image& image, const RegionSelection& sel, SegmentationProvider& provider,
                                  const SegmentationContext* context = nullptr);

QueryImage prepare_query_image(const Image& image, const SegmentationResult& seg,
                               double padding_fraction = kDefaultCropPadding, std::string source_image_id = {});

/// Top min(5, |labels|) labels by cosine similarity, descending; equal
/// scores keep `labels` order. Text embeddings come from `text_embedding`
/// when given (memoized), else from the provider.
using TextEmbeddingFn = std::function<std::vector<float>(const std::string&)>;
std::vector<LabelScore> resolve_labels(const QueryImage& query, std::span<const std::string> labels,
                                       EmbeddingProvider& embed,
                                       std::string_view query_template = kLabelQueryTemplate,
                                       const TextEmbeddingFn& text_embedding = {});

struct Resolution {
    SegmentationResult segmentation;
    QueryImage query;
    std::vector<LabelScore> labels;
};

/// Caches per-image segmentation contexts (the expensive encode) keyed by
/// image id, and text embeddings keyed by query text. A cached context is
/// reused only while the image id still maps to the same content digest.
class CorrespondenceEngine {
public:
    struct Options {
        double padding_fraction = kDefaultCropPadding;
        std::string query_template = std::string(kLabelQueryTemplate);
    };

    CorrespondenceEngine(std::shared_ptr<SegmentationProvider> segmentation,
                         std::shared_ptr<EmbeddingProvider> embedding);
    CorrespondenceEngine(std::shared_ptr<SegmentationProvider> segmentation,
                         std::shared_ptr<EmbeddingProvider> embedding, Options options);

    /// Returns the cached context, encoding the image on a miss or when
    /// `digest` differs from the cached one.
    std::shared_ptr<const SegmentationContext> precompute(const std::string& image_id, const std::string& digest,
                                                          const Image& image);

    SegmentationResult segment(const std::string& image_id, const std::string& digest, const Image& image,
                               const RegionSelection& sel);

    Resolution resolve(const std::string& image_id, const std::string& digest, const Image& image,
                       const RegionSelection& sel, std::span<const std::string> labels);

    void invalidate(const std::string& image_id);
    std::size_t cached_images() const;

private:
    struct Entry {
        std::string digest;
        std::shared_future<std::shared_ptr<const SegmentationContext>> context;
    };

    std::vector<float> text_embedding(const std::string& text);

    std::shared_ptr<SegmentationProvider> segmentation_;
    std::shared_ptr<EmbeddingProvider> embedding_;
    Options options_;

    mutable std::shared_mutex mutex_;
    std::unordered_map<std::string, Entry> contexts_;
    std::shared_mutex text_mutex_;
    std::unordered_map<std::string, std::vector<float>> text_cache_;
};

} // namespace tracetune
