#include "tracetune/correspondence.hpp"

#include "tracetune/kernels.hpp"
#include "tracetune/templates.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tracetune {

BBox padded_crop(BBox bbox, double fraction, int width, int height) {
    const int pad = static_cast<int>(std::lround(fraction * std::max(bbox.width(), bbox.height())));
    return {std::max(0, bbox.x0 - pad), std::max(0, bbox.y0 - pad), std::min(width, bbox.x1 + pad),
            std::min(height, bbox.y1 + pad)};
}

std::string label_query_text(std::string_view label, std::string_view query_template) {
    return render_template(query_template, {{"label", std::string(label)}});
}

SegmentationResult segment_region(const Image& image, const RegionSelection& sel, SegmentationProvider& provider,
                                  const SegmentationContext* context) {
    sel.validate(image.width(), image.height());
    std::shared_ptr<const SegmentationContext> owned;
    if (!context) {
        owned = guard_provider("segmentation", [&] { return provider.prepare(image); });
        context = owned.get();
    }
    Mask mask = guard_provider("segmentation", [&] { return provider.segment(*context, image, sel); });
    if (mask.width() != image.width() || mask.height() != image.height()) {
        throw Error(ErrorCode::ProviderFailure, "segmentation mask size differs from the image");
    }
    // The provider's own box, if any, is ignored: the bound is recomputed here.
    const auto bbox = kernels::omp::mask_bbox(mask);
    if (!bbox) throw Error(ErrorCode::EmptyMask, "segmentation returned an empty mask");
    return {std::move(mask), *bbox};
}

QueryImage prepare_query_image(const Image& image, const SegmentationResult& seg, double padding_fraction,
                               std::string source_image_id) {
    QueryImage q;
    q.source_image_id = std::move(source_image_id);
    q.bbox = seg.bbox;
    q.padding = static_cast<int>(std::lround(padding_fraction * std::max(seg.bbox.width(), seg.bbox.height())));
    q.crop = padded_crop(seg.bbox, padding_fraction, image.width(), image.height());
    q.pixels = kernels::omp::darken_outside_mask(image, seg.mask, q.crop);
    return q;
}

std::vector<LabelScore> resolve_labels(const QueryImage& query, std::span<const std::string> labels,
                                       EmbeddingProvider& embed, std::string_view query_template,
                                       const TextEmbeddingFn& text_embedding) {
    if (labels.empty()) throw Error(ErrorCode::EmptyLabelSet, "no candidate labels");

    const auto image_vec = guard_provider("embedding", [&] { return embed.embed_image(query.pixels); });
    const std::size_t dim = image_vec.size();
    if (dim == 0) throw Error(ErrorCode::ProviderFailure, "image embedding is empty");

    std::vector<float> rows(labels.size() * dim);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        const std::string text = label_query_text(labels[i], query_template);
        const auto v = text_embedding ? text_embedding(text)
                                      : guard_provider("embedding", [&] { return embed.embed_text(text); });
        if (v.size() != dim) {
            throw Error(ErrorCode::ProviderFailure, "text and image embeddings differ in dimension", labels[i]);
        }
        std::copy(v.begin(), v.end(), rows.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }

    std::vector<float> scores(labels.size());
    kernels::omp::cosine_scores(image_vec, rows, dim, scores);

    std::vector<std::size_t> order(labels.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i : order) {
        if (!std::isfinite(scores[i])) throw Error(ErrorCode::ProviderFailure, "similarity is not finite", labels[i]);
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    std::vector<LabelScore> out;
    const std::size_t n = std::min(kTopLabelCount, labels.size());
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) out.push_back({labels[order[k]], scores[order[k]]});
    return out;
}

CorrespondenceEngine::CorrespondenceEngine(std::shared_ptr<SegmentationProvider> segmentation,
                                           std::shared_ptr<EmbeddingProvider> embedding)
    : CorrespondenceEngine(std::move(segmentation), std::move(embedding), Options{}) {}

CorrespondenceEngine::CorrespondenceEngine(std::shared_ptr<SegmentationProvider> segmentation,
                                           std::shared_ptr<EmbeddingProvider> embedding, Options options)
    : segmentation_(std::move(segmentation)), embedding_(std::move(embedding)), options_(std::move(options)) {}

std::shared_ptr<const SegmentationContext> CorrespondenceEngine::precompute(const std::string& image_id,
                                                                           const std::string& digest,
                                                                           const Image& image) {
    {
        std::shared_lock lock(mutex_);
        if (auto it = contexts_.find(image_id); it != contexts_.end() && it->second.digest == digest) {
            auto fut = it->second.context;
            lock.unlock();
            return fut.get();
        }
    }

    std::promise<std::shared_ptr<const SegmentationContext>> promise;
    {
        std::unique_lock lock(mutex_);
        auto it = contexts_.find(image_id);
        if (it != contexts_.end() && it->second.digest == digest) {
            auto fut = it->second.context;
            lock.unlock();
            return fut.get();
        }
        contexts_[image_id] = Entry{digest, promise.get_future().share()};
    }

    try {
        auto ctx = guard_provider("segmentation", [&] { return segmentation_->prepare(image); });
        promise.set_value(ctx);
        return ctx;
    } catch (...) {
        promise.set_exception(std::current_exception());
        std::unique_lock lock(mutex_);
        if (auto it = contexts_.find(image_id); it != contexts_.end() && it->second.digest == digest) {
            contexts_.erase(it);
        }
        throw;
    }
}

SegmentationResult CorrespondenceEngine::segment(const std::string& image_id, const std::string& digest,
                                                 const Image& image, const RegionSelection& sel) {
    sel.validate(image.width(), image.height());
    const auto ctx = precompute(image_id, digest, image);
    return segment_region(image, sel, *segmentation_, ctx.get());
}

Resolution CorrespondenceEngine::resolve(const std::string& image_id, const std::string& digest,
                                         const Image& image, const RegionSelection& sel,
                                         std::span<const std::string> labels) {
    if (labels.empty()) throw Error(ErrorCode::EmptyLabelSet, "no candidate labels");
    Resolution r;
    r.segmentation = segment(image_id, digest, image, sel);
    r.query = prepare_query_image(image, r.segmentation, options_.padding_fraction, image_id);
    r.labels = resolve_labels(r.query, labels, *embedding_, options_.query_template,
                              [this](const std::string& text) { return text_embedding(text); });
    return r;
}

std::vector<float> CorrespondenceEngine::text_embedding(const std::string& text) {
    {
        std::shared_lock lock(text_mutex_);
        if (auto it = text_cache_.find(text); it != text_cache_.end()) return it->second;
    }
    auto v = guard_provider("embedding", [&] { return embedding_->embed_text(text); });
    std::unique_lock lock(text_mutex_);
    return text_cache_.try_emplace(text, std::move(v)).first->second;
}

void CorrespondenceEngine::invalidate(const std::string& image_id) {
    std::unique_lock lock(mutex_);
    contexts_.erase(image_id);
}

std::size_t CorrespondenceEngine::cached_images() const {
    std::shared_lock lock(mutex_);
    return contexts_.size();
}

} // namespace tracetune
