#include "tracetune/refinement.hpp"

#include "tracetune/kernels.hpp"

#include <algorithm>
#include <future>

namespace tracetune {

std::string_view to_string(RefineMode m) {
    switch (m) {
    case RefineMode::Global: return "global";
    case RefineMode::Seed: return "seed";
    case RefineMode::Inpaint: return "inpaint";
    case RefineMode::Mixed: return "mixed";
    }
    return "?";
}

std::string_view to_string(Method m) {
    switch (m) {
    case Method::Initial: return "initial";
    case Method::Global: return "global";
    case Method::Seed: return "seed";
    case Method::Inpaint: return "inpaint";
    }
    return "?";
}

RefineMode refine_mode_from_string(std::string_view s) {
    for (RefineMode m : {RefineMode::Global, RefineMode::Seed, RefineMode::Inpaint, RefineMode::Mixed}) {
        if (to_string(m) == s) return m;
    }
    throw Error(ErrorCode::InvalidArgument, "mode must be global, seed, inpaint or mixed", std::string(s));
}

Method method_from_string(std::string_view s) {
    for (Method m : {Method::Initial, Method::Global, Method::Seed, Method::Inpaint}) {
        if (to_string(m) == s) return m;
    }
    throw Error(ErrorCode::MalformedDocument, "unknown method", std::string(s));
}

bool requires_selection(RefineMode m) { return m != RefineMode::Global; }

std::string_view to_string(GenerationBatch::Status s) {
    switch (s) {
    case GenerationBatch::Status::Done: return "done";
    case GenerationBatch::Status::Partial: return "partial";
    case GenerationBatch::Status::Failed: return "failed";
    }
    return "?";
}

SeedSource::SeedSource() : rng_(std::random_device{}()) {}
SeedSource::SeedSource(std::uint64_t seed) : rng_(seed) {}

Seed SeedSource::next() {
    std::lock_guard lock(mutex_);
    return static_cast<Seed>(rng_() & 0x7fffffffULL);
}

namespace {

bool has_text(const std::optional<std::string>& s) {
    return s && s->find_first_not_of(" \t\r\n") != std::string::npos;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

bool is_schema_error(ErrorCode c) {
    switch (c) {
    case ErrorCode::MalformedDocument:
    case ErrorCode::MissingCategory:
    case ErrorCode::EmptyContent:
    case ErrorCode::DuplicateLabel:
    case ErrorCode::CyclicParent:
    case ErrorCode::UnknownLabel:
        return true;
    default:
        return false;
    }
}

} // namespace

void RefinementRequest::validate() const {
    if (requires_selection(mode) && !selection) {
        throw Error(ErrorCode::InvalidArgument, std::string(to_string(mode)) + " mode requires a selection", "selection");
    }
    if (mode == RefineMode::Global && selection) {
        throw Error(ErrorCode::InvalidArgument, "global mode does not take a selection", "selection");
    }
    if (!has_text(instruction) && !reference) {
        throw Error(ErrorCode::InvalidArgument, "an instruction or a reference image is required", "instruction");
    }
    if ((mode == RefineMode::Inpaint || mode == RefineMode::Mixed) && !base_image) {
        throw Error(ErrorCode::InvalidArgument, "inpainting needs the base image", "base_image");
    }
}

GenerationBatch::Status GenerationBatch::status() const {
    const auto ok = static_cast<std::size_t>(std::count_if(items.begin(), items.end(), [](const auto& i) { return i.ok(); }));
    if (ok == items.size()) return Status::Done;
    return ok == 0 ? Status::Failed : Status::Partial;
}

std::size_t GenerationBatch::count(Method m) const {
    return static_cast<std::size_t>(
        std::count_if(items.begin(), items.end(), [m](const auto& i) { return i.ok() && i.result->method == m; }));
}

std::string fuse_instruction(const std::optional<std::string>& instruction,
                             const std::optional<ReferenceCaption>& caption) {
    std::string out = has_text(instruction) ? trim(*instruction) : std::string{};
    if (caption) {
        if (!out.empty()) out += "\n";
        out += "reference: " + caption->caption;
    }
    return out;
}

std::string strip_code_fence(std::string_view text) {
    std::string t = trim(text);
    if (!t.starts_with("```")) return t;
    const auto nl = t.find('\n');
    if (nl == std::string::npos) return t;
    t.erase(0, nl + 1);
    if (const auto end = t.rfind("```"); end != std::string::npos) t.erase(end);
    return trim(t);
}

Refiner::Refiner(Providers providers, std::shared_ptr<CorrespondenceEngine> correspondence,
                 std::shared_ptr<SeedSource> seeds)
    : providers_(std::move(providers)), correspondence_(std::move(correspondence)), seeds_(std::move(seeds)) {
    if (!seeds_) seeds_ = std::make_shared<SeedSource>();
    if (!correspondence_ && providers_.segmentation && providers_.embedding) {
        correspondence_ = std::make_shared<CorrespondenceEngine>(providers_.segmentation, providers_.embedding);
    }
}

ReferenceCaption Refiner::caption_reference(std::span<const std::uint8_t> png_bytes) {
    return caption_reference(decode_png(png_bytes));
}

ReferenceCaption Refiner::caption_reference(const Image& image) {
    if (image.empty()) throw Error(ErrorCode::UndecodableImage, "reference image is empty");
    const std::string digest = image_digest(image);
    {
        std::lock_guard lock(caption_mutex_);
        if (auto it = caption_cache_.find(digest); it != caption_cache_.end()) return it->second;
    }
    std::string text = trim(guard_provider("caption", [&] { return providers_.caption->caption(image); }));
    if (text.empty()) throw Error(ErrorCode::ProviderFailure, "caption provider returned an empty caption");
    ReferenceCaption cap{std::move(text), digest};
    std::lock_guard lock(caption_mutex_);
    return caption_cache_.try_emplace(digest, std::move(cap)).first->second;
}

StructuredPrompt Refiner::prompt_from_llm(const std::string& template_id,
                                          const std::map<std::string, std::string>& vars) {
    const std::string first = call_text(*providers_.text, providers_.templates, template_id, vars);
    try {
        return parse_structured_prompt(strip_code_fence(first));
    } catch (const Error& e) {
        if (!is_schema_error(e.code())) throw;
        const std::string correction =
            providers_.templates.render(tmpl::kSchemaCorrection, {{"error", e.what()}, {"previous", first}});
        const std::string second = call_text(*providers_.text, providers_.templates, template_id, vars, correction);
        try {
            return parse_structured_prompt(strip_code_fence(second));
        } catch (const Error& e2) {
            if (!is_schema_error(e2.code())) throw;
            throw Error(ErrorCode::SchemaViolation, "provider output is not a structured prompt after one retry",
                        template_id + ": " + e2.what());
        }
    }
}

StructuredPrompt Refiner::brainstorm(const std::string& initial_input) {
    if (trim(initial_input).empty()) throw Error(ErrorCode::InvalidArgument, "initial input is empty", "initial_input");
    return prompt_from_llm(tmpl::kBrainstorm, {{"input", trim(initial_input)}});
}

StructuredPrompt Refiner::refine_prompt_global(const StructuredPrompt& base,
                                               const std::optional<std::string>& instruction,
                                               const std::optional<ReferenceCaption>& caption) {
    if (!has_text(instruction) && !caption) {
        throw Error(ErrorCode::InvalidArgument, "an instruction or a reference caption is required", "instruction");
    }
    return prompt_from_llm(tmpl::kGlobalRefine, {{"prompt", serialize_structured_prompt(base)},
                                                 {"instruction", fuse_instruction(instruction, caption)}});
}

StructuredPrompt Refiner::refine_prompt_semantic(const StructuredPrompt& base, const std::string& label,
                                                 const std::optional<std::string>& instruction,
                                                 const std::optional<ReferenceCaption>& caption) {
    const auto seg = segment_for_label(base, label);
    if (!has_text(instruction) && !caption) {
        throw Error(ErrorCode::InvalidArgument, "an instruction or a reference caption is required", "instruction");
    }
    return prompt_from_llm(tmpl::kPromptRefine, {{"prompt", serialize_structured_prompt(base)},
                                                 {"label", seg.element.label},
                                                 {"segment", seg.element.description},
                                                 {"instruction", fuse_instruction(instruction, caption)}});
}

std::string Refiner::build_inpaint_prompt(const StructuredPrompt& base, const std::string& label,
                                          const std::optional<std::string>& instruction,
                                          const std::optional<ReferenceCaption>& caption) {
    const auto seg = segment_for_label(base, label);
    if (!has_text(instruction) && !caption) {
        throw Error(ErrorCode::InvalidArgument, "an instruction or a reference caption is required", "instruction");
    }
    const std::map<std::string, std::string> vars{{"prompt", serialize_structured_prompt(base)},
                                                  {"label", seg.element.label},
                                                  {"segment", seg.element.description},
                                                  {"instruction", fuse_instruction(instruction, caption)}};
    std::string region = strip_code_fence(call_text(*providers_.text, providers_.templates, tmpl::kInpaintPrompt, vars));
    if (!region.empty()) return region;
    const std::string correction = providers_.templates.render(
        tmpl::kSchemaCorrection, {{"error", "the region prompt was empty"}, {"previous", ""}});
    region = strip_code_fence(call_text(*providers_.text, providers_.templates, tmpl::kInpaintPrompt, vars, correction));
    if (region.empty()) throw Error(ErrorCode::SchemaViolation, "inpaint prompt is empty after one retry", label);
    return region;
}

StructuredPrompt Refiner::merge_inpaint_into_prompt(const StructuredPrompt& base, const std::string& region_prompt) {
    if (trim(region_prompt).empty()) {
        throw Error(ErrorCode::SchemaViolation, "cannot merge an empty region prompt", "region_prompt");
    }
    return prompt_from_llm(tmpl::kInpaintMerge,
                           {{"prompt", serialize_structured_prompt(base)}, {"region_prompt", trim(region_prompt)}});
}

std::vector<BatchItem> Refiner::generate_with_seed(const StructuredPrompt& p, Seed seed, int n, Method method) {
    if (n < 1) throw Error(ErrorCode::InvalidArgument, "count must be at least 1");
    const std::string text = render_prompt_text(p);
    std::vector<std::future<BatchItem>> jobs;
    jobs.reserve(static_cast<std::size_t>(n));
    for (int k = 0; k < n; ++k) {
        jobs.push_back(std::async(std::launch::async, [this, &text, &p, seed, k, method] {
            const Seed s = seed + k;
            try {
                auto images = guard_provider("image", [&] { return providers_.image->generate(text, s, 1); });
                if (images.size() != 1) throw Error(ErrorCode::ProviderFailure, "image provider returned no image");
                return BatchItem{GeneratedImage{std::move(images.front()), s, method, p, std::nullopt}, std::nullopt};
            } catch (const Error& e) {
                return BatchItem{std::nullopt, ErrorInfo::from(e)};
            }
        }));
    }
    std::vector<BatchItem> out;
    out.reserve(jobs.size());
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

GeneratedImage Refiner::inpaint(const Image& image, const Mask& mask, const std::string& region_prompt, Seed seed,
                                const StructuredPrompt& prompt_after) {
    if (mask.width() != image.width() || mask.height() != image.height()) {
        throw Error(ErrorCode::DimensionMismatch, "mask and image sizes differ",
                    std::to_string(mask.width()) + "x" + std::to_string(mask.height()) + " vs " +
                        std::to_string(image.width()) + "x" + std::to_string(image.height()));
    }
    if (!kernels::omp::mask_bbox(mask)) throw Error(ErrorCode::EmptyMask, "inpaint mask is empty");
    auto samples = guard_provider("inpaint", [&] { return providers_.inpaint->fill(image, mask, region_prompt, seed, 1); });
    if (samples.empty()) throw Error(ErrorCode::ProviderFailure, "inpaint provider returned no image");
    FillSample& s = samples.front();
    if (s.image.width() != image.width() || s.image.height() != image.height()) {
        throw Error(ErrorCode::ProviderFailure, "inpaint provider returned an image of a different size");
    }
    return GeneratedImage{kernels::omp::composite_outside_mask(image, s.image, mask), s.seed.value_or(seed),
                          Method::Inpaint, prompt_after, region_prompt};
}

std::vector<BatchItem> Refiner::inpaint_batch(const RefinementRequest& req, const Mask& mask, int n, Seed first_seed,
                                              const StructuredPrompt& base, const std::string& label) {
    std::string region;
    StructuredPrompt merged;
    try {
        region = build_inpaint_prompt(base, label, req.instruction, req.reference);
        merged = merge_inpaint_into_prompt(base, region);
    } catch (const Error& e) {
        return std::vector<BatchItem>(static_cast<std::size_t>(n), BatchItem{std::nullopt, ErrorInfo::from(e)});
    }
    std::vector<std::future<BatchItem>> jobs;
    for (int k = 0; k < n; ++k) {
        jobs.push_back(std::async(std::launch::async, [&, k] {
            try {
                return BatchItem{inpaint(*req.base_image, mask, region, first_seed + k, merged), std::nullopt};
            } catch (const Error& e) {
                return BatchItem{std::nullopt, ErrorInfo::from(e)};
            }
        }));
    }
    std::vector<BatchItem> out;
    for (auto& j : jobs) out.push_back(j.get());
    return out;
}

GenerationBatch Refiner::execute(const RefinementRequest& req) {
    req.validate();
    GenerationBatch batch;
    batch.mode = req.mode;
    batch.may_overwrite_inpaint = req.base_has_inpaint_edits && req.mode != RefineMode::Inpaint;
    if (req.selection) {
        const auto seg = segment_for_label(req.base_prompt, req.selection->label);
        batch.label = seg.element.label;
    }

    auto seed_items = [&](int n) {
        try {
            const auto refined = refine_prompt_semantic(req.base_prompt, *batch.label, req.instruction, req.reference);
            return generate_with_seed(refined, req.base_seed, n, Method::Seed);
        } catch (const Error& e) {
            return std::vector<BatchItem>(static_cast<std::size_t>(n), BatchItem{std::nullopt, ErrorInfo::from(e)});
        }
    };
    auto resolve_mask = [&]() -> Mask {
        if (req.mask) return *req.mask;
        if (!correspondence_) throw Error(ErrorCode::InvalidArgument, "no segmentation available for inpainting");
        return correspondence_
            ->segment(req.base_image_id, req.base_image_digest, *req.base_image, req.selection->region)
            .mask;
    };
    auto append = [&](std::vector<BatchItem> items) {
        for (auto& i : items) batch.items.push_back(std::move(i));
    };

    switch (req.mode) {
    case RefineMode::Global: {
        try {
            const auto refined = refine_prompt_global(req.base_prompt, req.instruction, req.reference);
            const Seed seed = req.randomize_seed ? seeds_->next() : req.base_seed;
            append(generate_with_seed(refined, seed, kBatchSize, Method::Global));
        } catch (const Error& e) {
            append(std::vector<BatchItem>(kBatchSize, BatchItem{std::nullopt, ErrorInfo::from(e)}));
        }
        break;
    }
    case RefineMode::Seed:
        append(seed_items(kBatchSize));
        break;
    case RefineMode::Inpaint:
    case RefineMode::Mixed: {
        const int n_seed = req.mode == RefineMode::Mixed ? kMixedSeedCount : 0;
        const int n_fill = kBatchSize - n_seed;
        std::optional<Mask> mask;
        std::optional<ErrorInfo> mask_error;
        try {
            mask = resolve_mask();
        } catch (const Error& e) {
            if (e.code() == ErrorCode::InvalidArgument) throw;
            mask_error = ErrorInfo::from(e);
        }
        if (n_seed > 0) append(seed_items(n_seed));
        if (mask) {
            append(inpaint_batch(req, *mask, n_fill, req.base_seed, req.base_prompt, *batch.label));
            batch.mask = std::move(mask);
        } else {
            append(std::vector<BatchItem>(static_cast<std::size_t>(n_fill), BatchItem{std::nullopt, *mask_error}));
        }
        break;
    }
    }
    return batch;
}

} // namespace tracetune
