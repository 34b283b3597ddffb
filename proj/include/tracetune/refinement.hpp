#pragma once

#include "tracetune/correspondence.hpp"
#include "tracetune/prompt.hpp"
#include "tracetune/providers.hpp"

#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

namespace tracetune {

inline constexpr int kBatchSize = 4;
inline constexpr int kMixedSeedCount = 2;

enum class RefineMode { Global, Seed, Inpaint, Mixed };
enum class Method { Initial, Global, Seed, Inpaint };

std::string_view to_string(RefineMode m);
std::string_view to_string(Method m);
RefineMode refine_mode_from_string(std::string_view s); ///< throws InvalidArgument
Method method_from_string(std::string_view s);

bool requires_selection(RefineMode m);

/// Thread-safe source of fresh seeds in [0, 2^31). Deterministic when
/// constructed with a seed.
class SeedSource {
public:
    SeedSource();
    explicit SeedSource(std::uint64_t seed);
    Seed next();

private:
    std::mutex mutex_;
    std::mt19937_64 rng_;
};

struct ReferenceCaption {
    std::string caption;
    std::string source_image_digest;

    bool operator==(const ReferenceCaption&) const = default;
};

struct LabeledSelection {
    RegionSelection region;
    std::string label;
};

struct RefinementRequest {
    RefineMode mode = RefineMode::Global;
    std::optional<std::string> instruction;
    std::optional<ReferenceCaption> reference; ///< captioned reference image
    std::optional<LabeledSelection> selection;
    std::string base_image_id;
    std::string base_image_digest;
    std::shared_ptr<const Image> base_image;
    StructuredPrompt base_prompt;
    Seed base_seed = 0;
    bool randomize_seed = false;         ///< global mode only
    bool base_has_inpaint_edits = false; ///< the base image or an ancestor was inpainted
    std::optional<Mask> mask;            ///< skip segmentation when already known

    /// Throws InvalidArgument naming the violated rule.
    void validate() const;
};

struct GeneratedImage {
    Image image;
    Seed seed = 0;
    Method method = Method::Global;
    StructuredPrompt prompt_after;
    std::optional<std::string> region_prompt; ///< inpaint only
};

/// One slot of a batch: a result or the error that replaced it.
struct BatchItem {
    std::optional<GeneratedImage> result;
    std::optional<ErrorInfo> error;

    bool ok() const { return result.has_value(); }
};

struct GenerationBatch {
    enum class Status { Done, Partial, Failed };

    RefineMode mode = RefineMode::Global;
    std::vector<BatchItem> items;
    /// Set when regenerating from a prompt would discard earlier inpaint edits.
    bool may_overwrite_inpaint = false;
    std::optional<Mask> mask;
    std::optional<std::string> label;

    Status status() const;
    std::size_t count(Method m) const;
};

std::string_view to_string(GenerationBatch::Status s);

/// `instruction` plus the caption as a delimited reference clause.
std::string fuse_instruction(const std::optional<std::string>& instruction,
                             const std::optional<ReferenceCaption>& caption);

/// The three refinement pipelines plus their helper LLM steps. Provider
/// schema violations are retried once with a corrective suffix.
class Refiner {
public:
    Refiner(Providers providers, std::shared_ptr<CorrespondenceEngine> correspondence,
            std::shared_ptr<SeedSource> seeds);

    const Providers& providers() const { return providers_; }
    SeedSource& seeds() { return *seeds_; }

    /// Throws UndecodableImage or ProviderFailure. Cached by image digest.
    ReferenceCaption caption_reference(std::span<const std::uint8_t> png_bytes);
    ReferenceCaption caption_reference(const Image& image);

    StructuredPrompt brainstorm(const std::string& initial_input);

    StructuredPrompt refine_prompt_global(const StructuredPrompt& base, const std::optional<std::string>& instruction,
                                          const std::optional<ReferenceCaption>& caption);
    StructuredPrompt refine_prompt_semantic(const StructuredPrompt& base, const std::string& label,
                                            const std::optional<std::string>& instruction,
                                            const std::optional<ReferenceCaption>& caption);
    std::string build_inpaint_prompt(const StructuredPrompt& base, const std::string& label,
                                     const std::optional<std::string>& instruction,
                                     const std::optional<ReferenceCaption>& caption);
    StructuredPrompt merge_inpaint_into_prompt(const StructuredPrompt& base, const std::string& region_prompt);

    /// n images with seeds seed, seed+1, ...; generated concurrently, one
    /// slot per image.
    std::vector<BatchItem> generate_with_seed(const StructuredPrompt& p, Seed seed, int n, Method method = Method::Seed);

    /// One fill sample, re-composited so pixels outside `mask` equal `image`.
    GeneratedImage inpaint(const Image& image, const Mask& mask, const std::string& region_prompt, Seed seed,
                           const StructuredPrompt& prompt_after);

    GenerationBatch execute(const RefinementRequest& req);

private:
    StructuredPrompt prompt_from_llm(const std::string& template_id, const std::map<std::string, std::string>& vars);
    std::vector<BatchItem> inpaint_batch(const RefinementRequest& req, const Mask& mask, int n, Seed first_seed,
                                         const StructuredPrompt& base, const std::string& label);

    Providers providers_;
    std::shared_ptr<CorrespondenceEngine> correspondence_;
    std::shared_ptr<SeedSource> seeds_;
    std::mutex caption_mutex_;
    std::unordered_map<std::string, ReferenceCaption> caption_cache_;
};

/// Strip a surrounding markdown code fence, if any.
std::string strip_code_fence(std::string_view text);

} // namespace tracetune
