#pragma once

// The full workflow over one image store and one session store: create a
// session, resolve selections to labels, refine into four children, pick a
// node, ask for suggestions.

#include "tracetune/correspondence.hpp"
#include "tracetune/refinement.hpp"
#include "tracetune/session.hpp"
#include "tracetune/store.hpp"
#include "tracetune/suggestions.hpp"

#include <filesystem>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>

namespace tracetune {

struct StudioOptions {
    std::filesystem::path image_dir;
    std::string session_db = ":memory:";
    std::optional<std::uint64_t> rng_seed;  ///< deterministic seeds and session ids when set
    std::function<std::string()> clock;     ///< created_at stamps; UTC ISO-8601 when empty
    CorrespondenceEngine::Options correspondence;
};

struct ResolveResult {
    std::vector<LabelScore> labels;
    MaskRle mask;
    BBox bbox;
    std::optional<SegmentLookup> segment; ///< the rank-1 label's prompt segment
};

struct RefineInput {
    RefineMode mode = RefineMode::Global;
    std::optional<std::string> instruction;
    std::optional<std::string> reference_digest; ///< an image already in the store
    std::optional<RegionSelection> selection;
    std::optional<std::string> label; ///< resolved from the selection when absent
    bool randomize_seed = false;
};

struct RefineOutcome {
    Session session;
    GenerationBatch batch;
    std::vector<std::optional<std::string>> child_ids; ///< one per slot; empty for failed slots
};

struct SuggestInput {
    SuggestionKind kind = SuggestionKind::Global;
    std::string session_id;
    std::string node_id;
    std::optional<std::string> label;
    std::optional<std::string> input;
};

struct ReferenceUpload {
    std::string digest;
    ReferenceCaption caption;
};

class Studio;

/// Exclusive right to refine one session. Released on destruction.
class RefineLease {
public:
    RefineLease(RefineLease&& other) noexcept;
    RefineLease& operator=(RefineLease&&) = delete;
    ~RefineLease();
    const std::string& session_id() const { return session_id_; }

private:
    friend class Studio;
    RefineLease(Studio* owner, std::string session_id) : owner_(owner), session_id_(std::move(session_id)) {}
    Studio* owner_;
    std::string session_id_;
};

class Studio {
public:
    Studio(Providers providers, StudioOptions options);

    /// Throws InvalidArgument for blank input, ProviderFailure when no
    /// initial image could be generated, SchemaViolation from brainstorming.
    Session create_session(const std::string& initial_input);
    Session session(const std::string& session_id) const; ///< throws UnknownSession

    ResolveResult resolve(const std::string& session_id, const std::string& node_id, const RegionSelection& sel);

    /// Throws Conflict while another refinement of the session is running.
    RefineLease acquire(const std::string& session_id);
    RefineOutcome refine(const RefineLease& lease, const std::string& node_id, const RefineInput& input);
    RefineOutcome refine(const std::string& session_id, const std::string& node_id, const RefineInput& input);
    /// Validates the input against the node without calling any provider.
    void check_refine(const std::string& session_id, const std::string& node_id, const RefineInput& input) const;

    Session select(const std::string& session_id, const std::string& node_id);
    SuggestionSet suggest(const SuggestInput& input);
    ReferenceUpload add_reference(std::span<const std::uint8_t> png_bytes);

    ImageStore& images() { return images_; }
    const ImageStore& images() const { return images_; }
    SessionStore& sessions() { return sessions_; }
    Refiner& refiner() { return *refiner_; }
    CorrespondenceEngine& correspondence() { return *correspondence_; }
    const Providers& providers() const { return providers_; }

private:
    friend class RefineLease;
    void release(const std::string& session_id);
    std::mutex& write_mutex(const std::string& session_id);
    std::string now() const;
    std::string new_session_id();

    Providers providers_;
    StudioOptions options_;
    ImageStore images_;
    SessionStore sessions_;
    std::shared_ptr<SeedSource> seeds_;
    std::shared_ptr<CorrespondenceEngine> correspondence_;
    std::unique_ptr<Refiner> refiner_;

    std::mutex lease_mutex_;
    std::set<std::string> busy_;
    std::mutex id_mutex_;
    std::mt19937_64 id_rng_;
    std::unordered_map<std::string, std::unique_ptr<std::mutex>> write_mutexes_;
};

/// Re-derive the prompt of `node_id` by replaying every refinement record
/// on its ancestor chain, starting from the brainstormed root prompt.
/// Reference captions are re-derived from `images`.
StructuredPrompt replay_prompt(Refiner& refiner, const ImageStore& images, const Session& s,
                               const std::string& node_id);

} // namespace tracetune
