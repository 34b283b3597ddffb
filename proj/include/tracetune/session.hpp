#pragma once

#include "tracetune/prompt.hpp"
#include "tracetune/refinement.hpp"

#include <json.hpp>

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace tracetune {

inline constexpr std::string_view kSessionSchema = "tracetune/session/v1";

class ImageStore;

/// What the user asked for when a node was produced.
struct RefinementRecord {
    RefineMode mode = RefineMode::Global;
    std::string instruction;
    std::optional<std::string> label;
    std::optional<std::string> reference_digest;
    std::optional<RegionSelection> selection;
    std::optional<std::string> region_prompt; ///< inpaint results only

    bool operator==(const RefinementRecord&) const = default;
};

/// Immutable once created.
struct SessionNode {
    std::string node_id;
    std::optional<std::string> parent_id;
    std::string image_digest;
    StructuredPrompt prompt;
    Seed seed = 0;
    Method method = Method::Initial;
    std::optional<RefinementRecord> record;
    std::string created_at;

    bool operator==(const SessionNode&) const = default;
};

struct Session {
    std::string session_id;
    std::string initial_input;
    std::map<std::string, SessionNode> nodes; ///< ids sort in creation order
    std::string active_node_id;
    std::vector<ErrorInfo> errors; ///< generation slots that failed

    const SessionNode& node(const std::string& id) const; ///< throws UnknownNode
    bool contains(const std::string& id) const { return nodes.contains(id); }
    std::vector<std::string> roots() const;
    std::vector<std::string> children(const std::string& id) const;
    /// Root first, ending with `id`.
    std::vector<std::string> lineage(const std::string& id) const;
    bool has_inpaint_lineage(const std::string& id) const;
    std::string next_node_id() const;

    bool operator==(const Session&) const = default;
};

/// Throws Error(InvalidArgument) describing the first violated invariant:
/// roots are exactly the initial nodes, parents exist, no cycles, active
/// node exists, at most one parent per node.
void check_forest(const Session& s);

/// Four new children of `parent`, one per successful slot, in slot order.
/// Failed slots become session error records. Images go to `images`.
Session attach_batch(Session s, const std::string& parent, const GenerationBatch& batch, ImageStore& images,
                     const RefinementRecord& record, const std::string& created_at,
                     std::vector<std::optional<std::string>>* child_ids = nullptr);

/// Revert is selecting an ancestor; nothing is ever deleted.
Session select_node(Session s, const std::string& node_id);

nlohmann::json session_to_json(const Session& s);
Session session_from_json(const nlohmann::json& j); ///< throws MalformedDocument

nlohmann::json record_to_json(const RefinementRecord& r);
RefinementRecord record_from_json(const nlohmann::json& j);

/// Archive layout: <dir>/session.json + <dir>/images/<digest>.png, covering
/// node images and reference images named by records.
void export_session(const Session& s, const ImageStore& images, const std::filesystem::path& dir);
/// Throws StorageFailure naming the digest of a missing or corrupt image.
/// When `into` is given, the archive's images are copied there.
Session import_session(const std::filesystem::path& dir, ImageStore* into = nullptr);

} // namespace tracetune
