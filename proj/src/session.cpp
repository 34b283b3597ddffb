#include "tracetune/session.hpp"

#include "tracetune/digest.hpp"
#include "tracetune/store.hpp"
#include "tracetune/wire.hpp"

#include <cstdio>
#include <fstream>
#include <iterator>
#include <set>

namespace tracetune {

namespace fs = std::filesystem;

const SessionNode& Session::node(const std::string& id) const {
    auto it = nodes.find(id);
    if (it == nodes.end()) throw Error(ErrorCode::UnknownNode, "no such node", id);
    return it->second;
}

std::vector<std::string> Session::roots() const {
    std::vector<std::string> out;
    for (const auto& [id, n] : nodes) {
        if (!n.parent_id) out.push_back(id);
    }
    return out;
}

std::vector<std::string> Session::children(const std::string& id) const {
    node(id);
    std::vector<std::string> out;
    for (const auto& [cid, n] : nodes) {
        if (n.parent_id == id) out.push_back(cid);
    }
    return out;
}

std::vector<std::string> Session::lineage(const std::string& id) const {
    std::vector<std::string> chain;
    const SessionNode* cur = &node(id);
    while (true) {
        chain.push_back(cur->node_id);
        if (!cur->parent_id || chain.size() > nodes.size()) break;
        cur = &node(*cur->parent_id);
    }
    return {chain.rbegin(), chain.rend()};
}

bool Session::has_inpaint_lineage(const std::string& id) const {
    for (const auto& n : lineage(id)) {
        if (node(n).method == Method::Inpaint) return true;
    }
    return false;
}

std::string Session::next_node_id() const {
    char buf[16];
    std::snprintf(buf, sizeof buf, "n%06zu", nodes.size() + 1);
    return buf;
}

void check_forest(const Session& s) {
    if (s.nodes.empty()) throw Error(ErrorCode::InvalidArgument, "session has no nodes", s.session_id);
    if (!s.contains(s.active_node_id)) {
        throw Error(ErrorCode::InvalidArgument, "active node does not exist", s.active_node_id);
    }
    for (const auto& [id, n] : s.nodes) {
        if (id != n.node_id) throw Error(ErrorCode::InvalidArgument, "node key differs from node id", id);
        const bool initial = n.method == Method::Initial;
        if (initial != !n.parent_id) {
            throw Error(ErrorCode::InvalidArgument, "only initial nodes may be roots", id);
        }
        if (n.parent_id && !s.contains(*n.parent_id)) {
            throw Error(ErrorCode::InvalidArgument, "parent does not exist", id + " -> " + *n.parent_id);
        }
        std::size_t steps = 0;
        for (const SessionNode* cur = &n; cur->parent_id; cur = &s.nodes.at(*cur->parent_id)) {
            if (++steps > s.nodes.size()) throw Error(ErrorCode::InvalidArgument, "parent links form a cycle", id);
        }
    }
}

Session attach_batch(Session s, const std::string& parent, const GenerationBatch& batch, ImageStore& images,
                     const RefinementRecord& record, const std::string& created_at,
                     std::vector<std::optional<std::string>>* child_ids) {
    s.node(parent);
    if (child_ids) child_ids->clear();
    for (std::size_t k = 0; k < batch.items.size(); ++k) {
        const BatchItem& item = batch.items[k];
        if (!item.ok()) {
            ErrorInfo e = *item.error;
            e.detail = "parent " + parent + " slot " + std::to_string(k) + (e.detail.empty() ? "" : ": " + e.detail);
            s.errors.push_back(std::move(e));
            if (child_ids) child_ids->push_back(std::nullopt);
            continue;
        }
        const GeneratedImage& g = *item.result;
        SessionNode n;
        n.node_id = s.next_node_id();
        n.parent_id = parent;
        n.image_digest = images.put(g.image);
        n.prompt = g.prompt_after;
        n.seed = g.seed;
        n.method = g.method;
        n.record = record;
        n.record->region_prompt = g.region_prompt;
        n.created_at = created_at;
        if (child_ids) child_ids->push_back(n.node_id);
        s.nodes.emplace(n.node_id, std::move(n));
    }
    return s;
}

Session select_node(Session s, const std::string& node_id) {
    s.node(node_id);
    s.active_node_id = node_id;
    return s;
}

nlohmann::json record_to_json(const RefinementRecord& r) {
    nlohmann::json j{{"mode", std::string(to_string(r.mode))}, {"instruction", r.instruction}};
    j["label"] = r.label ? nlohmann::json(*r.label) : nlohmann::json(nullptr);
    j["reference_digest"] = r.reference_digest ? nlohmann::json(*r.reference_digest) : nlohmann::json(nullptr);
    j["selection"] = r.selection ? wire::to_json(*r.selection) : nlohmann::json(nullptr);
    j["region_prompt"] = r.region_prompt ? nlohmann::json(*r.region_prompt) : nlohmann::json(nullptr);
    return j;
}

namespace {

std::optional<std::string> opt_string(const nlohmann::json& j, const char* key) {
    auto it = j.find(key);
    if (it == j.end() || it->is_null()) return std::nullopt;
    return it->get<std::string>();
}

} // namespace

RefinementRecord record_from_json(const nlohmann::json& j) {
    RefinementRecord r;
    r.mode = refine_mode_from_string(j.at("mode").get<std::string>());
    r.instruction = j.value("instruction", "");
    r.label = opt_string(j, "label");
    r.reference_digest = opt_string(j, "reference_digest");
    if (auto it = j.find("selection"); it != j.end() && !it->is_null()) r.selection = wire::selection_from_json(*it);
    r.region_prompt = opt_string(j, "region_prompt");
    return r;
}

nlohmann::json session_to_json(const Session& s) {
    nlohmann::ordered_json nodes = nlohmann::ordered_json::array();
    for (const auto& [id, n] : s.nodes) {
        nlohmann::ordered_json jn;
        jn["node_id"] = n.node_id;
        jn["parent_id"] = n.parent_id ? nlohmann::ordered_json(*n.parent_id) : nlohmann::ordered_json(nullptr);
        jn["image"] = n.image_digest;
        jn["prompt"] = nlohmann::ordered_json::parse(serialize_structured_prompt(n.prompt));
        jn["seed"] = n.seed;
        jn["method"] = std::string(to_string(n.method));
        jn["record"] = n.record ? nlohmann::ordered_json(record_to_json(*n.record)) : nlohmann::ordered_json(nullptr);
        jn["created_at"] = n.created_at;
        nodes.push_back(std::move(jn));
    }
    nlohmann::ordered_json errors = nlohmann::ordered_json::array();
    for (const auto& e : s.errors) errors.push_back(nlohmann::ordered_json::parse(wire::to_json(e).dump()));
    nlohmann::ordered_json j;
    j["schema"] = kSessionSchema;
    j["session_id"] = s.session_id;
    j["initial_input"] = s.initial_input;
    j["active_node_id"] = s.active_node_id;
    j["nodes"] = std::move(nodes);
    j["errors"] = std::move(errors);
    return nlohmann::json::parse(j.dump());
}

Session session_from_json(const nlohmann::json& j) {
    try {
        if (j.value("schema", "") != kSessionSchema) {
            throw Error(ErrorCode::MalformedDocument, "session schema must be tracetune/session/v1");
        }
        Session s;
        s.session_id = j.at("session_id").get<std::string>();
        s.initial_input = j.at("initial_input").get<std::string>();
        s.active_node_id = j.at("active_node_id").get<std::string>();
        for (const auto& jn : j.at("nodes")) {
            SessionNode n;
            n.node_id = jn.at("node_id").get<std::string>();
            n.parent_id = opt_string(jn, "parent_id");
            n.image_digest = jn.at("image").get<std::string>();
            n.prompt = parse_structured_prompt(jn.at("prompt").dump());
            n.seed = jn.at("seed").get<Seed>();
            n.method = method_from_string(jn.at("method").get<std::string>());
            if (auto it = jn.find("record"); it != jn.end() && !it->is_null()) n.record = record_from_json(*it);
            n.created_at = jn.value("created_at", "");
            if (!s.nodes.emplace(n.node_id, n).second) {
                throw Error(ErrorCode::MalformedDocument, "duplicate node id", n.node_id);
            }
        }
        for (const auto& je : j.value("errors", nlohmann::json::array())) s.errors.push_back(wire::error_from_json(je));
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedDocument, "malformed session document", e.what());
    }
}

namespace {

std::set<std::string> referenced_images(const Session& s) {
    std::set<std::string> out;
    for (const auto& [id, n] : s.nodes) {
        out.insert(n.image_digest);
        if (n.record && n.record->reference_digest) out.insert(*n.record->reference_digest);
    }
    return out;
}

std::vector<std::uint8_t> read_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace

void export_session(const Session& s, const ImageStore& images, const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir / "images", ec);
    if (ec) throw Error(ErrorCode::StorageFailure, "cannot create archive directory", dir.string());
    for (const auto& digest : referenced_images(s)) {
        const fs::path src = images.path_for(digest);
        if (!fs::exists(src)) throw Error(ErrorCode::StorageFailure, "image missing from store", digest);
        fs::copy_file(src, dir / "images" / (digest + ".png"), fs::copy_options::overwrite_existing, ec);
        if (ec) throw Error(ErrorCode::StorageFailure, "cannot copy image into archive", digest);
    }
    std::ofstream out(dir / "session.json", std::ios::trunc);
    out << session_to_json(s).dump(2) << "\n";
    if (!out) throw Error(ErrorCode::StorageFailure, "cannot write session.json", dir.string());
}

Session import_session(const fs::path& dir, ImageStore* into) {
    std::ifstream in(dir / "session.json");
    if (!in) throw Error(ErrorCode::StorageFailure, "archive has no session.json", dir.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::StorageFailure, "session.json is not JSON", e.what());
    }
    Session s = session_from_json(doc);
    check_forest(s);
    for (const auto& digest : referenced_images(s)) {
        const fs::path p = dir / "images" / (digest + ".png");
        if (!fs::exists(p)) throw Error(ErrorCode::StorageFailure, "archive is missing an image", digest);
        const auto bytes = read_bytes(p);
        if (sha256_hex(bytes) != digest) throw Error(ErrorCode::StorageFailure, "image does not match its digest", digest);
        if (into) into->adopt(digest, bytes);
    }
    return s;
}

} // namespace tracetune
