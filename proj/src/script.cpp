#include "tracetune/script.hpp"

#include "tracetune/wire.hpp"

#include <chrono>
#include <fstream>
#include <regex>
#include <set>
#include <sstream>

namespace tracetune {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

enum class Kind { Nodes, Resolution, Suggestions };

struct OpSpec {
    std::set<std::string> required;
    std::set<std::string> optional;
};

const std::map<std::string, OpSpec>& op_specs() {
    static const std::map<std::string, OpSpec> specs{
        {"generate", {{"input"}, {"as"}}},
        {"resolve", {{"node", "selection"}, {"as"}}},
        {"refine", {{"node", "mode"}, {"instruction", "label", "selection", "reference", "randomize_seed", "as"}}},
        {"select", {{"node"}, {}}},
        {"suggest", {{"kind", "node"}, {"label", "input", "as"}}},
        {"expect", {{"check"}, {}}},
    };
    return specs;
}

struct CheckSpec {
    std::set<std::string> required;
    std::set<std::string> optional;
    std::optional<Kind> of; ///< kind the "of" name must have
};

const std::map<std::string, CheckSpec>& check_specs() {
    static const std::map<std::string, CheckSpec> specs{
        {"rank1", {{"of", "label"}, {}, Kind::Resolution}},
        {"label_count", {{"of", "count"}, {}, Kind::Resolution}},
        {"batch_shape", {{"of"}, {"size", "seed", "inpaint", "global", "status"}, Kind::Nodes}},
        {"diff_confined", {{"of"}, {"label", "allow_added"}, Kind::Nodes}},
        {"inpaint_locality", {{"of"}, {}, Kind::Nodes}},
        {"seed_equals_parent", {{"of"}, {}, Kind::Nodes}},
        {"image_equals_parent", {{"node"}, {}, std::nullopt}},
        {"may_overwrite_inpaint", {{"of", "value"}, {}, Kind::Nodes}},
        {"suggestion_count", {{"of", "count"}, {}, Kind::Suggestions}},
        {"tree_size", {{"count"}, {"children_of"}, std::nullopt}},
        {"active", {{"node"}, {}, std::nullopt}},
        {"prompt_has", {{"node", "label", "contains"}, {}, std::nullopt}},
    };
    return specs;
}

const std::regex& ref_pattern() {
    static const std::regex re(R"(^([A-Za-z_][A-Za-z0-9_\-]*)(?:\[(\d+)\])?$)");
    return re;
}

[[noreturn]] void parse_fail(std::size_t line, const std::string& msg) {
    throw Error(ErrorCode::ScriptParseError, "line " + std::to_string(line) + ": " + msg, "line " + std::to_string(line));
}

void check_keys(std::size_t line, const json& obj, const std::set<std::string>& required,
                const std::set<std::string>& optional, const std::set<std::string>& fixed) {
    for (const auto& k : required) {
        if (!obj.contains(k)) parse_fail(line, "missing field '" + k + "'");
    }
    for (const auto& [k, v] : obj.items()) {
        if (!required.contains(k) && !optional.contains(k) && !fixed.contains(k)) {
            parse_fail(line, "unknown field '" + k + "'");
        }
    }
}

void expect_string(std::size_t line, const json& obj, const char* key) {
    if (obj.contains(key) && !obj[key].is_string()) parse_fail(line, std::string("field '") + key + "' must be a string");
}

void expect_count(std::size_t line, const json& obj, const char* key) {
    if (obj.contains(key) && !(obj[key].is_number_unsigned() || (obj[key].is_number_integer() && obj[key].get<long>() >= 0))) {
        parse_fail(line, std::string("field '") + key + "' must be a non-negative integer");
    }
}

std::string ref_name(std::size_t line, const json& v, const std::map<std::string, Kind>& names, Kind want) {
    if (!v.is_string()) parse_fail(line, "reference must be a string");
    std::smatch m;
    const std::string s = v.get<std::string>();
    if (!std::regex_match(s, m, ref_pattern())) parse_fail(line, "malformed reference '" + s + "'");
    auto it = names.find(m[1]);
    if (it == names.end()) parse_fail(line, "'" + std::string(m[1]) + "' is not bound by an earlier step");
    if (it->second != want) parse_fail(line, "'" + std::string(m[1]) + "' names the wrong kind of result");
    if (want != Kind::Nodes && m[2].matched) parse_fail(line, "only node results can be indexed");
    return m[1];
}

} // namespace

Script parse_script(std::string_view text, std::string name) {
    Script script;
    script.name = std::move(name);
    std::map<std::string, Kind> names;
    bool generated = false;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        const auto first = raw.find_first_not_of(" \t\r");
        if (first == std::string::npos || raw[first] == '#') continue;
        json obj;
        try {
            obj = json::parse(raw);
        } catch (const json::parse_error& e) {
            parse_fail(line, std::string("not a JSON object: ") + e.what());
        }
        if (!obj.is_object()) parse_fail(line, "step must be a JSON object");
        if (!obj.contains("op") || !obj["op"].is_string()) parse_fail(line, "missing field 'op'");
        const std::string op = obj["op"];
        const auto spec = op_specs().find(op);
        if (spec == op_specs().end()) parse_fail(line, "unknown op '" + op + "'");

        if (op == "expect") {
            expect_string(line, obj, "check");
            const auto cs = check_specs().find(obj["check"].get<std::string>());
            if (cs == check_specs().end()) parse_fail(line, "unknown check '" + obj["check"].get<std::string>() + "'");
            check_keys(line, obj, cs->second.required, cs->second.optional, {"op", "check"});
            if (cs->second.of) ref_name(line, obj["of"], names, *cs->second.of);
            for (const char* k : {"node", "children_of"}) {
                if (obj.contains(k)) ref_name(line, obj[k], names, Kind::Nodes);
            }
            for (const char* k : {"count", "size", "seed", "inpaint", "global"}) expect_count(line, obj, k);
            for (const char* k : {"label", "status", "contains"}) expect_string(line, obj, k);
            if (obj.contains("value") && !obj["value"].is_boolean()) parse_fail(line, "field 'value' must be a boolean");
            if (obj.contains("allow_added") &&
                (!obj["allow_added"].is_array() ||
                 !std::all_of(obj["allow_added"].begin(), obj["allow_added"].end(), [](const json& x) { return x.is_string(); }))) {
                parse_fail(line, "field 'allow_added' must be an array of strings");
            }
        } else {
            check_keys(line, obj, spec->second.required, spec->second.optional, {"op"});
            for (const char* k : {"input", "instruction", "label", "reference", "mode", "kind", "as"}) expect_string(line, obj, k);
            if (op == "generate") {
                if (generated) parse_fail(line, "a script creates exactly one session");
                generated = true;
            } else if (!generated) {
                parse_fail(line, "'" + op + "' before 'generate'");
            }
            if (obj.contains("node")) ref_name(line, obj["node"], names, Kind::Nodes);
            if (obj.contains("mode")) {
                try {
                    refine_mode_from_string(obj["mode"].get<std::string>());
                } catch (const Error& e) {
                    parse_fail(line, e.what());
                }
            }
            if (obj.contains("kind")) {
                try {
                    suggestion_kind_from_string(obj["kind"].get<std::string>());
                } catch (const Error& e) {
                    parse_fail(line, e.what());
                }
            }
            if (obj.contains("selection")) {
                try {
                    wire::selection_from_json(obj["selection"]);
                } catch (const Error& e) {
                    parse_fail(line, e.what());
                }
            }
            if (obj.contains("randomize_seed") && !obj["randomize_seed"].is_boolean()) {
                parse_fail(line, "field 'randomize_seed' must be a boolean");
            }
            const std::string as = obj.value("as", op == "generate" ? "root" : "");
            if (!as.empty()) {
                std::smatch m;
                if (!std::regex_match(as, m, ref_pattern()) || m[2].matched) parse_fail(line, "malformed name '" + as + "'");
                const Kind k = op == "resolve" ? Kind::Resolution : op == "suggest" ? Kind::Suggestions : Kind::Nodes;
                if (!names.emplace(as, k).second) parse_fail(line, "name '" + as + "' is already bound");
            }
        }
        script.steps.push_back({line, op, std::move(obj)});
    }
    if (script.steps.empty()) throw Error(ErrorCode::ScriptParseError, "script has no steps", script.name);
    return script;
}

Script load_script(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::ScriptParseError, "cannot read script", path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_script(buf.str(), path.filename().string());
}

json RunReport::to_json(bool with_timing) const {
    json steps_json = json::array();
    for (const auto& s : steps) {
        json j{{"line", s.line}, {"op", s.op}, {"name", s.name}, {"detail", s.detail}};
        if (with_timing) j["elapsed_ms"] = s.elapsed_ms;
        steps_json.push_back(std::move(j));
    }
    json summary{{"steps", steps.size()}, {"refine_steps", refine_steps}, {"iterations", refine_steps},
                 {"nodes", node_count}};
    if (with_timing) summary["elapsed_ms"] = elapsed_ms;
    return json{{"schema", kReportSchema},
                {"script", script},
                {"status", status},
                {"session_id", session_id},
                {"summary", summary},
                {"steps", steps_json},
                {"failure", failure ? wire::to_json(*failure) : json(nullptr)}};
}

ScriptRunner::ScriptRunner(Studio& studio, fs::path base_dir) : studio_(studio), base_dir_(std::move(base_dir)) {}

const ScriptRunner::Binding& ScriptRunner::binding(const std::string& name) const {
    auto it = bindings_.find(name);
    if (it == bindings_.end()) throw Error(ErrorCode::InvalidArgument, "unbound name", name);
    return it->second;
}

std::string ScriptRunner::node_ref(const std::string& ref) const {
    std::smatch m;
    if (!std::regex_match(ref, m, ref_pattern())) throw Error(ErrorCode::InvalidArgument, "malformed reference", ref);
    const Binding& b = binding(m[1]);
    if (m[2].matched) {
        const auto k = std::stoul(m[2]);
        if (k >= b.nodes.size()) throw Error(ErrorCode::InvalidArgument, "slot out of range", ref);
        if (!b.nodes[k]) throw Error(ErrorCode::InvalidArgument, "slot produced no node", ref);
        return *b.nodes[k];
    }
    for (const auto& n : b.nodes) {
        if (n) return *n;
    }
    throw Error(ErrorCode::InvalidArgument, "step produced no node", ref);
}

namespace {

json labels_json(const std::vector<LabelScore>& labels) {
    json out = json::array();
    for (const auto& l : labels) out.push_back({{"label", l.label}, {"score", l.score}});
    return out;
}

json nodes_json(const std::vector<std::optional<std::string>>& ids) {
    json out = json::array();
    for (const auto& id : ids) out.push_back(id ? json(*id) : json(nullptr));
    return out;
}

} // namespace

json ScriptRunner::execute(const ScriptStep& step, std::size_t refine_ordinal) {
    const json& a = step.args;
    const std::string as = a.value("as", "");
    if (step.op == "generate") {
        session_ = studio_.create_session(a["input"].get<std::string>());
        Binding b;
        json seeds = json::array();
        for (const auto& id : session_->roots()) {
            b.nodes.push_back(id);
            seeds.push_back(session_->node(id).seed);
        }
        bindings_[as.empty() ? "root" : as] = std::move(b);
        return {{"session_id", session_->session_id}, {"roots", session_->roots()}, {"seeds", seeds},
                {"errors", session_->errors.size()}};
    }
    if (step.op == "resolve") {
        const std::string node = node_ref(a["node"]);
        ResolveResult r = studio_.resolve(session_->session_id, node, wire::selection_from_json(a["selection"]));
        json out{{"node", node}, {"labels", labels_json(r.labels)}, {"bbox", wire::to_json(r.bbox)}};
        if (!as.empty()) {
            Binding b;
            b.resolution = std::move(r);
            bindings_[as] = std::move(b);
        }
        return out;
    }
    if (step.op == "refine") {
        const std::string node = node_ref(a["node"]);
        RefineInput in;
        in.mode = refine_mode_from_string(a["mode"].get<std::string>());
        if (a.contains("instruction")) in.instruction = a["instruction"].get<std::string>();
        if (a.contains("label")) in.label = a["label"].get<std::string>();
        if (a.contains("selection")) in.selection = wire::selection_from_json(a["selection"]);
        in.randomize_seed = a.value("randomize_seed", false);
        if (a.contains("reference")) {
            fs::path p = a["reference"].get<std::string>();
            if (p.is_relative()) p = base_dir_ / p;
            std::ifstream f(p, std::ios::binary);
            if (!f) throw Error(ErrorCode::StorageFailure, "cannot read reference image", p.string());
            const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
            in.reference_digest = studio_.add_reference(bytes).digest;
        }
        RefineOutcome r = studio_.refine(session_->session_id, node, in);
        session_ = r.session;
        json methods = json::array();
        json errors = json::array();
        for (const auto& item : r.batch.items) {
            methods.push_back(item.ok() ? json(std::string(to_string(item.result->method))) : json(nullptr));
            if (!item.ok()) errors.push_back(wire::to_json(*item.error));
        }
        json out{{"node", node},
                 {"iteration", refine_ordinal},
                 {"mode", std::string(to_string(in.mode))},
                 {"label", r.batch.label ? json(*r.batch.label) : json(nullptr)},
                 {"children", nodes_json(r.child_ids)},
                 {"methods", methods},
                 {"status", std::string(to_string(r.batch.status()))},
                 {"may_overwrite_inpaint", r.batch.may_overwrite_inpaint},
                 {"errors", errors}};
        Binding b;
        b.nodes = std::move(r.child_ids);
        b.batch = std::move(r.batch);
        b.parent = node;
        if (!as.empty()) bindings_[as] = std::move(b);
        return out;
    }
    if (step.op == "select") {
        const std::string node = node_ref(a["node"]);
        session_ = studio_.select(session_->session_id, node);
        return {{"active", node}};
    }
    if (step.op == "suggest") {
        SuggestInput in;
        in.kind = suggestion_kind_from_string(a["kind"].get<std::string>());
        in.session_id = session_->session_id;
        in.node_id = node_ref(a["node"]);
        if (a.contains("label")) in.label = a["label"].get<std::string>();
        if (a.contains("input")) in.input = a["input"].get<std::string>();
        SuggestionSet set = studio_.suggest(in);
        json items = json::array();
        for (const auto& s : set.items) items.push_back({{"text", s.text}, {"tag", s.tag}});
        if (!as.empty()) {
            Binding b;
            b.suggestions = std::move(set);
            bindings_[as] = std::move(b);
        }
        return {{"node", in.node_id}, {"kind", a["kind"]}, {"items", items}};
    }
    return check(step);
}

namespace {

[[noreturn]] void fail(const ScriptStep& step, const std::string& msg) {
    throw Error(ErrorCode::AssertionFailed,
                "line " + std::to_string(step.line) + " (" + step.args["check"].get<std::string>() + "): " + msg,
                "line " + std::to_string(step.line));
}

} // namespace

json ScriptRunner::check(const ScriptStep& step) {
    const json& a = step.args;
    const std::string kind = a["check"];
    auto of = [&]() -> const Binding& { return binding(a["of"].get<std::string>()); };

    if (kind == "rank1") {
        const auto& labels = of().resolution->labels;
        const std::string want = normalize_label(a["label"].get<std::string>());
        const std::string got = labels.empty() ? "<none>" : labels.front().label;
        if (normalize_label(got) != want) fail(step, "rank-1 label is '" + got + "', expected '" + want + "'");
        return {{"label", got}};
    }
    if (kind == "label_count") {
        const auto n = of().resolution->labels.size();
        if (n != a["count"].get<std::size_t>()) fail(step, std::to_string(n) + " labels returned");
        return {{"count", n}};
    }
    if (kind == "suggestion_count") {
        const auto n = of().suggestions->items.size();
        if (n != a["count"].get<std::size_t>()) fail(step, std::to_string(n) + " suggestions returned");
        return {{"count", n}};
    }
    if (kind == "tree_size") {
        const Session s = studio_.session(session_->session_id);
        const std::size_t n = a.contains("children_of") ? s.children(node_ref(a["children_of"])).size() : s.nodes.size();
        if (n != a["count"].get<std::size_t>()) fail(step, "found " + std::to_string(n) + " nodes");
        return {{"count", n}};
    }
    if (kind == "active") {
        const Session s = studio_.session(session_->session_id);
        const std::string want = node_ref(a["node"]);
        if (s.active_node_id != want) fail(step, "active node is " + s.active_node_id + ", expected " + want);
        return {{"active", want}};
    }
    if (kind == "prompt_has") {
        const Session s = studio_.session(session_->session_id);
        const std::string node = node_ref(a["node"]);
        const ContentElement* e = s.node(node).prompt.find(a["label"].get<std::string>());
        if (!e) fail(step, "node " + node + " has no label '" + a["label"].get<std::string>() + "'");
        if (e->description.find(a["contains"].get<std::string>()) == std::string::npos) {
            fail(step, "segment '" + e->description + "' lacks '" + a["contains"].get<std::string>() + "'");
        }
        return {{"segment", e->description}};
    }
    if (kind == "image_equals_parent") {
        const Session s = studio_.session(session_->session_id);
        const SessionNode& n = s.node(node_ref(a["node"]));
        if (!n.parent_id) fail(step, "node " + n.node_id + " is a root");
        if (n.image_digest != s.node(*n.parent_id).image_digest) fail(step, "image of " + n.node_id + " differs from its parent");
        return {{"digest", n.image_digest}};
    }

    const Binding& b = of();
    if (!b.batch) fail(step, "'" + a["of"].get<std::string>() + "' is not a refinement");
    const GenerationBatch& batch = *b.batch;
    const Session s = studio_.session(session_->session_id);
    const SessionNode& parent = s.node(b.parent);

    if (kind == "batch_shape") {
        const std::size_t size = a.value("size", static_cast<std::size_t>(kBatchSize));
        if (batch.items.size() != size) fail(step, "batch has " + std::to_string(batch.items.size()) + " slots");
        const std::pair<const char*, Method> per[]{{"seed", Method::Seed}, {"inpaint", Method::Inpaint}, {"global", Method::Global}};
        json counts = json::object();
        for (const auto& [key, m] : per) {
            counts[key] = batch.count(m);
            if (a.contains(key) && batch.count(m) != a[key].get<std::size_t>()) {
                fail(step, std::to_string(batch.count(m)) + " " + key + " results");
            }
        }
        const std::string status(to_string(batch.status()));
        if (a.contains("status") && status != a["status"].get<std::string>()) fail(step, "batch status is " + status);
        return {{"size", batch.items.size()}, {"counts", counts}, {"status", status}};
    }
    if (kind == "may_overwrite_inpaint") {
        if (batch.may_overwrite_inpaint != a["value"].get<bool>()) fail(step, "flag is the opposite");
        return {{"value", batch.may_overwrite_inpaint}};
    }
    if (kind == "diff_confined") {
        std::set<std::string> allowed;
        for (const auto& x : a.value("allow_added", json::array())) allowed.insert(normalize_label(x.get<std::string>()));
        if (!batch.label && !a.contains("label")) {
            // a global pass restyles freely but leaves existing content alone
            if (batch.mode != RefineMode::Global) fail(step, "refinement has no label");
            std::size_t checked = 0;
            for (const auto& id : b.nodes) {
                if (!id) continue;
                const PromptDiff d = diff_prompts(parent.prompt, s.node(*id).prompt);
                if (!d.changed_labels.empty()) fail(step, *id + " changed label '" + *d.changed_labels.begin() + "'");
                if (!d.removed_labels.empty()) fail(step, *id + " removed label '" + *d.removed_labels.begin() + "'");
                for (const auto& l : d.added_labels) {
                    if (!allowed.contains(normalize_label(l))) fail(step, *id + " added label '" + l + "'");
                }
                ++checked;
            }
            return {{"label", nullptr}, {"checked", checked}};
        }
        const std::string label = normalize_label(a.value("label", batch.label.value_or("")));
        std::size_t checked = 0;
        for (const auto& id : b.nodes) {
            if (!id) continue;
            const PromptDiff d = diff_prompts(parent.prompt, s.node(*id).prompt);
            for (Category c : d.changed_categories) {
                if (c != Category::Content) fail(step, *id + " changed category " + std::string(to_string(c)));
            }
            for (const auto& l : d.changed_labels) {
                if (normalize_label(l) != label) fail(step, *id + " changed label '" + l + "'");
            }
            for (const auto& l : d.added_labels) {
                if (!allowed.contains(normalize_label(l))) fail(step, *id + " added label '" + l + "'");
            }
            for (const auto& l : d.removed_labels) {
                if (normalize_label(l) != label) fail(step, *id + " removed label '" + l + "'");
            }
            ++checked;
        }
        return {{"label", label}, {"checked", checked}};
    }
    if (kind == "inpaint_locality") {
        if (!batch.mask) fail(step, "refinement has no mask");
        const auto before = studio_.images().get(parent.image_digest);
        std::size_t checked = 0;
        for (std::size_t k = 0; k < batch.items.size(); ++k) {
            const auto& item = batch.items[k];
            if (!item.ok() || item.result->method != Method::Inpaint) continue;
            const auto after = studio_.images().get(s.node(*b.nodes[k]).image_digest);
            if (after->width() != before->width() || after->height() != before->height()) fail(step, "size changed");
            for (int y = 0; y < before->height(); ++y) {
                for (int x = 0; x < before->width(); ++x) {
                    if (batch.mask->get(x, y)) continue;
                    if (!std::equal(before->at(x, y), before->at(x, y) + 3, after->at(x, y))) {
                        fail(step, "slot " + std::to_string(k) + " differs outside the mask at " + std::to_string(x) +
                                       "," + std::to_string(y));
                    }
                }
            }
            ++checked;
        }
        return {{"checked", checked}};
    }
    if (kind == "seed_equals_parent") {
        Seed expect = parent.seed;
        std::size_t checked = 0;
        for (const auto& id : b.nodes) {
            if (!id || s.node(*id).method != Method::Seed) continue;
            if (s.node(*id).seed != expect) {
                fail(step, *id + " has seed " + std::to_string(s.node(*id).seed) + ", expected " + std::to_string(expect));
            }
            ++expect;
            ++checked;
        }
        if (checked == 0) fail(step, "refinement has no seed-mode results");
        return {{"parent_seed", parent.seed}, {"checked", checked}};
    }
    fail(step, "unhandled check");
}

RunReport ScriptRunner::run(const Script& script) {
    using clock = std::chrono::steady_clock;
    RunReport report;
    report.script = script.name;
    session_.reset();
    bindings_.clear();
    const auto start = clock::now();
    for (const auto& step : script.steps) {
        StepReport sr;
        sr.line = step.line;
        sr.op = step.op;
        sr.name = step.args.value("as", "");
        const auto t0 = clock::now();
        try {
            if (step.op == "refine") ++report.refine_steps;
            sr.detail = execute(step, report.refine_steps);
        } catch (const Error& e) {
            report.status = e.code() == ErrorCode::AssertionFailed ? "failed" : "error";
            ErrorInfo info = ErrorInfo::from(e);
            if (e.code() != ErrorCode::AssertionFailed) info.detail = "line " + std::to_string(step.line) + ": " + info.detail;
            report.failure = info;
        }
        sr.elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - t0).count();
        report.steps.push_back(std::move(sr));
        if (report.failure) break;
    }
    report.elapsed_ms = std::chrono::duration<double, std::milli>(clock::now() - start).count();
    if (session_) {
        report.session_id = session_->session_id;
        report.node_count = studio_.session(session_->session_id).nodes.size();
    }
    return report;
}

} // namespace tracetune
