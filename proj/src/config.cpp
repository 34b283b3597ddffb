#include "tracetune/config.hpp"

#include "tracetune/live.hpp"
#include "tracetune/mocks.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

namespace tracetune {

namespace fs = std::filesystem;

namespace {

const std::set<std::string> kCommonKeys{"kind",  "endpoint", "model",         "credential_env",
                                        "timeout_s", "retries", "max_in_flight", "template_set"};

std::string resolve(const std::string& base_dir, const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
    return (fs::path(base_dir) / path).lexically_normal().string();
}

nlohmann::json inline_or_file(const nlohmann::json& v, const std::string& base_dir, const char* what) {
    if (!v.is_string()) return v;
    const std::string path = resolve(base_dir, v.get<std::string>());
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedConfig, std::string("cannot read ") + what, path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedConfig, std::string(what) + " is not JSON", path);
    }
}

ProviderSettings parse_settings(const std::string& slot, const nlohmann::json& j, const std::string& base_dir) {
    if (!j.is_object()) throw Error(ErrorCode::MalformedConfig, "provider entry must be an object", slot);
    ProviderSettings s;
    try {
        const std::string kind = j.value("kind", "mock");
        if (kind == "mock") {
            s.kind = ProviderKind::Mock;
        } else if (kind == "live") {
            s.kind = ProviderKind::Live;
        } else {
            throw Error(ErrorCode::MalformedConfig, "provider kind must be mock or live", slot + ".kind");
        }
        s.endpoint = j.value("endpoint", "");
        s.model = j.value("model", "");
        s.credential_env = j.value("credential_env", "");
        s.timeout_s = j.value("timeout_s", s.timeout_s);
        s.retries = j.value("retries", s.retries);
        s.max_in_flight = j.value("max_in_flight", s.max_in_flight);
        s.template_set = j.value("template_set", s.template_set);
        for (const auto& [k, v] : j.items()) {
            if (!kCommonKeys.contains(k)) s.options[k] = v;
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedConfig, "invalid provider entry", slot + ": " + e.what());
    }
    if (!(s.timeout_s > 0.0)) throw Error(ErrorCode::MalformedConfig, "timeout must be positive", slot + ".timeout_s");
    if (s.retries < 0) throw Error(ErrorCode::MalformedConfig, "retries must be non-negative", slot + ".retries");
    if (s.max_in_flight < 1) {
        throw Error(ErrorCode::MalformedConfig, "max_in_flight must be at least 1", slot + ".max_in_flight");
    }
    if (s.kind == ProviderKind::Live) {
        if (s.endpoint.empty()) throw Error(ErrorCode::MalformedConfig, "live provider needs an endpoint", slot);
        live::Url::parse(s.endpoint);
        if (slot == "embedding" && s.options.value("dimension", 0) <= 0) {
            throw Error(ErrorCode::MalformedConfig, "live embedding provider needs a positive dimension",
                        "embedding.dimension");
        }
    } else if (slot == "text" && s.options.contains("script")) {
        s.options["script"] = inline_or_file(s.options["script"], base_dir, "text script");
    }
    return s;
}

} // namespace

Environment process_environment() {
    return [](const std::string& name) -> std::optional<std::string> {
        if (const char* v = std::getenv(name.c_str())) return std::string(v);
        return std::nullopt;
    };
}

const ProviderSettings& ProviderConfig::settings(const std::string& slot) const {
    auto it = providers.find(slot);
    if (it == providers.end()) throw Error(ErrorCode::MalformedConfig, "unknown provider slot", slot);
    return it->second;
}

bool ProviderConfig::mock_only() const {
    for (const auto& [slot, s] : providers) {
        if (s.kind != ProviderKind::Mock) return false;
    }
    return true;
}

nlohmann::json ProviderConfig::to_json() const {
    nlohmann::json j{{"schema", kConfigSchema}};
    if (!templates_path.empty()) j["templates"] = templates_path;
    if (rng_seed) j["rng_seed"] = *rng_seed;
    if (!scene.is_null()) j["scene"] = scene;
    nlohmann::json ps = nlohmann::json::object();
    for (const auto& [slot, s] : providers) {
        nlohmann::json e = s.options;
        e["kind"] = s.kind == ProviderKind::Mock ? "mock" : "live";
        if (s.kind == ProviderKind::Live) {
            e["endpoint"] = s.endpoint;
            if (!s.model.empty()) e["model"] = s.model;
            if (!s.credential_env.empty()) e["credential_env"] = s.credential_env;
            e["timeout_s"] = s.timeout_s;
            e["retries"] = s.retries;
            e["max_in_flight"] = s.max_in_flight;
            e["template_set"] = s.template_set;
        }
        ps[slot] = std::move(e);
    }
    j["providers"] = std::move(ps);
    return j;
}

ProviderConfig parse_provider_config(std::string_view document, const std::string& base_dir, const Environment& env,
                                     bool mock_only) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(ErrorCode::MalformedConfig, "config is not JSON", e.what());
    }
    if (!doc.is_object() || doc.value("schema", "") != kConfigSchema) {
        throw Error(ErrorCode::MalformedConfig, "config schema must be tracetune/config/v1");
    }

    ProviderConfig cfg;
    cfg.base_dir = base_dir;
    for (const auto& [k, v] : doc.items()) {
        if (k != "schema" && k != "templates" && k != "rng_seed" && k != "scene" && k != "providers") {
            throw Error(ErrorCode::MalformedConfig, "unknown config key", k);
        }
    }
    if (doc.contains("templates")) cfg.templates_path = resolve(base_dir, doc["templates"].get<std::string>());
    if (doc.contains("rng_seed")) cfg.rng_seed = doc["rng_seed"].get<std::uint64_t>();
    if (doc.contains("scene")) cfg.scene = inline_or_file(doc["scene"], base_dir, "scene fixture");

    const auto providers = doc.value("providers", nlohmann::json::object());
    for (const auto& [slot, v] : providers.items()) {
        if (std::find(kProviderSlots.begin(), kProviderSlots.end(), slot) == kProviderSlots.end()) {
            throw Error(ErrorCode::MalformedConfig, "unknown provider slot", slot);
        }
        cfg.providers[slot] = parse_settings(slot, v, base_dir);
    }
    for (const char* slot : kProviderSlots) cfg.providers.try_emplace(slot);

    for (auto& [slot, s] : cfg.providers) {
        if (s.kind != ProviderKind::Live || s.credential_env.empty()) continue;
        if (env(s.credential_env)) continue;
        if (!mock_only) {
            throw Error(ErrorCode::MissingCredential, "credential env var is not set", s.credential_env);
        }
        cfg.missing_credentials.push_back(s.credential_env);
    }
    if (mock_only) {
        for (auto& [slot, s] : cfg.providers) {
            if (s.kind == ProviderKind::Live) s = ProviderSettings{};
        }
    }
    return cfg;
}

ProviderConfig load_provider_config(const std::string& path, const Environment& env, bool mock_only) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::MalformedConfig, "cannot read config file", path);
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_provider_config(ss.str(), fs::path(path).parent_path().string(), env, mock_only);
}

Providers build_providers(const ProviderConfig& config, const Environment& env) {
    const mock::SceneFixture scene =
        config.scene.is_null() ? mock::SceneFixture{} : mock::SceneFixture::from_json(config.scene);
    auto credential = [&](const ProviderSettings& s) {
        return s.credential_env.empty() ? std::string{} : env(s.credential_env).value_or("");
    };

    Providers p;
    p.templates = config.templates_path.empty() ? TemplateSet::defaults() : TemplateSet::load(config.templates_path);

    const auto& text = config.settings("text");
    if (text.kind == ProviderKind::Live) {
        p.text = live::make_text(text, credential(text));
    } else if (text.options.contains("script")) {
        p.text = mock::ScriptedTextProvider::from_json(text.options["script"]);
    } else {
        p.text = std::make_shared<mock::ScriptedTextProvider>();
    }

    const auto& image = config.settings("image");
    if (image.kind == ProviderKind::Live) {
        p.image = live::make_image(image, credential(image));
    } else {
        mock::HashImageProvider::FailurePlan plan;
        plan.fail_first_calls = image.options.value("fail_first_calls", 0);
        for (Seed s : image.options.value("fail_seeds", std::vector<Seed>{})) plan.fail_seeds.insert(s);
        p.image = std::make_shared<mock::HashImageProvider>(scene, plan);
    }

    const auto& inpaint = config.settings("inpaint");
    p.inpaint = inpaint.kind == ProviderKind::Live
                    ? live::make_inpaint(inpaint, credential(inpaint))
                    : std::make_shared<mock::MockInpaintProvider>(scene, inpaint.options.value("bleed", true));

    const auto& seg = config.settings("segmentation");
    p.segmentation = seg.kind == ProviderKind::Live ? live::make_segmentation(seg, credential(seg))
                                                    : std::make_shared<mock::MockSegmentationProvider>(scene);

    const auto& emb = config.settings("embedding");
    p.embedding = emb.kind == ProviderKind::Live ? live::make_embedding(emb, credential(emb))
                                                 : std::static_pointer_cast<EmbeddingProvider>(
                                                       mock::OneHotEmbeddingProvider::from_scene(scene));

    const auto& cap = config.settings("caption");
    if (cap.kind == ProviderKind::Live) {
        p.caption = live::make_caption(cap, credential(cap));
    } else {
        p.caption = std::make_shared<mock::TableCaptionProvider>(
            cap.options.value("captions", std::map<std::string, std::string>{}),
            cap.options.value("default", std::string("a reference photograph")));
    }
    return p;
}

} // namespace tracetune
