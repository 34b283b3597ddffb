#include "support.hpp"
#include "tracetune/config.hpp"

#include <algorithm>
#include <unistd.h>

namespace tt_test {

namespace fs = std::filesystem;

TempDir::TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("tt-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter.fetch_add(1)));
    fs::remove_all(path);
    fs::create_directories(path);
}

TempDir::~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
}

StructuredPrompt make_prompt(std::vector<ContentElement> content) {
    StructuredPrompt p;
    p.theme = "a test scene";
    p.art_style = "flat illustration";
    p.content = std::move(content);
    p.lighting = "even daylight";
    p.color = "primary colors";
    p.shot_angle = "front view";
    return p;
}

StructuredPrompt random_prompt(std::mt19937_64& rng, int n) {
    static const char* nouns[] = {"tree", "house", "river", "car", "lamp", "bridge", "tower", "cat",
                                  "boat", "cloud", "hill", "flag", "road", "bird", "sign", "wall"};
    std::vector<ContentElement> content;
    for (int i = 0; i < n; ++i) {
        ContentElement e;
        e.label = std::string(nouns[rng() % 16]) + " " + std::to_string(i);
        e.description = "description of " + e.label + " #" + std::to_string(rng() % 1000);
        if (i > 0 && rng() % 3 == 0) e.parent_label = content[rng() % i].label;
        content.push_back(std::move(e));
    }
    auto p = make_prompt(std::move(content));
    p.theme += " " + std::to_string(rng() % 100);
    return p;
}

mock::SceneFixture grid_scene(int n, int width, int height) {
    mock::SceneFixture scene;
    scene.width = width;
    scene.height = height;
    const int cols = 4;
    const int rows = (n + cols - 1) / cols;
    const int cw = width / cols;
    const int ch = height / std::max(rows, 1);
    for (int i = 0; i < n; ++i) {
        mock::SceneBlob b;
        b.label = "object " + std::to_string(i);
        // distinct, non-gray colors
        b.color = {static_cast<std::uint8_t>(40 + (i * 53) % 200), static_cast<std::uint8_t>(30 + (i * 97) % 200),
                   static_cast<std::uint8_t>(20 + (i * 151) % 200)};
        const int c = i % cols;
        const int r = i / cols;
        b.box = {c * cw + cw / 8, r * ch + ch / 8, c * cw + cw - cw / 8, r * ch + ch - ch / 8};
        b.shape = (i % 2 == 0) ? mock::SceneBlob::Shape::Rect : mock::SceneBlob::Shape::Ellipse;
        b.keywords = {b.label + ";"};
        scene.blobs.push_back(b);
    }
    return scene;
}

StructuredPrompt prompt_for_scene(const mock::SceneFixture& scene) {
    std::vector<ContentElement> content;
    for (const auto& b : scene.blobs) content.push_back(el(b.label, "a painted " + b.label + ";"));
    return make_prompt(std::move(content));
}

namespace {

std::string suggestions_json(const TextRequest& r, std::size_t n, const std::string& tag_a, const std::string& tag_b) {
    nlohmann::json items = nlohmann::json::array();
    auto it = r.variables.find("label");
    const std::string base = r.template_id + " " + (it == r.variables.end() ? std::string() : it->second);
    for (std::size_t i = 0; i < n; ++i) {
        const std::string text = "idea " + std::to_string(i) + " for " + base;
        if (tag_a.empty()) {
            items.push_back(text);
        } else {
            items.push_back({{"tag", i < n / 2 ? tag_a : tag_b}, {"text", text}});
        }
    }
    return nlohmann::json{{"suggestions", items}}.dump();
}

} // namespace

std::shared_ptr<mock::FunctionTextProvider> echo_text(StructuredPrompt root) {
    return std::make_shared<mock::FunctionTextProvider>([root](const TextRequest& r) -> std::string {
        const auto var = [&](const char* k) {
            auto it = r.variables.find(k);
            return it == r.variables.end() ? std::string() : it->second;
        };
        if (r.template_id == tmpl::kBrainstorm) return serialize_structured_prompt(root);
        if (r.template_id == tmpl::kGlobalRefine) {
            auto p = parse_structured_prompt(var("prompt"));
            p.lighting += ", " + var("instruction");
            return serialize_structured_prompt(p);
        }
        if (r.template_id == tmpl::kPromptRefine) {
            auto p = parse_structured_prompt(var("prompt"));
            const std::string key = normalize_label(var("label"));
            for (auto& e : p.content) {
                if (normalize_label(e.label) == key) e.description += ", " + var("instruction");
            }
            return serialize_structured_prompt(p);
        }
        if (r.template_id == tmpl::kInpaintPrompt) return var("label") + " region: " + var("instruction");
        if (r.template_id == tmpl::kInpaintMerge) return var("prompt");
        if (r.template_id == tmpl::kSuggestGlobal) return suggestions_json(r, 5, "", "");
        if (r.template_id == tmpl::kSuggestExpanded) return suggestions_json(r, 5, "", "");
        if (r.template_id == tmpl::kSuggestLabel) return suggestions_json(r, 6, "refine", "replace");
        throw Error(ErrorCode::UnscriptedInput, "echo text mock has no rule", r.template_id);
    });
}

std::unique_ptr<Studio> mock_studio(const mock::SceneFixture& scene, std::shared_ptr<TextProvider> text,
                                    const fs::path& dir, std::uint64_t rng_seed) {
    StudioOptions o;
    o.image_dir = dir / "images";
    o.rng_seed = rng_seed;
    o.clock = [] { return std::string("1970-01-01T00:00:00Z"); };
    return std::make_unique<Studio>(mock::make_mock_providers(scene, std::move(text)), o);
}

fs::path source_dir() { return fs::path(TRACETUNE_SOURCE_DIR); }

std::filesystem::path golden_dir(const std::string& name) { return source_dir() / "fixtures" / "golden" / name; }

std::vector<std::string> golden_names() {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(source_dir() / "fixtures" / "golden"))
        if (e.is_directory()) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

RunReport run_golden(const std::string& name, const std::filesystem::path& dir, std::unique_ptr<Studio>* keep) {
    const auto base = golden_dir(name);
    const Environment no_env = [](const std::string&) -> std::optional<std::string> { return std::nullopt; };
    const auto cfg = load_provider_config((base / "config.json").string(), no_env);
    StudioOptions o;
    o.image_dir = dir / "images";
    o.rng_seed = cfg.rng_seed;
    o.clock = [] { return std::string("1970-01-01T00:00:00Z"); };
    auto studio = std::make_unique<Studio>(build_providers(cfg, no_env), o);
    ScriptRunner runner(*studio, base);
    auto report = runner.run(load_script(base / (name + ".jsonl")));
    if (keep) *keep = std::move(studio);
    return report;
}

} // namespace tt_test
