#include "tracetune/mocks.hpp"

#include "tracetune/digest.hpp"
#include "tracetune/error.hpp"
#include "tracetune/kernels.hpp"
#include "tracetune/prompt.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tracetune::mock {

namespace {

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

nlohmann::json read_json_file(const std::string& path, ErrorCode code) {
    std::ifstream in(path);
    if (!in) throw Error(code, "cannot read fixture", path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw Error(code, "fixture is not JSON", path + ": " + e.what());
    }
}

BBox clip(BBox b, int w, int h) {
    return {std::clamp(b.x0, 0, w), std::clamp(b.y0, 0, h), std::clamp(b.x1, 0, w), std::clamp(b.y1, 0, h)};
}

bool has_color(const Image& img, int x, int y, const std::array<std::uint8_t, 3>& c) {
    const std::uint8_t* p = img.at(x, y);
    return p[0] == c[0] && p[1] == c[1] && p[2] == c[2];
}

std::uint32_t pack(const std::uint8_t* p) { return (std::uint32_t(p[0]) << 16) | (std::uint32_t(p[1]) << 8) | p[2]; }

} // namespace

bool SceneBlob::covers(int x, int y) const {
    if (!box.contains(x, y)) return false;
    if (shape == Shape::Rect) return true;
    const double cx = (box.x0 + box.x1) / 2.0;
    const double cy = (box.y0 + box.y1) / 2.0;
    const double rx = box.width() / 2.0;
    const double ry = box.height() / 2.0;
    const double dx = (x + 0.5 - cx) / rx;
    const double dy = (y + 0.5 - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
}

bool SceneBlob::triggered_by(std::string_view prompt_text) const {
    const std::string hay = lower(prompt_text);
    if (keywords.empty()) return hay.find(lower(label)) != std::string::npos;
    return std::any_of(keywords.begin(), keywords.end(),
                       [&](const std::string& k) { return hay.find(lower(k)) != std::string::npos; });
}

SceneFixture SceneFixture::from_json(const nlohmann::json& j) {
    SceneFixture s;
    try {
        s.width = j.value("width", 512);
        s.height = j.value("height", 512);
        s.tile = j.value("tile", 16);
        for (const auto& b : j.value("blobs", nlohmann::json::array())) {
            SceneBlob blob;
            blob.label = b.at("label").get<std::string>();
            const auto c = b.at("color");
            blob.color = {c.at(0).get<std::uint8_t>(), c.at(1).get<std::uint8_t>(), c.at(2).get<std::uint8_t>()};
            blob.shape = b.value("shape", "rect") == "ellipse" ? SceneBlob::Shape::Ellipse : SceneBlob::Shape::Rect;
            const auto box = b.at("box");
            blob.box = {box.at(0).get<int>(), box.at(1).get<int>(), box.at(2).get<int>(), box.at(3).get<int>()};
            blob.keywords = b.value("keywords", std::vector<std::string>{});
            if (blob.box.empty()) throw Error(ErrorCode::MalformedConfig, "blob box has no area", blob.label);
            s.blobs.push_back(std::move(blob));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedConfig, "invalid scene fixture", e.what());
    }
    if (s.width <= 0 || s.height <= 0) throw Error(ErrorCode::MalformedConfig, "scene size must be positive");
    return s;
}

SceneFixture SceneFixture::load(const std::string& path) {
    return from_json(read_json_file(path, ErrorCode::MalformedConfig));
}

nlohmann::json SceneFixture::to_json() const {
    nlohmann::json j{{"width", width}, {"height", height}, {"tile", tile}, {"blobs", nlohmann::json::array()}};
    for (const auto& b : blobs) {
        nlohmann::json jb{{"label", b.label},
                          {"color", {b.color[0], b.color[1], b.color[2]}},
                          {"shape", b.shape == SceneBlob::Shape::Ellipse ? "ellipse" : "rect"},
                          {"box", {b.box.x0, b.box.y0, b.box.x1, b.box.y1}}};
        if (!b.keywords.empty()) jb["keywords"] = b.keywords;
        j["blobs"].push_back(std::move(jb));
    }
    return j;
}

const SceneBlob* SceneFixture::find(std::string_view label) const {
    const std::string key = normalize_label(label);
    for (const auto& b : blobs) {
        if (normalize_label(b.label) == key) return &b;
    }
    return nullptr;
}

// -- text ------------------------------------------------------------------

ScriptedTextProvider::ScriptedTextProvider(std::vector<Entry> entries) {
    for (auto& e : entries) add(std::move(e));
}

void ScriptedTextProvider::add(Entry entry) {
    if (entry.responses.empty()) {
        throw Error(ErrorCode::MalformedConfig, "scripted entry has no responses", entry.template_id);
    }
    std::regex re;
    try {
        re = std::regex(entry.pattern.empty() ? std::string(".*") : entry.pattern,
                        std::regex::ECMAScript | std::regex::icase);
    } catch (const std::regex_error& e) {
        throw Error(ErrorCode::MalformedConfig, "bad match pattern", entry.pattern);
    }
    std::lock_guard lock(mutex_);
    entries_.push_back({std::move(entry), std::move(re), 0});
}

std::shared_ptr<ScriptedTextProvider> ScriptedTextProvider::from_json(const nlohmann::json& j) {
    auto provider = std::make_shared<ScriptedTextProvider>();
    auto to_text = [](const nlohmann::json& r) { return r.is_string() ? r.get<std::string>() : r.dump(2); };
    try {
        for (const auto& e : j.at("entries")) {
            Entry entry;
            entry.template_id = e.value("template", "*");
            entry.pattern = e.value("match", "");
            if (auto r = e.find("response"); r != e.end()) entry.responses.push_back(to_text(*r));
            if (auto rs = e.find("responses"); rs != e.end()) {
                for (const auto& r : *rs) entry.responses.push_back(to_text(r));
            }
            provider->add(std::move(entry));
        }
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::MalformedConfig, "invalid text script", e.what());
    }
    return provider;
}

std::shared_ptr<ScriptedTextProvider> ScriptedTextProvider::load(const std::string& path) {
    return from_json(read_json_file(path, ErrorCode::MalformedConfig));
}

std::string ScriptedTextProvider::generate(const TextRequest& request) {
    std::lock_guard lock(mutex_);
    calls_.push_back(request);
    for (auto& c : entries_) {
        if (c.entry.template_id != "*" && c.entry.template_id != request.template_id) continue;
        if (!std::regex_search(request.text, c.regex)) continue;
        const std::size_t i = std::min(c.next, c.entry.responses.size() - 1);
        ++c.next;
        return c.entry.responses[i];
    }
    throw Error(ErrorCode::UnscriptedInput, "text mock has no entry for this request",
                request.template_id + ": " + request.text.substr(0, 120));
}

std::vector<TextRequest> ScriptedTextProvider::calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
}

std::size_t ScriptedTextProvider::call_count() const {
    std::lock_guard lock(mutex_);
    return calls_.size();
}

std::string FunctionTextProvider::generate(const TextRequest& request) {
    ++calls_;
    return fn_(request);
}

// -- images ----------------------------------------------------------------

void paint_scene(Image& img, const SceneFixture& scene, std::string_view prompt_text) {
    for (const auto& blob : scene.blobs) {
        if (!blob.triggered_by(prompt_text)) continue;
        const BBox r = clip(blob.box, img.width(), img.height());
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) {
                if (blob.covers(x, y)) std::copy(blob.color.begin(), blob.color.end(), img.at(x, y));
            }
        }
    }
}

HashImageProvider::HashImageProvider(SceneFixture scene, FailurePlan failures)
    : scene_(std::move(scene)), failures_(std::move(failures)) {}

Image HashImageProvider::render(const SceneFixture& scene, const std::string& prompt, Seed seed) {
    Image img(scene.width, scene.height);
    const std::uint64_t key = fnv1a64(prompt) ^ kernels::splitmix64(static_cast<std::uint64_t>(seed));
    kernels::omp::fill_hash_noise(img, key, scene.tile);
    paint_scene(img, scene, prompt);
    return img;
}

std::vector<Image> HashImageProvider::generate(const std::string& prompt, Seed seed, int count) {
    const int call = ++calls_;
    std::vector<Image> out;
    for (int i = 0; i < count; ++i) {
        const Seed s = seed + i;
        if (call <= failures_.fail_first_calls || failures_.fail_seeds.contains(s)) {
            throw Error(ErrorCode::ProviderFailure, "mock image provider failure", "seed " + std::to_string(s));
        }
        out.push_back(render(scene_, prompt, s));
    }
    return out;
}

MockInpaintProvider::MockInpaintProvider(SceneFixture scene, bool bleed, bool report_seed)
    : scene_(std::move(scene)), bleed_(bleed), report_seed_(report_seed) {}

std::vector<FillSample> MockInpaintProvider::fill(const Image& image, const Mask& mask,
                                                  const std::string& region_prompt, Seed seed, int count) {
    ++calls_;
    std::vector<FillSample> out;
    for (int i = 0; i < count; ++i) {
        const Seed s = seed + i;
        const std::uint64_t key = fnv1a64(region_prompt) ^ kernels::splitmix64(static_cast<std::uint64_t>(s));
        Image painted = image;
        Image scene_layer(image.width(), image.height());
        kernels::omp::fill_hash_noise(scene_layer, key, 8);
        paint_scene(scene_layer, scene_, region_prompt);
        for (int y = 0; y < image.height(); ++y) {
            for (int x = 0; x < image.width(); ++x) {
                std::uint8_t* p = painted.at(x, y);
                if (mask.get(x, y)) {
                    std::copy_n(scene_layer.at(x, y), 3, p);
                } else if (bleed_) {
                    p[0] ^= 0x20;
                }
            }
        }
        out.push_back({std::move(painted), report_seed_ ? std::optional<Seed>(s) : std::nullopt});
    }
    return out;
}

// -- segmentation ------------------------------------------------------------

MockSegmentationProvider::MockSegmentationProvider(SceneFixture scene) : scene_(std::move(scene)) {}

std::shared_ptr<const SegmentationContext> MockSegmentationProvider::prepare(const Image& image) {
    ++prepare_calls_;
    auto ctx = std::make_shared<SegmentationContext>();
    ctx->width = image.width();
    ctx->height = image.height();
    return ctx;
}

Mask MockSegmentationProvider::blob_mask(const SceneBlob& blob, const Image& image) {
    Mask m(image.width(), image.height());
    const BBox r = clip(blob.box, image.width(), image.height());
    for (int y = r.y0; y < r.y1; ++y) {
        for (int x = r.x0; x < r.x1; ++x) {
            if (blob.covers(x, y) && has_color(image, x, y, blob.color)) m.set(x, y, true);
        }
    }
    return m;
}

Mask MockSegmentationProvider::segment(const SegmentationContext& context, const Image& image,
                                       const RegionSelection& selection) {
    ++segment_calls_;
    if (context.width != image.width() || context.height != image.height()) {
        throw Error(ErrorCode::ProviderFailure, "segmentation context does not match image");
    }
    if (selection.kind == RegionSelection::Kind::Point) {
        const auto [x, y] = selection.point;
        for (auto it = scene_.blobs.rbegin(); it != scene_.blobs.rend(); ++it) {
            if (it->covers(x, y) && has_color(image, x, y, it->color)) return blob_mask(*it, image);
        }
        return Mask(image.width(), image.height());
    }

    const SceneBlob* best = nullptr;
    std::size_t best_count = 0;
    for (const auto& blob : scene_.blobs) {
        const BBox a = clip(blob.box, image.width(), image.height());
        const BBox r{std::max(a.x0, selection.box.x0), std::max(a.y0, selection.box.y0),
                     std::min(a.x1, selection.box.x1), std::min(a.y1, selection.box.y1)};
        std::size_t n = 0;
        for (int y = r.y0; y < r.y1; ++y) {
            for (int x = r.x0; x < r.x1; ++x) {
                if (blob.covers(x, y) && has_color(image, x, y, blob.color)) ++n;
            }
        }
        if (n > best_count) {
            best = &blob;
            best_count = n;
        }
    }
    return best ? blob_mask(*best, image) : Mask(image.width(), image.height());
}

std::shared_ptr<const SegmentationContext> FixedMaskSegmentationProvider::prepare(const Image& image) {
    auto ctx = std::make_shared<SegmentationContext>();
    ctx->width = image.width();
    ctx->height = image.height();
    return ctx;
}

// -- embeddings --------------------------------------------------------------

OneHotEmbeddingProvider::OneHotEmbeddingProvider(std::vector<Entry> entries, std::size_t spare,
                                                 std::string query_prefix)
    : entries_(std::move(entries)), spare_(std::max<std::size_t>(spare, 1)), query_prefix_(std::move(query_prefix)) {}

std::shared_ptr<OneHotEmbeddingProvider> OneHotEmbeddingProvider::from_scene(const SceneFixture& scene) {
    std::vector<Entry> entries;
    for (const auto& b : scene.blobs) {
        if (std::none_of(entries.begin(), entries.end(),
                         [&](const Entry& e) { return normalize_label(e.label) == normalize_label(b.label); })) {
            entries.push_back({b.label, b.color});
        }
    }
    return std::make_shared<OneHotEmbeddingProvider>(std::move(entries));
}

void OneHotEmbeddingProvider::set_text_vector(const std::string& text, std::vector<float> v) {
    std::lock_guard lock(mutex_);
    text_overrides_[text] = std::move(v);
}

void OneHotEmbeddingProvider::set_image_vector(std::vector<float> v) {
    std::lock_guard lock(mutex_);
    image_override_ = std::move(v);
}

std::vector<float> OneHotEmbeddingProvider::basis(std::size_t i) const {
    std::vector<float> v(dimension(), 0.0f);
    v[i] = 1.0f;
    return v;
}

std::vector<float> OneHotEmbeddingProvider::spare_axis(std::string_view key) const {
    return basis(entries_.size() + fnv1a64(key) % spare_);
}

namespace {
std::vector<float> normalized(std::vector<float> v) {
    double n = 0.0;
    for (float x : v) n += double(x) * x;
    if (n > 0.0) {
        const double inv = 1.0 / std::sqrt(n);
        for (float& x : v) x = static_cast<float>(x * inv);
    }
    return v;
}
} // namespace

std::vector<float> OneHotEmbeddingProvider::embed_text(const std::string& text) {
    ++text_calls_;
    {
        std::lock_guard lock(mutex_);
        if (auto it = text_overrides_.find(text); it != text_overrides_.end()) return normalized(it->second);
    }
    std::string_view label = text;
    if (label.starts_with(query_prefix_)) label.remove_prefix(query_prefix_.size());
    const std::string key = normalize_label(label);
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (normalize_label(entries_[i].label) == key) return basis(i);
    }
    return spare_axis(text);
}

std::vector<float> OneHotEmbeddingProvider::embed_image(const Image& image) {
    ++image_calls_;
    {
        std::lock_guard lock(mutex_);
        if (image_override_) return normalized(*image_override_);
    }
    std::map<std::uint32_t, std::size_t> palette;
    for (std::size_t i = 0; i < entries_.size(); ++i) {
        if (entries_[i].color) palette.emplace(pack(entries_[i].color->data()), i);
    }
    std::vector<std::size_t> counts(entries_.size(), 0);
    const auto px = image.pixels();
    for (std::size_t i = 0; i + 2 < px.size(); i += 3) {
        if (auto it = palette.find(pack(px.data() + i)); it != palette.end()) ++counts[it->second];
    }
    const auto best = std::max_element(counts.begin(), counts.end());
    if (best == counts.end() || *best == 0) return spare_axis("image");
    return basis(static_cast<std::size_t>(best - counts.begin()));
}

// -- captions ---------------------------------------------------------------

TableCaptionProvider::TableCaptionProvider(std::map<std::string, std::string> by_digest, std::string fallback)
    : by_digest_(std::move(by_digest)), fallback_(std::move(fallback)) {}

std::string TableCaptionProvider::caption(const Image& image) {
    ++calls_;
    if (auto it = by_digest_.find(image_digest(image)); it != by_digest_.end()) return it->second;
    return fallback_;
}

Providers make_mock_providers(const SceneFixture& scene, std::shared_ptr<TextProvider> text,
                              std::map<std::string, std::string> captions, std::string fallback_caption) {
    Providers p;
    p.text = std::move(text);
    p.image = std::make_shared<HashImageProvider>(scene);
    p.inpaint = std::make_shared<MockInpaintProvider>(scene);
    p.segmentation = std::make_shared<MockSegmentationProvider>(scene);
    p.embedding = OneHotEmbeddingProvider::from_scene(scene);
    p.caption = std::make_shared<TableCaptionProvider>(std::move(captions), std::move(fallback_caption));
    return p;
}

} // namespace tracetune::mock
