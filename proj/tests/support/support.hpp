#pragma once

// Shared fixtures for the unit and acceptance suites.

#include "tracetune/mocks.hpp"
#include "tracetune/prompt.hpp"
#include "tracetune/script.hpp"
#include "tracetune/studio.hpp"

#include <json.hpp>

#include <filesystem>
#include <random>
#include <string>

namespace tt_test {

using namespace tracetune;

/// Scratch directory removed on destruction.
struct TempDir {
    std::filesystem::path path;
    TempDir();
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;
};

inline ContentElement el(std::string label, std::string desc, std::optional<std::string> parent = {}) {
    return {std::move(label), std::move(desc), std::move(parent)};
}

StructuredPrompt make_prompt(std::vector<ContentElement> content);

/// Random valid prompt: n elements, some with parents pointing earlier.
StructuredPrompt random_prompt(std::mt19937_64& rng, int n);

/// `n` non-overlapping rectangular blobs laid out on a grid, labeled
/// "object 0".."object n-1" with distinct palette colors.
mock::SceneFixture grid_scene(int n, int width = 512, int height = 512);

/// Prompt whose content elements are exactly the scene's labels.
StructuredPrompt prompt_for_scene(const mock::SceneFixture& scene);

/// Text provider answering every template deterministically:
///   brainstorm -> `root`
///   global_refine -> lighting gets ", <instruction>"
///   prompt_refine -> the label's description gets ", <instruction>"
///   inpaint_prompt -> "<label> region: <instruction>"
///   inpaint_merge -> prompt unchanged
///   suggest_* -> the requested number of distinct items
std::shared_ptr<mock::FunctionTextProvider> echo_text(StructuredPrompt root);

/// Studio over mock providers for `scene` with images in `dir`.
std::unique_ptr<Studio> mock_studio(const mock::SceneFixture& scene, std::shared_ptr<TextProvider> text,
                                    const std::filesystem::path& dir, std::uint64_t rng_seed = 7);

std::filesystem::path source_dir();

/// fixtures/golden/<name>
std::filesystem::path golden_dir(const std::string& name);
std::vector<std::string> golden_names();

/// Runs fixtures/golden/<name>/<name>.jsonl with its config, images in `dir`.
/// The studio stays alive in `studio` for follow-up inspection.
RunReport run_golden(const std::string& name, const std::filesystem::path& dir, std::unique_ptr<Studio>* studio = nullptr);

} // namespace tt_test
