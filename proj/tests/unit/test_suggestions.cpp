#include "support.hpp"
#include "tracetune/suggestions.hpp"

#include <doctest.h>

using namespace tracetune;
using tt_test::el;
using tt_test::make_prompt;

namespace {

using Entry = mock::ScriptedTextProvider::Entry;

std::string list(std::initializer_list<std::string> items) {
    return nlohmann::json{{"suggestions", std::vector<std::string>(items)}}.dump();
}

std::string tagged(std::vector<std::pair<std::string, std::string>> items) {
    nlohmann::json a = nlohmann::json::array();
    for (auto& [tag, text] : items) a.push_back({{"tag", tag}, {"text", text}});
    return nlohmann::json{{"suggestions", a}}.dump();
}

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected tracetune::Error");
    return ErrorCode::InvalidArgument;
}

const StructuredPrompt kPrompt = make_prompt({el("dragon", "a red dragon breathing fire"),
                                              el("towers", "two stone towers"), el("sky", "a stormy sky")});

} // namespace

TEST_CASE("global: exactly five with provenance") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(
        std::vector<Entry>{{"suggest_global", ".*", {list({"a", "b", "c", "d", "e"})}}});
    Suggester s(text, TemplateSet::defaults());
    const auto set = s.suggest_global(kPrompt);
    CHECK(set.kind == SuggestionKind::Global);
    CHECK(set.items.size() == 5);
    CHECK(set.provenance.prompt_digest == prompt_digest(kPrompt));
    CHECK_FALSE(set.provenance.label);
    CHECK_FALSE(set.provenance.user_input);
}

TEST_CASE("global: four items twice is a SchemaViolation") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(
        std::vector<Entry>{{"suggest_global", ".*", {list({"a", "b", "c", "d"})}}});
    Suggester s(text, TemplateSet::defaults());
    CHECK(code_of([&] { s.suggest_global(kPrompt); }) == ErrorCode::SchemaViolation);
    CHECK(text->call_count() == 2);
}

TEST_CASE("global: duplicates are dropped and the retry refills") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(std::vector<Entry>{
        {"suggest_global", ".*", {list({"Add fog", "add fog", "b", "c", "d"}), list({"b", "e", "f"})}}});
    Suggester s(text, TemplateSet::defaults());
    const auto set = s.suggest_global(kPrompt);
    REQUIRE(set.items.size() == 5);
    std::set<std::string> distinct;
    for (const auto& i : set.items) distinct.insert(normalize_label(i.text));
    CHECK(distinct.size() == 5);
    CHECK(set.items[0].text == "Add fog");
    CHECK(set.items[4].text == "e");
}

TEST_CASE("global: surplus is truncated without a retry") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(
        std::vector<Entry>{{"suggest_global", ".*", {list({"a", "b", "c", "d", "e", "f", "g"})}}});
    Suggester s(text, TemplateSet::defaults());
    CHECK(s.suggest_global(kPrompt).items.size() == 5);
    CHECK(text->call_count() == 1);
}

TEST_CASE("label based: three refine and three replace") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(std::vector<Entry>{
        {"suggest_label", "dragon",
         {tagged({{"refine", "make its fire bigger and add a glow"},
                  {"refine", "give the dragon golden scales"},
                  {"refine", "spread its wings wider"},
                  {"replace", "replace the dragon with a griffin"},
                  {"replace", "replace the dragon with a phoenix"},
                  {"replace", "replace the dragon with a wyvern"}})}}});
    Suggester s(text, TemplateSet::defaults());
    const auto set = s.suggest_for_label(kPrompt, "Dragon");
    REQUIRE(set.items.size() == 6);
    for (int i = 0; i < 3; ++i) CHECK(set.items[i].tag == "refine");
    for (int i = 3; i < 6; ++i) CHECK(set.items[i].tag == "replace");
    CHECK(set.provenance.label == std::optional<std::string>("dragon"));
    CHECK(text->calls()[0].text.find("a red dragon breathing fire") != std::string::npos);

    CHECK(code_of([&] { s.suggest_for_label(kPrompt, "unicorn"); }) == ErrorCode::UnknownLabel);
}

TEST_CASE("label based: wrongly tagged output fails after retry") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(std::vector<Entry>{
        {"suggest_label", ".*",
         {tagged({{"refine", "a"}, {"refine", "b"}, {"refine", "c"}, {"refine", "d"}, {"tweak", "e"}, {"replace", "f"}})}}});
    Suggester s(text, TemplateSet::defaults());
    CHECK(code_of([&] { s.suggest_for_label(kPrompt, "dragon"); }) == ErrorCode::SchemaViolation);
}

TEST_CASE("expanded: with label, without label, empty input") {
    auto text = std::make_shared<mock::ScriptedTextProvider>(std::vector<Entry>{
        {"suggest_expanded", "two stone towers",
         {list({"add flags to the towers", "add ivy to the towers", "add a bridge between the towers",
                "add lanterns on the towers", "add banners on the towers"})}},
        {"suggest_expanded", "more dramatic",
         {list({"darker storm", "lightning strike", "low sun", "red sky", "heavy rain"})}}});
    Suggester s(text, TemplateSet::defaults());
    const auto with = s.suggest_expanded(kPrompt, std::string("towers"), "add");
    REQUIRE(with.items.size() == 5);
    for (const auto& i : with.items) CHECK(i.text.find("towers") != std::string::npos);
    CHECK(with.provenance.label == std::optional<std::string>("towers"));
    CHECK(with.provenance.user_input == std::optional<std::string>("add"));

    const auto without = s.suggest_expanded(kPrompt, std::nullopt, "more dramatic");
    CHECK(without.items.size() == 5);
    CHECK_FALSE(without.provenance.label);

    CHECK(code_of([&] { s.suggest_expanded(kPrompt, std::nullopt, "  "); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("identical inputs to a scripted mock give identical sets") {
    auto make = [] {
        return std::make_shared<mock::ScriptedTextProvider>(
            std::vector<Entry>{{"suggest_global", ".*", {list({"a", "b", "c", "d", "e"})}}});
    };
    Suggester s1(make(), TemplateSet::defaults());
    Suggester s2(make(), TemplateSet::defaults());
    CHECK(s1.suggest_global(kPrompt) == s2.suggest_global(kPrompt));
}

TEST_CASE("kind names") {
    for (auto k : {SuggestionKind::Global, SuggestionKind::LabelBased, SuggestionKind::Expanded})
        CHECK(suggestion_kind_from_string(to_string(k)) == k);
}
