#include "support.hpp"

#include <doctest.h>

using namespace tracetune;
using tt_test::el;
using tt_test::make_prompt;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected tracetune::Error");
    return ErrorCode::InvalidArgument;
}

std::string doc_with(const std::string& content) {
    return R"({"schema":"tracetune/prompt/v1","theme":"t","art_style":"a","content":)" + content +
           R"(,"lighting":"l","color":"c","shot_angle":"s"})";
}

} // namespace

TEST_CASE("parse: one vintage cars element gives one root label") {
    const auto p = parse_structured_prompt(
        doc_with(R"([{"label":"Vintage Cars","description":"1930s sedans parked along the curb"}])"));
    const auto tree = derive_label_tree(p);
    REQUIRE(tree.roots.size() == 1);
    CHECK(tree.roots[0].label == "Vintage Cars");
    CHECK(tree.roots[0].children.empty());
    CHECK(p.content[0].description == "1930s sedans parked along the curb");
}

TEST_CASE("parse: case-folded duplicate labels are rejected") {
    try {
        parse_structured_prompt(
            doc_with(R"([{"label":"tree","description":"a"},{"label":" Tree ","description":"b"}])"));
        FAIL("no error");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::DuplicateLabel);
        CHECK(e.detail() == "tree");
    }
}

TEST_CASE("parse: each missing category is named") {
    for (const char* cat : {"theme", "art_style", "content", "lighting", "color", "shot_angle"}) {
        auto j = nlohmann::json::parse(doc_with(R"([{"label":"x","description":"y"}])"));
        j.erase(cat);
        try {
            parse_structured_prompt(j.dump());
            FAIL("no error for ", cat);
        } catch (const Error& e) {
            CHECK(e.code() == ErrorCode::MissingCategory);
            CHECK(e.detail() == cat);
        }
    }
}

TEST_CASE("parse: structural errors") {
    CHECK(code_of([] { parse_structured_prompt(doc_with("[]")); }) == ErrorCode::EmptyContent);
    CHECK(code_of([] {
              parse_structured_prompt(doc_with(
                  R"([{"label":"a","description":"x","parent":"b"},{"label":"b","description":"y","parent":"a"}])"));
          }) == ErrorCode::CyclicParent);
    CHECK(code_of([] {
              parse_structured_prompt(doc_with(R"([{"label":"a","description":"x","parent":"ghost"}])"));
          }) == ErrorCode::UnknownLabel);
    CHECK(code_of([] { parse_structured_prompt("not json"); }) == ErrorCode::MalformedDocument);
    // unknown extra fields are rejected at both levels
    auto j = nlohmann::json::parse(doc_with(R"([{"label":"a","description":"x"}])"));
    j["mood"] = "gloomy";
    CHECK(code_of([&] { parse_structured_prompt(j.dump()); }) == ErrorCode::MalformedDocument);
    CHECK(code_of([] {
              parse_structured_prompt(doc_with(R"([{"label":"a","description":"x","weight":2}])"));
          }) == ErrorCode::MalformedDocument);
    CHECK(code_of([] { parse_structured_prompt(doc_with(R"([{"label":"  ","description":"x"}])"));
          }) == ErrorCode::MalformedDocument);
}

TEST_CASE("serialize: round-trip and determinism over random prompts") {
    std::mt19937_64 rng(42);
    for (int i = 0; i < 300; ++i) {
        const auto p = tt_test::random_prompt(rng, 1 + static_cast<int>(rng() % 12));
        const std::string doc = serialize_structured_prompt(p);
        CHECK(parse_structured_prompt(doc) == p);
        CHECK(serialize_structured_prompt(StructuredPrompt(p)) == doc);
    }
}

TEST_CASE("serialize: nested parent survives round-trip") {
    const auto p = make_prompt({el("castle", "a castle"), el("tower", "a tower", "castle"),
                                el("flag", "a flag", "tower")});
    const auto q = parse_structured_prompt(serialize_structured_prompt(p));
    REQUIRE(q.content[2].parent_label);
    CHECK(*q.content[2].parent_label == "tower");
    CHECK(q == p);
}

TEST_CASE("label tree: structure, order and node count") {
    SUBCASE("child under parent") {
        const auto t = derive_label_tree(make_prompt({el("A", "a"), el("B", "b", "A")}));
        REQUIRE(t.roots.size() == 1);
        CHECK(t.roots[0].label == "A");
        REQUIRE(t.roots[0].children.size() == 1);
        CHECK(t.roots[0].children[0].label == "B");
    }
    SUBCASE("flat list keeps content order") {
        const auto t = derive_label_tree(make_prompt({el("z", "1"), el("a", "2"), el("m", "3")}));
        REQUIRE(t.roots.size() == 3);
        CHECK(t.roots[0].label == "z");
        CHECK(t.roots[1].label == "a");
        CHECK(t.roots[2].label == "m");
    }
    SUBCASE("10 elements in 3 subtrees") {
        std::vector<ContentElement> c = {el("r0", "x"), el("r1", "x"), el("r2", "x")};
        for (int i = 0; i < 7; ++i) c.push_back(el("c" + std::to_string(i), "x", i < 3 ? "r" + std::to_string(i) : "c" + std::to_string(i - 3)));
        const auto t = derive_label_tree(make_prompt(c));
        CHECK(t.roots.size() == 3);
        CHECK(t.size() == 10);
    }
    SUBCASE("random prompts: every label exactly once") {
        std::mt19937_64 rng(7);
        for (int i = 0; i < 200; ++i) {
            const auto p = tt_test::random_prompt(rng, 1 + static_cast<int>(rng() % 15));
            const auto t = derive_label_tree(p);
            std::multiset<std::string> seen;
            std::function<void(const LabelNode&)> walk = [&](const LabelNode& n) {
                seen.insert(n.label);
                for (const auto& c : n.children) walk(c);
            };
            for (const auto& r : t.roots) walk(r);
            CHECK(seen.size() == p.content.size());
            CHECK(std::set<std::string>(seen.begin(), seen.end()).size() == p.content.size());
            CHECK(derive_label_tree(p) == t);
        }
    }
}

TEST_CASE("segment_for_label: lookup, case folding and ancestors") {
    const auto p = make_prompt({el("Street", "a wet street"), el("Vintage Cars", "1930s sedans", "Street"),
                                el("hubcaps", "chrome hubcaps", "Vintage Cars")});
    const auto seg = segment_for_label(p, "Vintage Cars");
    CHECK(seg.element.description == "1930s sedans");
    CHECK(seg.ancestors == std::vector<std::string>{"Street"});
    CHECK(segment_for_label(p, "  vintage CARS ").element.label == "Vintage Cars");
    CHECK(segment_for_label(p, "hubcaps").ancestors == std::vector<std::string>{"Street", "Vintage Cars"});
    CHECK(code_of([&] { segment_for_label(p, "tram"); }) == ErrorCode::UnknownLabel);
}

TEST_CASE("diff_prompts") {
    const auto base = make_prompt({el("Vintage Cars", "sedans"), el("street", "cobblestones")});
    CHECK(diff_prompts(base, base).empty());

    auto edited = base;
    edited.content[0].description = "red sedans";
    auto d = diff_prompts(base, edited);
    CHECK(d.changed_labels == std::set<std::string>{"Vintage Cars"});
    CHECK(d.changed_categories == std::set<Category>{Category::Content});
    CHECK(d.added_labels.empty());
    CHECK(d.removed_labels.empty());

    auto replaced = base;
    replaced.content[0] = el("Tram", "an electric tram");
    d = diff_prompts(base, replaced);
    CHECK(d.added_labels == std::set<std::string>{"Tram"});
    CHECK(d.removed_labels == std::set<std::string>{"Vintage Cars"});

    auto lit = base;
    lit.lighting = "night";
    d = diff_prompts(base, lit);
    CHECK(d.changed_categories == std::set<Category>{Category::Lighting});
    CHECK(d.changed_labels.empty());
}

TEST_CASE("diff locality property: single description edit") {
    std::mt19937_64 rng(99);
    for (int i = 0; i < 200; ++i) {
        const auto p = tt_test::random_prompt(rng, 2 + static_cast<int>(rng() % 10));
        auto q = p;
        auto& e = q.content[rng() % q.content.size()];
        e.description += " (edited)";
        const auto d = diff_prompts(p, q);
        CHECK(d.changed_labels == std::set<std::string>{e.label});
        CHECK(d.changed_categories == std::set<Category>{Category::Content});
        CHECK(d.added_labels.empty());
        CHECK(d.removed_labels.empty());
    }
}

TEST_CASE("render and digest are pure") {
    const auto p = make_prompt({el("cat", "a ginger cat")});
    CHECK(render_prompt_text(p).find("a ginger cat") != std::string::npos);
    CHECK(prompt_digest(p) == prompt_digest(make_prompt({el("cat", "a ginger cat")})));
    CHECK(prompt_digest(p).size() == 64);
    auto q = p;
    q.color = "monochrome";
    CHECK(prompt_digest(p) != prompt_digest(q));
}
