#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <thread>

using namespace tracetune;
namespace fs = std::filesystem;

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

struct Rig {
    tt_test::TempDir dir;
    mock::SceneFixture scene = tt_test::grid_scene(6);
    StructuredPrompt prompt = tt_test::prompt_for_scene(scene);
    std::unique_ptr<Studio> studio = tt_test::mock_studio(scene, tt_test::echo_text(prompt), dir.path);

    RegionSelection centre(int blob) const {
        const auto& b = scene.blobs[blob].box;
        return RegionSelection::at((b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2);
    }
    RefineInput input(RefineMode mode, int blob = 1) const {
        RefineInput in;
        in.mode = mode;
        in.instruction = "sharper";
        if (requires_selection(mode)) in.selection = centre(blob);
        return in;
    }
};

GenerationBatch fake_batch(const Image& img, int n_ok, int n_fail) {
    GenerationBatch b;
    b.mode = RefineMode::Seed;
    for (int i = 0; i < n_ok; ++i) {
        GeneratedImage g;
        g.image = img;
        g.seed = 10 + i;
        g.method = Method::Seed;
        g.prompt_after = tt_test::make_prompt({tt_test::el("a", "b")});
        b.items.push_back({g, std::nullopt});
    }
    for (int i = 0; i < n_fail; ++i) b.items.push_back({std::nullopt, ErrorInfo{ErrorCode::ProviderFailure, "x", ""}});
    return b;
}

} // namespace

TEST_CASE("create_session: four roots with distinct seeds") {
    Rig rig;
    const auto s = rig.studio->create_session("Design a European 1930s Urban Street Scene");
    CHECK(s.nodes.size() == 4);
    CHECK(s.roots().size() == 4);
    std::set<Seed> seeds;
    for (const auto& [id, n] : s.nodes) {
        seeds.insert(n.seed);
        CHECK(n.method == Method::Initial);
        CHECK(n.prompt == rig.prompt);
        CHECK(rig.studio->images().contains(n.image_digest));
    }
    CHECK(seeds.size() == 4);
    CHECK(s.contains(s.active_node_id));
    CHECK_NOTHROW(check_forest(s));
    CHECK(rig.studio->session(s.session_id) == s);
}

TEST_CASE("create_session: blank input and failing provider") {
    Rig rig;
    CHECK(code_of([&] { rig.studio->create_session(" \t\n"); }) == ErrorCode::InvalidArgument);

    tt_test::TempDir dir;
    auto providers = mock::make_mock_providers(rig.scene, tt_test::echo_text(rig.prompt));
    providers.image = std::make_shared<mock::HashImageProvider>(rig.scene, mock::ImageFailurePlan{{}, 2});
    StudioOptions o;
    o.image_dir = dir.path / "images";
    o.rng_seed = 3;
    Studio studio(providers, o);
    const auto s = studio.create_session("a street");
    CHECK(s.nodes.size() == 2);
    CHECK(s.errors.size() == 2);
    CHECK_NOTHROW(check_forest(s));

    providers.image = std::make_shared<mock::HashImageProvider>(rig.scene, mock::ImageFailurePlan{{}, 100});
    Studio dead(providers, o);
    CHECK(code_of([&] { dead.create_session("a street"); }) == ErrorCode::ProviderFailure);
}

TEST_CASE("attach_batch: children, order, unknown parent, failed slots") {
    Rig rig;
    auto s = rig.studio->create_session("scene");
    const auto root = s.roots()[0];
    const Image img(8, 8);
    RefinementRecord rec;
    rec.mode = RefineMode::Seed;
    rec.instruction = "x";

    std::vector<std::optional<std::string>> ids;
    s = attach_batch(s, root, fake_batch(img, 4, 0), rig.studio->images(), rec, "t", &ids);
    CHECK(s.children(root).size() == 4);
    REQUIRE(ids.size() == 4);
    s = attach_batch(s, root, fake_batch(img, 3, 1), rig.studio->images(), rec, "t", &ids);
    const auto kids = s.children(root);
    CHECK(kids.size() == 7);
    CHECK(std::is_sorted(kids.begin(), kids.end()));
    CHECK(s.errors.size() == 1);
    CHECK(s.errors[0].detail.find(root) != std::string::npos);
    CHECK_FALSE(ids[3].has_value());
    CHECK_NOTHROW(check_forest(s));

    CHECK(code_of([&] { attach_batch(s, "n999999", fake_batch(img, 4, 0), rig.studio->images(), rec, "t"); }) ==
          ErrorCode::UnknownNode);
}

TEST_CASE("select_node and revert") {
    Rig rig;
    auto s = rig.studio->create_session("scene");
    const auto root = s.roots()[1];
    CHECK(code_of([&] { select_node(s, "nope"); }) == ErrorCode::UnknownNode);
    CHECK(select_node(s, s.active_node_id) == s);

    auto first = rig.studio->refine(s.session_id, root, rig.input(RefineMode::Seed));
    const auto child = *first.child_ids[0];
    auto deeper = rig.studio->refine(s.session_id, child, rig.input(RefineMode::Seed));
    const auto before = rig.studio->session(s.session_id);
    const auto subtree = before.children(child);

    rig.studio->select(s.session_id, root);
    const auto again = rig.studio->refine(s.session_id, root, rig.input(RefineMode::Global));
    const auto after = again.session;
    CHECK(after.children(root).size() == 8);
    CHECK(after.children(child) == subtree);
    for (const auto& id : subtree) CHECK(after.node(id) == before.node(id));
    CHECK(after.lineage(*again.child_ids[0]) == std::vector<std::string>{root, *again.child_ids[0]});
}

TEST_CASE("check_forest rejects broken sessions") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    auto bad = s;
    bad.active_node_id = "ghost";
    CHECK(code_of([&] { check_forest(bad); }) == ErrorCode::InvalidArgument);

    bad = s;
    auto& n = bad.nodes.begin()->second;
    n.parent_id = "ghost";
    CHECK(code_of([&] { check_forest(bad); }) == ErrorCode::InvalidArgument);

    bad = s;
    auto it = bad.nodes.begin();
    auto& a = it->second;
    auto& b = std::next(it)->second;
    a.parent_id = b.node_id;
    b.parent_id = a.node_id;
    a.method = b.method = Method::Seed;
    CHECK(code_of([&] { check_forest(bad); }) == ErrorCode::InvalidArgument);

    bad = s;
    bad.nodes.begin()->second.method = Method::Seed; // a root that is not an initial image
    CHECK(code_of([&] { check_forest(bad); }) == ErrorCode::InvalidArgument);
}

TEST_CASE("session documents and archives round-trip") {
    Rig rig;
    auto s = rig.studio->create_session("scene");
    const auto ref = rig.studio->add_reference(encode_png(mock::HashImageProvider::render(rig.scene, "ref", 1)));
    auto in = rig.input(RefineMode::Mixed, 3);
    in.reference_digest = ref.digest;
    s = rig.studio->refine(s.session_id, s.roots()[0], in).session;

    CHECK(session_from_json(session_to_json(s)) == s);
    CHECK(session_to_json(s)["schema"] == "tracetune/session/v1");

    tt_test::TempDir out;
    export_session(s, rig.studio->images(), out.path / "archive");
    CHECK(fs::exists(out.path / "archive" / "session.json"));
    CHECK(fs::exists(out.path / "archive" / "images" / (ref.digest + ".png")));
    CHECK(import_session(out.path / "archive") == s);

    ImageStore fresh(out.path / "copy");
    CHECK(import_session(out.path / "archive", &fresh) == s);
    for (const auto& [id, n] : s.nodes) CHECK(fresh.contains(n.image_digest));

    const auto victim = s.nodes.begin()->second.image_digest;
    fs::remove(out.path / "archive" / "images" / (victim + ".png"));
    try {
        import_session(out.path / "archive");
        FAIL("expected StorageFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::StorageFailure);
        CHECK(e.detail() == victim);
    }
}

TEST_CASE("archive of a fresh session has four node records") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    tt_test::TempDir out;
    export_session(s, rig.studio->images(), out.path);
    std::ifstream f(out.path / "session.json");
    const auto doc = nlohmann::json::parse(f);
    CHECK(doc["nodes"].size() == 4);
}

TEST_CASE("archives never contain credential values") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    tt_test::TempDir out;
    export_session(s, rig.studio->images(), out.path);
    std::ifstream f(out.path / "session.json");
    const std::string body((std::istreambuf_iterator<char>(f)), {});
    CHECK(body.find("credential") == std::string::npos);
    CHECK(body.find("api_key") == std::string::npos);
}

TEST_CASE("corrupt archive image is reported by digest") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    tt_test::TempDir out;
    export_session(s, rig.studio->images(), out.path);
    const auto victim = s.nodes.rbegin()->second.image_digest;
    std::ofstream(out.path / "images" / (victim + ".png"), std::ios::trunc) << "garbage";
    try {
        import_session(out.path);
        FAIL("expected StorageFailure");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::StorageFailure);
        CHECK(e.detail() == victim);
    }
}

TEST_CASE("SessionStore persists across reopen") {
    tt_test::TempDir dir;
    const auto db = (dir.path / "s.db").string();
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    {
        SessionStore store(db);
        store.save(s);
        CHECK(store.contains(s.session_id));
    }
    SessionStore reopened(db);
    CHECK(reopened.load(s.session_id) == s);
    CHECK(reopened.list() == std::vector<std::string>{s.session_id});
    CHECK(code_of([&] { reopened.load("nope"); }) == ErrorCode::UnknownSession);

    auto broken = s;
    broken.active_node_id = "ghost";
    CHECK(code_of([&] { reopened.save(broken); }) == ErrorCode::InvalidArgument);
    CHECK(reopened.load(s.session_id) == s);
}

TEST_CASE("ImageStore: content addressing and errors") {
    tt_test::TempDir dir;
    ImageStore store(dir.path, 2);
    const Image a = mock::HashImageProvider::render(tt_test::grid_scene(1), "a", 1);
    const auto d = store.put(a);
    CHECK(d == image_digest(a));
    CHECK(store.put(a) == d);
    CHECK(*store.get(d) == a);
    CHECK(store.put_png(encode_png(a)) == d);
    CHECK(code_of([&] { store.get(std::string(64, '0')); }) == ErrorCode::StorageFailure);
    CHECK(code_of([&] { store.get("../etc/passwd"); }) == ErrorCode::StorageFailure);
    const std::vector<std::uint8_t> png = encode_png(a);
    CHECK(code_of([&] { store.adopt(std::string(64, 'a'), png); }) == ErrorCode::StorageFailure);
}

TEST_CASE("refine leases serialize per session") {
    Rig rig;
    const auto s1 = rig.studio->create_session("one");
    const auto s2 = rig.studio->create_session("two");
    {
        auto lease = rig.studio->acquire(s1.session_id);
        CHECK(code_of([&] { rig.studio->acquire(s1.session_id); }) == ErrorCode::Conflict);
        CHECK(code_of([&] { rig.studio->refine(s1.session_id, s1.roots()[0], rig.input(RefineMode::Seed)); }) ==
              ErrorCode::Conflict);
        auto other = rig.studio->acquire(s2.session_id);
        CHECK(other.session_id() == s2.session_id);
        // the lease holder itself may refine
        CHECK(rig.studio->refine(lease, s1.roots()[0], rig.input(RefineMode::Seed)).child_ids.size() == 4);
    }
    CHECK_NOTHROW(rig.studio->acquire(s1.session_id));
    CHECK(code_of([&] { rig.studio->acquire("s-missing"); }) == ErrorCode::UnknownSession);
}

TEST_CASE("concurrent refinements of different sessions") {
    Rig rig;
    std::vector<Session> sessions;
    for (int i = 0; i < 3; ++i) sessions.push_back(rig.studio->create_session("scene " + std::to_string(i)));
    std::vector<std::thread> threads;
    std::atomic<int> ok{0};
    for (const auto& s : sessions) {
        threads.emplace_back([&, s] {
            const auto out = rig.studio->refine(s.session_id, s.roots()[0], rig.input(RefineMode::Mixed));
            if (out.batch.items.size() == 4) ++ok;
        });
    }
    for (auto& t : threads) t.join();
    CHECK(ok == 3);
    for (const auto& s : sessions) CHECK(rig.studio->session(s.session_id).nodes.size() == 8);
}

TEST_CASE("lineage replay reproduces every prompt") {
    Rig rig;
    auto s = rig.studio->create_session("scene");
    auto out = rig.studio->refine(s.session_id, s.roots()[0], rig.input(RefineMode::Global));
    out = rig.studio->refine(s.session_id, *out.child_ids[0], rig.input(RefineMode::Mixed, 2));
    out = rig.studio->refine(s.session_id, *out.child_ids[3], rig.input(RefineMode::Seed, 4));
    s = out.session;
    for (const auto& [id, n] : s.nodes) CHECK(replay_prompt(rig.studio->refiner(), rig.studio->images(), s, id) == n.prompt);
}

TEST_CASE("resolve through the studio") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    const auto r = rig.studio->resolve(s.session_id, s.roots()[0], rig.centre(4));
    REQUIRE_FALSE(r.labels.empty());
    CHECK(r.labels[0].label == "object 4");
    CHECK(r.labels.size() == 5);
    REQUIRE(r.segment);
    CHECK(r.segment->element.label == "object 4");
    CHECK(r.bbox == rig.scene.blobs[4].box);
    CHECK(code_of([&] { rig.studio->resolve(s.session_id, "n999999", rig.centre(4)); }) == ErrorCode::UnknownNode);
    CHECK(code_of([&] { rig.studio->resolve(s.session_id, s.roots()[0], RegionSelection::at(-1, 3)); }) ==
          ErrorCode::InvalidArgument);
}

TEST_CASE("check_refine validates without provider calls") {
    Rig rig;
    const auto s = rig.studio->create_session("scene");
    RefineInput in;
    in.mode = RefineMode::Seed;
    in.instruction = "x";
    CHECK(code_of([&] { rig.studio->check_refine(s.session_id, s.roots()[0], in); }) == ErrorCode::InvalidArgument);
    in.selection = rig.centre(0);
    in.label = "unicorn";
    CHECK(code_of([&] { rig.studio->check_refine(s.session_id, s.roots()[0], in); }) == ErrorCode::UnknownLabel);
    in.label.reset();
    in.reference_digest = std::string(64, 'f');
    CHECK(code_of([&] { rig.studio->check_refine(s.session_id, s.roots()[0], in); }) == ErrorCode::InvalidArgument);
    in.reference_digest.reset();
    CHECK_NOTHROW(rig.studio->check_refine(s.session_id, s.roots()[0], in));
}
