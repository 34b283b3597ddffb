#include "support.hpp"
#include "tracetune/digest.hpp"
#include "tracetune/service.hpp"
#include "tracetune/wire.hpp"

#include <doctest.h>
#include <httplib.h>

#include <condition_variable>
#include <fstream>
#include <thread>

using namespace tracetune;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

/// A studio + service on a free port, and a client pointed at it.
struct Server {
    tt_test::TempDir dir;
    mock::SceneFixture scene = tt_test::grid_scene(8);
    StructuredPrompt prompt = tt_test::prompt_for_scene(scene);
    std::unique_ptr<Studio> studio;
    std::unique_ptr<Service> service;
    std::unique_ptr<httplib::Client> client;

    explicit Server(std::shared_ptr<TextProvider> text = nullptr, std::shared_ptr<ImageProvider> image = nullptr) {
        auto providers = mock::make_mock_providers(scene, text ? text : tt_test::echo_text(prompt));
        if (image) providers.image = image;
        StudioOptions o;
        o.image_dir = dir.path / "images";
        o.rng_seed = 11;
        studio = std::make_unique<Studio>(providers, o);
        service = std::make_unique<Service>(*studio);
        const int port = service->start();
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(30, 0);
    }
    ~Server() { service->stop(); }

    std::pair<int, json> post(const std::string& path, const json& body) {
        auto r = client->Post(path, body.dump(), "application/json");
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }
    std::pair<int, json> get(const std::string& path) {
        auto r = client->Get(path);
        REQUIRE(r);
        return {r->status, json::parse(r->body)};
    }

    json create() {
        auto [status, body] = post("/sessions", {{"initial_input", "a grid of objects"}});
        REQUIRE(status == 201);
        return body;
    }

    json point_on(int blob) const {
        const auto& b = scene.blobs[blob].box;
        return wire::to_json(RegionSelection::at((b.x0 + b.x1) / 2, (b.y0 + b.y1) / 2));
    }

    json wait_batch(const std::string& id) {
        for (int i = 0; i < 600; ++i) {
            auto [status, body] = get("/batches/" + id);
            REQUIRE(status == 200);
            const std::string state = body["state"];
            if (state != "queued" && state != "running") return body;
            std::this_thread::sleep_for(10ms);
        }
        FAIL("batch never finished");
        return {};
    }
};

std::string first_root(const json& created) { return created["nodes"][0]["node_id"]; }

} // namespace

TEST_CASE("health and schema versioning") {
    Server s;
    auto [status, body] = s.get("/health");
    CHECK(status == 200);
    CHECK(body["schema"] == "tracetune/api/v1");
    auto [nf, err] = s.get("/no/such/route");
    CHECK(nf == 404);
    CHECK(err["error"]["code"] == "not_found");
}

TEST_CASE("POST /sessions") {
    Server s;
    const auto body = s.create();
    CHECK(body["schema"] == "tracetune/api/v1");
    REQUIRE(body["nodes"].size() == 4);
    for (const auto& n : body["nodes"]) {
        CHECK(n["parent_id"].is_null());
        CHECK(n["method"] == "initial");
        auto img = s.client->Get(n["image_url"].get<std::string>());
        REQUIRE(img);
        CHECK(img->status == 200);
        CHECK(img->get_header_value("Content-Type") == "image/png");
        CHECK(img->get_header_value("Cache-Control").find("immutable") != std::string::npos);
        auto thumb = s.client->Get(n["thumbnail_url"].get<std::string>());
        REQUIRE(thumb);
        CHECK(decode_png(std::vector<std::uint8_t>(thumb->body.begin(), thumb->body.end())).width() <= 128);
    }
    const std::string id = body["session"]["session_id"];
    auto [status, got] = s.get("/sessions/" + id);
    CHECK(status == 200);
    CHECK(got["session"]["node_count"] == 4);

    auto [bad, err] = s.post("/sessions", json::object());
    CHECK(bad == 400);
    CHECK(err["error"]["code"] == "bad_request");
    auto raw = s.client->Post("/sessions", "{not json", "application/json");
    REQUIRE(raw);
    CHECK(raw->status == 400);
    auto [missing, e2] = s.get("/sessions/s-nope");
    CHECK(missing == 404);
    CHECK(e2["error"]["code"] == "not_found");
}

TEST_CASE("provider outage maps to a retryable provider_failure with no payload") {
    Server s(nullptr, std::make_shared<mock::HashImageProvider>(tt_test::grid_scene(8), mock::ImageFailurePlan{{}, 1000}));
    auto [status, body] = s.post("/sessions", {{"initial_input", "x"}});
    CHECK(status == 502);
    CHECK(body["error"]["code"] == "provider_failure");
    CHECK(body["error"]["retryable"] == true);
    CHECK(body["error"]["detail"] == "");
}

TEST_CASE("to_api_error hides provider detail") {
    const auto e = to_api_error(Error(ErrorCode::ProviderFailure, "image provider failed", "HTTP 500: key=sk-123"));
    CHECK(e.code == ApiErrorCode::ProviderFailure);
    CHECK(e.to_json().dump().find("sk-123") == std::string::npos);
    CHECK(e.http_status() == 502);
    CHECK(to_api_error(Error(ErrorCode::UnknownNode, "x", "n1")).http_status() == 404);
    CHECK(to_api_error(Error(ErrorCode::Conflict, "x")).http_status() == 409);
    CHECK(to_api_error(Error(ErrorCode::InvalidArgument, "x", "mode")).detail == "mode");
    CHECK(to_api_error(Error(ErrorCode::StorageFailure, "x")).http_status() == 500);
}

TEST_CASE("resolve endpoint") {
    Server s;
    const auto created = s.create();
    const std::string sid = created["session"]["session_id"];
    const std::string node = first_root(created);
    auto [status, body] = s.post("/sessions/" + sid + "/nodes/" + node + "/resolve", {{"selection", s.point_on(5)}});
    REQUIRE(status == 200);
    REQUIRE(body["labels"].size() == 5);
    CHECK(body["labels"][0]["label"] == "object 5");
    CHECK(body["labels"][0]["score"].get<double>() == doctest::Approx(1.0));
    CHECK(body["segment"]["description"] == "a painted object 5;");
    const Mask m = decode_rle(wire::rle_from_json(body["mask"]));
    CHECK(m.count() > 0);

    auto [oob, e1] = s.post("/sessions/" + sid + "/nodes/" + node + "/resolve",
                            {{"selection", {{"kind", "point"}, {"x", 5000}, {"y", 1}}}});
    CHECK(oob == 400);
    CHECK(e1["error"]["code"] == "bad_request");
    auto [nf, e2] = s.post("/sessions/" + sid + "/nodes/n999999/resolve", {{"selection", s.point_on(1)}});
    CHECK(nf == 404);
    CHECK(e2["error"]["detail"] == "n999999");
}

TEST_CASE("refine endpoint: mixed batch, tree, select, rules") {
    Server s;
    const auto created = s.create();
    const std::string sid = created["session"]["session_id"];
    const std::string node = first_root(created);
    const std::string base = "/sessions/" + sid + "/nodes/" + node + "/refine";

    auto [st, queued] = s.post(base, {{"mode", "mixed"}, {"instruction", "make it blue"}, {"selection", s.point_on(2)}});
    REQUIRE(st == 202);
    CHECK(queued["state"] == "queued");
    const auto batch = s.wait_batch(queued["batch_id"]);
    CHECK(batch["state"] == "done");
    REQUIRE(batch["items"].size() == 4);
    std::multiset<std::string> methods;
    for (const auto& it : batch["items"]) methods.insert(it["node"]["method"].get<std::string>());
    CHECK(methods == std::multiset<std::string>{"seed", "seed", "inpaint", "inpaint"});
    CHECK(batch["label"] == "object 2");
    CHECK(batch["items"][2].contains("region_prompt"));

    auto [ts, tree] = s.get("/sessions/" + sid + "/tree");
    REQUIRE(ts == 200);
    CHECK(tree["roots"].size() == 4);
    CHECK(tree["nodes"].size() == 8);
    for (const auto& n : tree["nodes"]) {
        if (n["node_id"] == node) CHECK(n["children"].size() == 4);
        CHECK(n.contains("thumbnail_url"));
    }

    const std::string child = batch["items"][0]["node"]["node_id"];
    auto [ss, sel] = s.post("/sessions/" + sid + "/select", {{"node", child}});
    CHECK(ss == 200);
    CHECK(sel["session"]["active_node_id"] == child);
    auto [sn, sne] = s.post("/sessions/" + sid + "/select", {{"node", "n424242"}});
    CHECK(sn == 404);

    auto [r1, e1] = s.post(base, {{"mode", "seed"}, {"instruction", "x"}});
    CHECK(r1 == 400);
    CHECK(e1["error"]["code"] == "bad_request");
    CHECK(e1["error"]["message"].get<std::string>().find("selection") != std::string::npos);
    auto [r2, e2] = s.post(base, {{"mode", "teleport"}, {"instruction", "x"}});
    CHECK(r2 == 400);
    auto [r3, e3] = s.post(base, {{"mode", "global"}});
    CHECK(r3 == 400);
    auto [r4, e4] = s.get("/batches/b999999");
    CHECK(r4 == 404);
}

TEST_CASE("concurrent second refine on one session is a conflict") {
    std::mutex m;
    std::condition_variable cv;
    bool open = false;
    auto base_text = tt_test::echo_text(tt_test::prompt_for_scene(tt_test::grid_scene(8)));
    auto text = std::make_shared<mock::FunctionTextProvider>([&](const TextRequest& r) {
        if (r.template_id == tmpl::kGlobalRefine) {
            std::unique_lock lock(m);
            cv.wait(lock, [&] { return open; });
        }
        return base_text->generate(r);
    });
    Server s(text);
    const auto created = s.create();
    const std::string sid = created["session"]["session_id"];
    const std::string base = "/sessions/" + sid + "/nodes/" + first_root(created) + "/refine";

    auto [st1, q1] = s.post(base, {{"mode", "global"}, {"instruction", "night"}});
    REQUIRE(st1 == 202);
    auto [st2, q2] = s.post(base, {{"mode", "global"}, {"instruction", "day"}});
    CHECK(st2 == 409);
    CHECK(q2["error"]["code"] == "conflict");

    // other sessions are unaffected
    const auto other = s.create();
    auto [rs, rb] = s.post("/sessions/" + other["session"]["session_id"].get<std::string>() + "/nodes/" +
                               first_root(other) + "/resolve",
                           {{"selection", s.point_on(0)}});
    CHECK(rs == 200);

    {
        std::lock_guard lock(m);
        open = true;
    }
    cv.notify_all();
    CHECK(s.wait_batch(q1["batch_id"])["state"] == "done");
    auto [st3, q3] = s.post(base, {{"mode", "global"}, {"instruction", "day"}});
    CHECK(st3 == 202);
    s.service->drain();
}

TEST_CASE("partial batches report per-slot errors") {
    // seeds derive from the studio rng seed, so a probe server reveals them
    Seed parent_seed = 0;
    {
        Server probe;
        parent_seed = probe.create()["nodes"][0]["seed"];
    }
    auto image = std::make_shared<mock::HashImageProvider>(tt_test::grid_scene(8), mock::ImageFailurePlan{{parent_seed + 2}, 0});
    Server s(nullptr, image);
    const auto created = s.create();
    REQUIRE(created["nodes"][0]["seed"] == parent_seed);
    const std::string sid = created["session"]["session_id"];
    auto [st, q] = s.post("/sessions/" + sid + "/nodes/" + first_root(created) + "/refine",
                          {{"mode", "seed"}, {"instruction", "x"}, {"selection", s.point_on(1)}});
    REQUIRE(st == 202);
    const auto b = s.wait_batch(q["batch_id"]);
    CHECK(b["state"] == "partial");
    REQUIRE(b["items"].size() == 4);
    CHECK(b["items"][2]["error"]["code"] == "provider_failure");
    CHECK(b["items"][0].contains("node"));
    CHECK(b.dump().find("HTTP") == std::string::npos);
}

TEST_CASE("suggestions endpoint") {
    Server s;
    const auto created = s.create();
    const std::string sid = created["session"]["session_id"];
    const std::string node = first_root(created);
    auto [g, gb] = s.post("/suggestions", {{"kind", "global"}, {"session", sid}, {"node", node}});
    CHECK(g == 200);
    CHECK(gb["items"].size() == 5);
    auto [l, lb] = s.post("/suggestions", {{"kind", "label_based"}, {"session", sid}, {"node", node}, {"label", "object 3"}});
    CHECK(l == 200);
    REQUIRE(lb["items"].size() == 6);
    CHECK(lb["items"][0]["tag"] == "refine");
    CHECK(lb["items"][5]["tag"] == "replace");
    CHECK(lb["provenance"]["label"] == "object 3");
    auto [e, eb] = s.post("/suggestions",
                          {{"kind", "expanded"}, {"session", sid}, {"node", node}, {"input", "add"}, {"label", "object 1"}});
    CHECK(e == 200);
    CHECK(eb["items"].size() == 5);
    auto [bad, bb] = s.post("/suggestions", {{"kind", "label_based"}, {"session", sid}, {"node", node}, {"label", "ghost"}});
    CHECK(bad == 400);
    CHECK(bb["error"]["detail"] == "ghost");
}

TEST_CASE("references endpoint: multipart and raw") {
    Server s;
    const auto png = encode_png(mock::HashImageProvider::render(tt_test::grid_scene(2), "ref", 1));
    const std::string bytes(png.begin(), png.end());
    httplib::MultipartFormDataItems items{{"image", bytes, "ref.png", "image/png"}};
    auto r = s.client->Post("/references", items);
    REQUIRE(r);
    CHECK(r->status == 201);
    const auto body = json::parse(r->body);
    CHECK(body["digest"] == sha256_hex(std::span<const std::uint8_t>(png)));
    CHECK(body["caption"] == "a reference photograph");

    auto raw = s.client->Post("/references", bytes, "image/png");
    REQUIRE(raw);
    CHECK(raw->status == 201);
    CHECK(json::parse(raw->body)["digest"] == body["digest"]);

    auto junk = s.client->Post("/references", "not an image", "image/png");
    REQUIRE(junk);
    CHECK(junk->status == 400);

    // a refine that cites the uploaded reference
    const auto created = s.create();
    const std::string sid = created["session"]["session_id"];
    auto [st, q] = s.post("/sessions/" + sid + "/nodes/" + first_root(created) + "/refine",
                          {{"mode", "global"}, {"reference", body["digest"]}});
    REQUIRE(st == 202);
    CHECK(s.wait_batch(q["batch_id"])["state"] == "done");
    auto [st2, q2] = s.post("/sessions/" + sid + "/nodes/" + first_root(created) + "/refine",
                            {{"mode", "global"}, {"reference", std::string(64, 'e')}});
    CHECK(st2 == 400);
}

TEST_CASE("image routes") {
    Server s;
    auto r = s.client->Get("/images/" + std::string(64, 'a') + ".png");
    REQUIRE(r);
    CHECK(r->status == 404);
    auto bad = s.client->Get("/images/../../etc/passwd");
    REQUIRE(bad);
    CHECK(bad->status == 404);
}

TEST_CASE("the published OpenAPI document lists every route") {
    std::ifstream in(tt_test::source_dir() / "docs" / "openapi.json");
    REQUIRE(in);
    const auto doc = json::parse(in);
    CHECK(doc["openapi"] == "3.1.0");
    for (const char* path : {"/health", "/sessions", "/sessions/{session_id}", "/sessions/{session_id}/tree",
                             "/sessions/{session_id}/nodes/{node_id}/resolve",
                             "/sessions/{session_id}/nodes/{node_id}/refine", "/batches/{batch_id}",
                             "/sessions/{session_id}/select", "/suggestions", "/references", "/images/{digest}.png",
                             "/thumbnails/{digest}.png"}) {
        CAPTURE(path);
        CHECK(doc["paths"].contains(path));
    }
    CHECK(doc["paths"].size() == 12);
}
