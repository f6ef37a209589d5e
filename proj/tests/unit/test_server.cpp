#include "dustmagnet/server.hpp"

#include "../support/fixtures.hpp"

#include <doctest.h>
#include <httplib.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <set>

using namespace dustmagnet;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Reply {
    int status = 0;
    json body;
    std::string raw;
};

struct Harness {
    fs::path dir;
    std::shared_ptr<MockProvider> provider = std::make_shared<MockProvider>(7);
    std::unique_ptr<Server> server;
    std::unique_ptr<httplib::Client> client;
    int port = 0;

    explicit Harness(const std::string& name, bool autosave = true) {
        dir = fs::temp_directory_path() / ("dm_server_" + name);
        fs::remove_all(dir);
        ProviderConfig cfg;
        cfg.endpoint_url = "http://127.0.0.1:9/unused";
        server = std::make_unique<Server>(ServerOptions{.data_dir = dir,
                                                        .provider = provider,
                                                        .provider_config = cfg,
                                                        .retry = {},
                                                        .clock = fixtures::ticking_clock(),
                                                        .autosave = autosave});
        port = server->start("127.0.0.1", 0);
        client = std::make_unique<httplib::Client>("127.0.0.1", port);
        client->set_read_timeout(std::chrono::seconds(10));
    }

    ~Harness() {
        client.reset();
        server.reset();
        fs::remove_all(dir);
    }

    static Reply wrap(const httplib::Result& r) {
        REQUIRE(r);
        Reply out{r->status, json(), r->body};
        out.body = json::parse(r->body, nullptr, false);
        return out;
    }

    Reply get(const std::string& path) { return wrap(client->Get(path)); }
    Reply post(const std::string& path, const json& body = json::object()) {
        return wrap(client->Post(path, body.dump(), "application/json"));
    }
    Reply put(const std::string& path, const json& body) { return wrap(client->Put(path, body.dump(), "application/json")); }
    Reply patch(const std::string& path, const json& body) {
        return wrap(client->Patch(path, body.dump(), "application/json"));
    }
    Reply del(const std::string& path) { return wrap(client->Delete(path)); }

    // Polls a job until it finishes; returns the job document.
    json finish(const Reply& accepted) {
        REQUIRE(accepted.status == 202);
        const std::string id = accepted.body.at("job_id");
        const Reply r = get("/api/jobs/" + id + "?wait_ms=10000");
        REQUIRE(r.status == 200);
        return r.body;
    }

    json done(const Reply& accepted) {
        const json job = finish(accepted);
        INFO(job.dump());
        REQUIRE(job.at("status") == "succeeded");
        return job.at("result");
    }

    std::string element(const std::string& kind, const std::string& text) {
        const Reply r = post("/api/elements", {{"kind", kind}, {"text", text}});
        REQUIRE(r.status == 201);
        return r.body.at("id");
    }

    json view(const std::string& name, const std::vector<std::pair<std::string, Point2D>>& magnets) {
        json ms = json::array();
        for (const auto& [text, p] : magnets) ms.push_back({{"text", text}, {"position", {{"x", p.x}, {"y", p.y}}}});
        const Reply r = post("/api/views", {{"name", name}, {"magnets", ms}});
        REQUIRE(r.status == 201);
        return r.body;
    }
};

json pt(double x, double y) { return {{"x", x}, {"y", y}}; }

const json* find_placement(const json& view, const std::string& eid) {
    for (const auto& p : view.at("placements")) {
        if (p.at("element_id") == eid) return &p;
    }
    return nullptr;
}

std::vector<std::string> log_kinds(Harness& h) {
    std::vector<std::string> kinds;
    for (const auto& e : h.get("/api/log").body) kinds.push_back(e.at("kind"));
    return kinds;
}

} // namespace

TEST_CASE("every documented route has a handler and the table has no duplicates") {
    std::set<std::pair<std::string, std::string>> seen;
    for (const auto& r : Server::routes()) {
        CHECK(seen.emplace(r.method, r.pattern).second);
        CHECK_FALSE(r.summary.empty());
    }
    // Construction checks the installed handlers against the table.
    CHECK_NOTHROW(Harness("routes"));
}

TEST_CASE("error mapping is total and lands in the 4xx/5xx range") {
    const std::set<int> allowed = {400, 404, 409, 422, 500, 502, 503};
    for (int c = 0; c <= static_cast<int>(ErrorCode::BadRequest); ++c) {
        const auto code = static_cast<ErrorCode>(c);
        const int status = http_status(code);
        CAPTURE(to_string(code));
        CHECK(allowed.count(status) == 1);
        const json body = api_error(Error(code, "m", "/x"));
        CHECK(body.at("code") == std::string(to_string(code)));
        CHECK(body.at("field_path") == "/x");
    }
    CHECK(http_status(ErrorCode::NotFound) == 404);
    CHECK(http_status(ErrorCode::SteeringUnset) == 409);
    CHECK(http_status(ErrorCode::BadRequest) == 400);
    CHECK(http_status(ErrorCode::ProviderUnavailable) == 503);
    CHECK_FALSE(api_error(Error(ErrorCode::NotFound, "m")).contains("field_path"));
}

TEST_CASE("server refuses to start without a provider") {
    ServerOptions opts;
    opts.data_dir = fs::temp_directory_path() / "dm_server_noprov";
    try {
        Server s(opts);
        FAIL("expected InvalidConfig");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::InvalidConfig);
    }
    fs::remove_all(opts.data_dir);
}

TEST_CASE("binding a busy port fails with IoError") {
    Harness a("busy_a", false);
    ProviderConfig cfg;
    const fs::path dir = fs::temp_directory_path() / "dm_server_busy_b";
    Server b(ServerOptions{.data_dir = dir, .provider = std::make_shared<MockProvider>(), .provider_config = cfg});
    try {
        b.start("127.0.0.1", a.port);
        FAIL("expected IoError");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::IoError);
        CHECK(std::string(e.what()).find(std::to_string(a.port)) != std::string::npos);
    }
    fs::remove_all(dir);
}

TEST_CASE("interaction checklist reachable over HTTP") {
    Harness h("checklist");
    REQUIRE(h.get("/api/health").status == 200);

    // note create
    const std::string note = h.element("note", "A mining town under a red sky.");
    CHECK(h.get("/api/elements/" + note).body.at("kind") == "note");

    // concept add (view with two, then a third magnet)
    json view = h.view("temper", {{"calm and patient", {0, 0}}, {"angry and loud", {1, 0}}});
    const std::string vid = view.at("id");
    Reply added = h.post("/api/views/" + vid + "/magnets", {{"text", "sly and secretive"}, {"position", pt(0.5, 0.9)}});
    REQUIRE(added.status == 201);
    const std::string sly = added.body.at("id");
    CHECK(added.body.at("definition_text") == "sly and secretive");

    // concept edit
    Reply edited = h.patch("/api/views/" + vid + "/magnets/" + sly, {{"text", "sly, secretive and quiet"}});
    CHECK(edited.status == 200);
    CHECK(edited.body.at("definition_text") == "sly, secretive and quiet");

    // concept move
    Reply moved = h.post("/api/views/" + vid + "/magnets/" + sly + "/move", {{"position", pt(0.5, 1.2)}});
    CHECK(moved.status == 200);
    CHECK(moved.body.at("projected") == false);
    CHECK(moved.body.at("position").at("y") == doctest::Approx(1.2));

    // type-button generate (no prompt, no steering)
    json gen = h.done(h.post("/api/generate", {{"kind", "character"}}));
    const std::string plain_id = gen.at("element").at("id");
    CHECK(gen.at("element").at("created_by") == "generated");
    CHECK(gen.at("placements").empty());

    // prompt generate
    gen = h.done(h.post("/api/generate", {{"kind", "place"}, {"prompt", "a lighthouse"}}));
    CHECK(gen.at("element").at("text").get<std::string>().find("a lighthouse") != std::string::npos);

    // steering toggle + marker
    Reply marker = h.put("/api/views/" + vid + "/marker", {{"position", pt(0.2, 0.1)}});
    REQUIRE(marker.status == 200);
    CHECK(marker.body.at("weights").size() == 3);
    gen = h.done(h.post("/api/generate", {{"kind", "character"}, {"steering", {vid}}}));
    const std::string steered_id = gen.at("element").at("id");
    REQUIRE(gen.at("placements").size() == 1);
    CHECK(gen.at("placements")[0].at("view_id") == vid);
    CHECK(gen.at("placements")[0].at("placement").at("provenance") == "steered");
    CHECK(h.del("/api/views/" + vid + "/marker").status == 200);
    CHECK_FALSE(h.get("/api/views/" + vid).body.contains("steering_marker"));

    // add-to-view: recognized job and explicit position
    json placed = h.done(h.post("/api/views/" + vid + "/placements", {{"element_id", plain_id}}));
    CHECK(placed.at("placement").at("provenance") == "auto_recognized");
    Reply direct = h.post("/api/views/" + vid + "/placements", {{"element_id", note}, {"position", pt(0.5, 0.3)}});
    CHECK(direct.status == 201);
    CHECK(direct.body.at("provenance") == "user_corrected");

    // user reposition
    Reply repos = h.post("/api/views/" + vid + "/placements/" + plain_id + "/reposition", {{"position", pt(0.1, 0.05)}});
    CHECK(repos.status == 200);
    CHECK(repos.body.at("provenance") == "user_corrected");
    CHECK(h.get("/api/views/" + vid + "/examples").body.size() == 1);

    // hover edit
    Reply text = h.patch("/api/elements/" + plain_id, {{"text", "Rewritten by hand."}});
    CHECK(text.status == 200);
    CHECK(text.body.at("text") == "Rewritten by hand.");

    // exclude
    CHECK(h.del("/api/views/" + vid + "/placements/" + note).status == 200);
    CHECK(find_placement(h.get("/api/views/" + vid).body, note) == nullptr);
    CHECK(h.get("/api/elements/" + note).status == 200);

    // shift-drag rewrite
    json rewritten = h.done(h.post("/api/views/" + vid + "/rewrite", {{"element_id", steered_id}, {"position", pt(0.9, 0.1)}}));
    CHECK(rewritten.at("element").at("id") == steered_id);
    CHECK(rewritten.at("placements").size() == 1);

    // anchor
    json other = h.view("mood", {{"hopeful", {0, 0}}, {"grim", {2, 0}}, {"weary", {1, 2}}});
    const std::string oid = other.at("id");
    h.done(h.post("/api/views/" + oid + "/placements", {{"element_id", steered_id}}));
    CHECK(h.post("/api/links", {{"view_a", vid}, {"view_b", oid}, {"kind", "anchored"}}).status == 201);
    Reply anchored = h.get("/api/views/" + vid + "/anchored");
    REQUIRE(anchored.status == 200);
    CHECK(anchored.body.at("view_b") == oid);
    CHECK(anchored.body.at("pairs").size() == 1);

    // cross
    json ge = h.view("good/evil", {{"good", {0, 0}}, {"evil", {1, 0}}});
    json lc = h.view("law/chaos", {{"lawful", {0, 0}}, {"chaotic", {1, 0}}});
    CHECK(h.post("/api/links", {{"view_a", ge.at("id")}, {"view_b", oid}, {"kind", "crossed"}}).status == 409);
    CHECK(h.post("/api/links", {{"view_a", ge.at("id")}, {"view_b", lc.at("id")}, {"kind", "crossed"}}).status == 201);
    h.done(h.post("/api/views/" + ge.at("id").get<std::string>() + "/recognize", {{"element_id", steered_id}}));
    Reply plane = h.get("/api/views/" + ge.at("id").get<std::string>() + "/crossed");
    REQUIRE(plane.status == 200);
    REQUIRE(plane.body.at("points").size() == 1);
    Reply cr = h.post("/api/views/" + ge.at("id").get<std::string>() + "/crossed/reposition",
                      {{"element_id", steered_id}, {"position", pt(0.2, 0.8)}});
    REQUIRE(cr.status == 200);
    CHECK(cr.body.at("points")[0].at("weights_a")[0] == doctest::Approx(0.8));
    CHECK(cr.body.at("points")[0].at("weights_b")[0] == doctest::Approx(0.2));
    CHECK(h.del("/api/views/" + ge.at("id").get<std::string>() + "/link").status == 200);

    // multi-select highlight data
    CHECK(h.put("/api/selection", {{"element_ids", {steered_id, plain_id}}}).status == 200);
    Reply sel = h.get("/api/selection");
    CHECK(sel.body.at("element_ids").size() == 2);
    std::set<std::string> highlighted_views;
    for (const auto& hl : sel.body.at("highlights")) highlighted_views.insert(hl.at("view_id").get<std::string>());
    CHECK(highlighted_views.count(vid) == 1);
    CHECK(highlighted_views.count(oid) == 1);

    // delete
    CHECK(h.del("/api/elements/" + plain_id).status == 200);
    CHECK(h.get("/api/elements/" + plain_id).status == 404);

    // one log entry per action
    const auto kinds = log_kinds(h);
    CHECK(std::count(kinds.begin(), kinds.end(), "create") == 1);
    CHECK(std::count(kinds.begin(), kinds.end(), "generate") == 3);
    CHECK(std::count(kinds.begin(), kinds.end(), "concept_edit") == 2); // add + edit
    CHECK(std::count(kinds.begin(), kinds.end(), "reposition") == 3); // one plain, two from the crossed plane
    CHECK(std::count(kinds.begin(), kinds.end(), "rewrite") == 1);
    CHECK(std::count(kinds.begin(), kinds.end(), "exclude") == 1);
    CHECK(std::count(kinds.begin(), kinds.end(), "delete") == 1);
}

TEST_CASE("steering on a marker-less view is a 409") {
    Harness h("steer409");
    const std::string vid = h.view("v", {{"a", {0, 0}}, {"b", {1, 0}}}).at("id");
    Reply r = h.post("/api/generate", {{"kind", "character"}, {"steering", {vid}}});
    CHECK(r.status == 409);
    CHECK(r.body.at("code") == "SteeringUnset");
    CHECK(h.provider->calls() == 0);
}

TEST_CASE("a move that breaks convexity is projected and reported") {
    Harness h("project");
    json v = h.view("square", {{"a", {0, 0}}, {"b", {1, 0}}, {"c", {1, 1}}, {"d", {0, 1}}});
    const std::string vid = v.at("id");
    const std::string c = v.at("magnets")[2].at("id");
    Reply r = h.post("/api/views/" + vid + "/magnets/" + c + "/move", {{"position", pt(0.3, 0.3)}});
    REQUIRE(r.status == 200);
    CHECK(r.body.at("projected") == true);
    CHECK(r.body.at("requested").at("x") == doctest::Approx(0.3));
    const double x = r.body.at("position").at("x");
    const double y = r.body.at("position").at("y");
    CHECK((x != doctest::Approx(0.3) || y != doctest::Approx(0.3)));
    CHECK(r.body.at("view").at("magnets")[2].at("position").at("x") == doctest::Approx(x));
    // The stored layout is still strictly convex.
    std::vector<Point2D> pts;
    for (const auto& m : r.body.at("view").at("magnets")) pts.push_back({m.at("position").at("x"), m.at("position").at("y")});
    CHECK_NOTHROW(MagnetLayout{pts});
}

TEST_CASE("metrics on an empty log are empty, not an error") {
    Harness h("metrics");
    Reply r = h.get("/api/metrics");
    REQUIRE(r.status == 200);
    CHECK(r.body.at("recognition").at("samples").empty());
    CHECK(r.body.at("steering").at("samples").empty());
    CHECK(r.body.at("recognition").at("summary").at("n") == 0);
    CHECK(r.body.at("recognition").at("regression").is_null());
    auto text = h.client->Get("/api/metrics?format=text");
    REQUIRE(text);
    CHECK(text->status == 200);
    CHECK(text->body.find("recognition error") != std::string::npos);
}

TEST_CASE("jobs: accepted immediately, idempotent to poll, failures carry the mapped status") {
    Harness h("jobs");
    const std::string e = h.element("character", "Mara, a quiet smith.");
    const std::string vid = h.view("v", {{"quiet", {0, 0}}, {"loud", {1, 0}}}).at("id");
    Reply accepted = h.post("/api/views/" + vid + "/recognize", {{"element_id", e}});
    REQUIRE(accepted.status == 202);
    CHECK(accepted.body.contains("status"));
    const json first = h.finish(accepted);
    const json second = h.get("/api/jobs/" + accepted.body.at("job_id").get<std::string>()).body;
    CHECK(first == second);
    CHECK(first.at("kind") == "recognize");

    CHECK(h.get("/api/jobs/job-999").status == 404);

    // Rewrite of an element that is not placed is refused before a job starts.
    const std::string loose = h.element("prop", "A cracked bell.");
    Reply refused = h.post("/api/views/" + vid + "/rewrite", {{"element_id", loose}, {"position", pt(0.5, 0)}});
    CHECK(refused.status == 404);

    // A job whose target vanishes fails with NotFound.
    auto& jobs = h.server->jobs();
    const std::string id = jobs.submit("probe", [] () -> json { throw Error(ErrorCode::NotFound, "gone"); });
    const auto info = jobs.wait(id, std::chrono::seconds(5));
    REQUIRE(info);
    CHECK(info->status == JobStatus::failed);
    CHECK(info->http_status == 404);
    CHECK(to_json(*info).at("error").at("code") == "NotFound");
}

TEST_CASE("request validation reports field paths") {
    Harness h("validation");
    Reply r = h.post("/api/elements", {{"kind", "character"}});
    CHECK(r.status == 400);
    CHECK(r.body.at("field_path") == "/text");
    r = h.post("/api/elements", {{"kind", "dragon"}, {"text", "x"}});
    CHECK(r.status == 400);
    r = h.post("/api/elements", {{"kind", "note"}, {"text", "   "}});
    CHECK(r.status == 422);
    CHECK(r.body.at("code") == "InvalidElement");
    auto raw = h.client->Post("/api/elements", "{not json", "application/json");
    REQUIRE(raw);
    CHECK(raw->status == 400);
    r = h.post("/api/views", {{"name", "bad"}, {"magnets", {{{"text", "a"}, {"position", "here"}}}}});
    CHECK(r.status == 400);
    CHECK(r.body.at("field_path") == "/position");
    r = h.post("/api/views", {{"name", "line"},
                              {"magnets", {{{"text", "a"}, {"position", pt(0, 0)}},
                                           {{"text", "b"}, {"position", pt(1, 0)}},
                                           {{"text", "c"}, {"position", pt(2, 0)}}}}});
    CHECK(r.status == 422);
    CHECK(r.body.at("code") == "DegenerateLayout");
    CHECK(h.get("/api/views/nope").status == 404);
    CHECK(h.del("/api/views/nope/examples/x").status == 400);
    CHECK(h.post("/api/world/save", {{"file", "../escape.json"}}).status == 400);
}

TEST_CASE("save, export, import and load keep the world") {
    Harness h("files");
    const std::string e = h.element("character", "Ivo, a ferryman.");
    const std::string vid = h.view("v", {{"honest", {0, 0}}, {"crooked", {1, 0}}}).at("id");
    h.post("/api/views/" + vid + "/placements", {{"element_id", e}, {"weights", {0.25, 0.75}}});
    CHECK(h.patch("/api/world", {{"name", "River"}}).status == 200);

    CHECK(h.post("/api/world/save", {{"file", "copy.json"}}).status == 200);
    CHECK(fs::exists(h.dir / "copy.json"));
    // Autosave keeps world.json current.
    CHECK(fs::exists(h.server->world_path()));

    auto exported = h.client->Get("/api/world/export");
    REQUIRE(exported);
    CHECK(exported->status == 200);
    const std::string doc = exported->body;

    h.del("/api/elements/" + e);
    CHECK(h.get("/api/elements").body.empty());

    Reply imported = h.wrap(h.client->Post("/api/world/import", doc, "application/json"));
    REQUIRE(imported.status == 200);
    CHECK(imported.body.at("name") == "River");
    CHECK(h.get("/api/elements/" + e).status == 200);
    CHECK(find_placement(h.get("/api/views/" + vid).body, e)->at("weights")[1] == doctest::Approx(0.75));

    h.del("/api/elements/" + e);
    Reply loaded = h.post("/api/world/load", {{"file", "copy.json"}});
    REQUIRE(loaded.status == 200);
    CHECK(h.get("/api/elements/" + e).status == 200);
    CHECK(h.post("/api/world/load", {{"file", "absent.json"}}).status == 404);

    Reply bad = h.wrap(h.client->Post("/api/world/import", "{\"format_version\": 9}", "application/json"));
    CHECK(bad.status == 422);
}

TEST_CASE("a restarted server picks up the saved world and log") {
    const fs::path dir = fs::temp_directory_path() / "dm_server_restart";
    fs::remove_all(dir);
    std::string eid;
    std::size_t log_size = 0;
    {
        Server s(ServerOptions{.data_dir = dir, .provider = std::make_shared<MockProvider>(), .clock = fixtures::ticking_clock()});
        const int port = s.start("127.0.0.1", 0);
        httplib::Client c("127.0.0.1", port);
        auto r = c.Post("/api/elements", json{{"kind", "note"}, {"text", "Keep me."}}.dump(), "application/json");
        REQUIRE(r);
        eid = json::parse(r->body).at("id");
        log_size = json::parse(c.Get("/api/log")->body).size();
    }
    Server s(ServerOptions{.data_dir = dir, .provider = std::make_shared<MockProvider>(), .clock = fixtures::ticking_clock()});
    const int port = s.start("127.0.0.1", 0);
    httplib::Client c("127.0.0.1", port);
    CHECK(c.Get("/api/elements/" + eid)->status == 200);
    CHECK(json::parse(c.Get("/api/log")->body).size() == log_size);
    s.stop();
    fs::remove_all(dir);
}
