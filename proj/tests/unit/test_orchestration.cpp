#include "dustmagnet/error.hpp"
#include "dustmagnet/orchestration.hpp"

#include "fixtures.hpp"

#include <doctest.h>

#include <atomic>
#include <thread>

using namespace dustmagnet;

namespace {

ErrorCode code_of(auto&& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return ErrorCode::BadRequest;
}

// Wraps the mock: records every bundle and can return canned answers for
// the first few calls.
class Recorder : public CompletionProvider {
public:
    std::string id() const override { return "recorder"; }
    AttemptOutcome attempt(const PromptBundle& bundle, const ProviderConfig& config) override {
        std::lock_guard lock(mu);
        bundles.push_back(bundle);
        if (!canned.empty()) {
            auto text = canned.front();
            canned.erase(canned.begin());
            return {AttemptOutcome::Status::ok, text, {}};
        }
        return mock.attempt(bundle, config);
    }
    std::mutex mu;
    MockProvider mock{1};
    std::vector<PromptBundle> bundles;
    std::vector<std::string> canned;
};

struct Rig {
    explicit Rig(World w) : store(std::move(w)), provider(std::make_shared<Recorder>()), orch(store, provider, ProviderConfig{}) {}
    WorldStore store;
    std::shared_ptr<Recorder> provider;
    Orchestrator orch;
};

std::vector<LogKind> kinds(const World& w, std::size_t from = 0) {
    std::vector<LogKind> out;
    for (std::size_t i = from; i < w.log().size(); ++i) out.push_back(w.log()[i].kind);
    return out;
}

} // namespace

TEST_CASE("steered generation places the new element in the steering view") {
    auto a = fixtures::alignment_world();
    a.world.set_steering_marker(a.good_evil, Point2D{0.5, 0});
    Rig rig(std::move(a.world));
    const std::size_t log0 = rig.store.snapshot().log().size();

    const GenerationOutcome out =
        rig.orch.generate_element({.kind = ElementKind::character, .steering = {a.good_evil}});
    const World w = rig.store.snapshot();
    CHECK(out.element.created_by == CreatedBy::generated);
    CHECK(w.has_element(out.element.id));
    REQUIRE(out.placements.size() == 1);
    const Placement& p = w.view(a.good_evil).placements.at(out.element.id);
    CHECK(p.provenance == Provenance::steered);
    CHECK(p.last_auto_weights.has_value());
    // Mock recognition of the generated text, through integer percents.
    std::vector<std::string> concepts;
    for (const auto& m : w.view(a.good_evil).magnets) concepts.push_back(m.definition_text);
    const WeightVector expected = mock_recognize(out.element.text, concepts);
    CHECK(approx_equal(p.weights, expected, 0.005 + 1e-12));
    // Steered elements only land in their steering views.
    CHECK_FALSE(w.view(a.law_chaos).placements.contains(out.element.id));

    CHECK(kinds(w, log0) == std::vector<LogKind>{LogKind::generate, LogKind::recognize});
    const auto& gen = w.log()[log0];
    CHECK(gen.view_id == a.good_evil);
    CHECK(approx_equal(*gen.steering_weights, WeightVector({0.5, 0.5}), 1e-12));
    const auto& rec = w.log()[log0 + 1];
    CHECK(approx_equal(*rec.steering_weights, WeightVector({0.5, 0.5}), 1e-12));
    CHECK(rec.auto_weights == p.weights);
    CHECK(rig.provider->bundles[0].family == PromptFamily::steered_generation);
    CHECK(rig.provider->bundles[1].family == PromptFamily::recognition);
}

TEST_CASE("plain and prompted generation") {
    Rig rig(World("w", "empty", fixtures::ticking_clock()));
    const auto out = rig.orch.generate_element({.kind = ElementKind::faction});
    CHECK(out.placements.empty());
    CHECK(rig.provider->bundles[0].body.rfind("I am trying to write a story.\n\nBased on this information", 0) == 0);

    auto a = fixtures::alignment_world();
    Rig prompted(std::move(a.world));
    const auto p = prompted.orch.generate_element(
        {.kind = ElementKind::character, .user_prompt = "Create a character that is equal parts good and evil"});
    CHECK(p.placements.empty());
    const World w = prompted.store.snapshot();
    for (const auto& v : w.views()) CHECK_FALSE(v.placements.contains(p.element.id));
    CHECK(prompted.provider->bundles[0].family == PromptFamily::plain_generation);
    CHECK(prompted.provider->bundles[0].body.find("Create a character that is equal parts good and evil") !=
          std::string::npos);
}

TEST_CASE("generation errors") {
    auto a = fixtures::alignment_world();
    Rig rig(std::move(a.world));
    CHECK(code_of([&] { rig.orch.generate_element({.steering = {a.law_chaos}}); }) == ErrorCode::SteeringUnset);
    CHECK(code_of([&] { rig.orch.generate_element({.steering = {"view-404"}}); }) == ErrorCode::NotFound);
    CHECK(rig.provider->bundles.empty());

    // Parse failures are retried twice, then surface.
    rig.provider->canned = {"no marker", "still none", "again none"};
    CHECK(code_of([&] { rig.orch.generate_element({.kind = ElementKind::place}); }) == ErrorCode::MissingMarker);
    CHECK(rig.provider->bundles.size() == 3);
    rig.provider->canned = {"no marker", "x\n====\nThe Glass Fen"};
    CHECK(rig.orch.generate_element({.kind = ElementKind::place}).element.text == "The Glass Fen");
}

TEST_CASE("recognize_and_place") {
    auto a = fixtures::alignment_world();
    const std::string good = a.world.view(a.good_evil).magnets[0].definition_text;
    const ElementId e = a.world.create_element(ElementKind::character, good, CreatedBy::user).id;
    Rig rig(std::move(a.world));
    const Placement p = rig.orch.recognize_and_place(a.good_evil, e);
    const World w = rig.store.snapshot();
    const View& ge = w.view(a.good_evil);
    const WeightVector expected = mock_recognize(good, {ge.magnets[0].definition_text, ge.magnets[1].definition_text});
    CHECK(approx_equal(p.weights, expected, 0.005 + 1e-12));
    CHECK(distance(p.position, weights_to_position(ge.layout(), expected)) < 0.01);
    CHECK(distance(p.position, ge.magnets[0].position) < distance(p.position, ge.magnets[1].position));
    // Crossed: both axes recognized, one entry each.
    CHECK(w.view(a.law_chaos).placements.contains(e));
    CHECK(kinds(w, w.log().size() - 2) == std::vector<LogKind>{LogKind::recognize, LogKind::recognize});
    CHECK(w.log()[w.log().size() - 2].view_id == a.good_evil);
    CHECK(w.log().back().view_id == a.law_chaos);

    rig.provider->canned = {"r\n====\n{\"A\": 30, \"B\": 90}"};
    rig.store.mutate([&](World& w2) { w2.unlink_views(a.good_evil); });
    const Placement n = rig.orch.recognize_and_place(a.good_evil, e);
    CHECK(approx_equal(n.weights, WeightVector({0.25, 0.75}), 1e-12));

    rig.provider->canned = {"r\n====\n{\"A\": 1}", "r\n====\n{\"A\": 1}", "r\n====\n{\"A\": 1}"};
    CHECK(code_of([&] { rig.orch.recognize_and_place(a.good_evil, e); }) == ErrorCode::MalformedRecognition);
    CHECK(rig.store.snapshot().view(a.good_evil).placements.at(e).weights == n.weights);
}

TEST_CASE("automatic recognition keeps user corrections") {
    auto h = fixtures::horse_world();
    Rig rig(std::move(h.world));
    const Placement before = rig.store.snapshot().view(h.factions).placements.at(h.silver);
    REQUIRE(before.provenance == Provenance::user_corrected);
    CHECK(rig.orch.recognize_and_place(h.factions, h.silver, RecognizeMode::keep_user_corrections).weights ==
          before.weights);
    CHECK(rig.provider->bundles.empty());
    const Placement forced = rig.orch.recognize_and_place(h.factions, h.silver, RecognizeMode::explicit_request);
    CHECK(forced.provenance == Provenance::auto_recognized);
    CHECK(rig.provider->bundles.size() == 1);
}

TEST_CASE("the next recognition prompt carries the latest correction") {
    auto h = fixtures::horse_world();
    Rig rig(std::move(h.world));
    const ElementId e = rig.store.mutate([](World& w) {
        return w.create_element(ElementKind::character, "Willow Brook, 22, a soft-spoken mare.", CreatedBy::user).id;
    });
    rig.orch.recognize_and_place(h.factions, e);
    rig.store.mutate([&](World& w) {
        w.reposition_element(h.factions, e, weights_to_position(w.view(h.factions).layout(), WeightVector({0.12, 0.61, 0.27})));
    });
    const ElementId next = rig.store.mutate([](World& w) {
        return w.create_element(ElementKind::character, "Ember, 40, a retired racer.", CreatedBy::user).id;
    });
    rig.orch.recognize_and_place(h.factions, next);
    const std::string& body = rig.provider->bundles.back().body;
    CHECK(body.find("Description: Willow Brook, 22, a soft-spoken mare.\nAnswer Value:\nA: 12%\nB: 61%\nC: 27%") !=
          std::string::npos);
    const World w = rig.store.snapshot();
    CHECK(w.log().back().example_count_at_time == 2);
}

TEST_CASE("rewrite moves the element toward the target") {
    auto a = fixtures::alignment_world();
    const std::string evil = a.world.view(a.good_evil).magnets[1].definition_text;
    const ElementId e = a.world.create_element(ElementKind::character, "Mordred, " + evil, CreatedBy::user).id;
    a.world.unlink_views(a.good_evil);
    Rig rig(std::move(a.world));
    const Placement before = rig.orch.recognize_and_place(a.good_evil, e);
    rig.store.mutate([&](World& w) { w.add_element_to_view(a.law_chaos, e, WeightVector({0.5, 0.5})); });
    const std::size_t log0 = rig.store.snapshot().log().size();

    const Point2D good_pos = rig.store.snapshot().view(a.good_evil).magnets[0].position;
    const Element rewritten = rig.orch.rewrite_element(a.good_evil, e, good_pos);
    CHECK(rewritten.text != "Mordred, " + evil);
    const World w = rig.store.snapshot();
    const Placement after = w.view(a.good_evil).placements.at(e);
    CHECK(after.weights[0] > before.weights[0]);
    CHECK(kinds(w, log0) == std::vector<LogKind>{LogKind::rewrite, LogKind::recognize, LogKind::recognize});
    CHECK(w.log()[log0].steering_weights == WeightVector({1, 0}));
    CHECK(w.log()[log0].auto_weights == before.weights);
    CHECK(rig.provider->bundles[rig.provider->bundles.size() - 3].family == PromptFamily::rewrite);

    // Target equal to the current weights still regenerates.
    const std::size_t calls = rig.provider->bundles.size();
    rig.orch.rewrite_element(a.good_evil, e, after.position);
    CHECK(rig.provider->bundles.size() > calls);

    const ElementId loose = rig.store.mutate([](World& x) {
        return x.create_element(ElementKind::prop, "a loose thread", CreatedBy::user).id;
    });
    CHECK(code_of([&] { rig.orch.rewrite_element(a.good_evil, loose, {0, 0}); }) == ErrorCode::NotFound);
}

TEST_CASE("stale placements are re-recognized in element order") {
    auto g = fixtures::guardians_world();
    Rig rig(std::move(g.world));
    rig.store.mutate([&](World& w) { w.edit_concept(g.view, w.view(g.view).magnets[0].id, "Nature's Guardians, druids."); });
    const std::size_t log0 = rig.store.snapshot().log().size();
    const auto placed = rig.orch.rerecognize_stale(g.view);
    REQUIRE(placed.size() == g.characters.size());
    const World w = rig.store.snapshot();
    for (std::size_t i = 0; i < placed.size(); ++i) {
        CHECK(placed[i].element_id == g.characters[i]);
        CHECK(w.log()[log0 + i].element_id == g.characters[i]);
        CHECK_FALSE(w.view(g.view).placements.at(g.characters[i]).stale);
    }
    CHECK(rig.orch.rerecognize_stale(g.view).empty());
}

TEST_CASE("results for deleted targets are dropped") {
    auto a = fixtures::alignment_world();
    a.world.unlink_views(a.good_evil);
    WorldStore store(std::move(a.world));

    // Deletes the element while the completion is in flight.
    class Deleting : public CompletionProvider {
    public:
        Deleting(WorldStore& s, ElementId e) : store(s), victim(std::move(e)) {}
        std::string id() const override { return "deleting"; }
        AttemptOutcome attempt(const PromptBundle&, const ProviderConfig&) override {
            store.mutate([&](World& w) { w.delete_element(victim); });
            return {AttemptOutcome::Status::ok, "r\n====\n{\"A\": 50, \"B\": 50}", {}};
        }
        WorldStore& store;
        ElementId victim;
    };
    const ElementId victim = a.characters[0];
    Orchestrator orch(store, std::make_shared<Deleting>(store, victim), ProviderConfig{});
    CHECK(code_of([&] { orch.recognize_and_place(a.good_evil, victim); }) == ErrorCode::NotFound);
    const World w = store.snapshot();
    CHECK_FALSE(w.has_element(victim));
    for (const auto& v : w.views()) CHECK_FALSE(v.placements.contains(victim));
    CHECK(w.log().back().kind == LogKind::remove);
}

TEST_CASE("one LLM operation per view at a time") {
    auto a = fixtures::alignment_world();
    a.world.unlink_views(a.good_evil);
    WorldStore store(std::move(a.world));

    class Slow : public CompletionProvider {
    public:
        std::string id() const override { return "slow"; }
        AttemptOutcome attempt(const PromptBundle&, const ProviderConfig&) override {
            const int now = ++inflight;
            int prev = peak.load();
            while (now > prev && !peak.compare_exchange_weak(prev, now)) {}
            std::this_thread::sleep_for(std::chrono::milliseconds(50));
            --inflight;
            return {AttemptOutcome::Status::ok, "r\n====\n{\"A\": 40, \"B\": 60}", {}};
        }
        std::atomic<int> inflight{0}, peak{0};
    };
    auto slow = std::make_shared<Slow>();
    Orchestrator orch(store, slow, ProviderConfig{});
    std::vector<std::thread> threads;
    for (const auto& e : a.characters) threads.emplace_back([&, e] { orch.recognize_and_place(a.good_evil, e); });
    for (auto& t : threads) t.join();
    CHECK(slow->peak.load() == 1);

    // Different views proceed in parallel.
    slow->peak = 0;
    std::thread t1([&] { orch.recognize_and_place(a.good_evil, a.characters[0]); });
    std::thread t2([&] { orch.recognize_and_place(a.law_chaos, a.characters[0]); });
    t1.join();
    t2.join();
    CHECK(slow->peak.load() == 2);
}
