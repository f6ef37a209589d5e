#pragma once

#include "dustmagnet/geometry.hpp"
#include "dustmagnet/world.hpp"

#include <cmath>
#include <random>
#include <string>
#include <vector>

namespace fixtures {

using namespace dustmagnet;

// Deterministic clock: starts at a fixed instant and ticks 1 s per call.
inline Clock ticking_clock(Timestamp start = 1700000000000) {
    auto t = std::make_shared<Timestamp>(start);
    return [t] { return (*t) += 1000; };
}

// Random strictly convex polygon: sorted angles on a circle with a minimum
// gap, then a random rotation, anisotropic scale and translation.
inline std::vector<Point2D> random_convex_layout(std::mt19937_64& rng, std::size_t n) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    if (n == 2) {
        Point2D a{u(rng) * 10 - 5, u(rng) * 10 - 5};
        Point2D b;
        do {
            b = {u(rng) * 10 - 5, u(rng) * 10 - 5};
        } while (distance(a, b) < 0.5);
        return {a, b};
    }
    std::vector<double> angles;
    const double min_gap = 0.3;
    while (true) {
        angles.clear();
        for (std::size_t i = 0; i < n; ++i) angles.push_back(u(rng) * 2 * M_PI);
        std::sort(angles.begin(), angles.end());
        bool ok = true;
        for (std::size_t i = 0; i < n; ++i) {
            const double next = i + 1 < n ? angles[i + 1] : angles[0] + 2 * M_PI;
            if (next - angles[i] < min_gap) ok = false;
        }
        if (ok) break;
    }
    const double rot = u(rng) * 2 * M_PI;
    const double sx = 0.5 + u(rng) * 4, sy = 0.5 + u(rng) * 4;
    const double tx = u(rng) * 20 - 10, ty = u(rng) * 20 - 10;
    const bool clockwise = u(rng) < 0.5;
    std::vector<Point2D> out;
    for (double a : angles) {
        const double x = sx * std::cos(a), y = sy * std::sin(a);
        out.push_back({tx + x * std::cos(rot) - y * std::sin(rot), ty + x * std::sin(rot) + y * std::cos(rot)});
    }
    if (clockwise) std::reverse(out.begin(), out.end());
    return out;
}

// Uniform-ish interior point: a random convex combination of the vertices.
inline Point2D random_interior_point(std::mt19937_64& rng, const std::vector<Point2D>& poly) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> w;
    double sum = 0;
    for (std::size_t i = 0; i < poly.size(); ++i) {
        w.push_back(e(rng));
        sum += w.back();
    }
    Point2D p{0, 0};
    for (std::size_t i = 0; i < poly.size(); ++i) p = p + (w[i] / sum) * poly[i];
    return p;
}

inline WeightVector random_weights(std::mt19937_64& rng, std::size_t n) {
    std::exponential_distribution<double> e(1.0);
    std::vector<double> w;
    for (std::size_t i = 0; i < n; ++i) w.push_back(e(rng));
    return WeightVector::normalized(std::move(w));
}

inline const std::vector<Point2D>& triangle_layout() {
    static const std::vector<Point2D> t = {{0.0, 0.0}, {1.0, 0.0}, {0.5, 0.8660254037844386}};
    return t;
}

inline const std::vector<Point2D>& square_layout() {
    static const std::vector<Point2D> s = {{0, 0}, {1, 0}, {1, 1}, {0, 1}};
    return s;
}

// The horse world of the prompt figure: a note, characters, factions, a
// "factions" view whose magnets come from the faction notes, a correction
// example and a steering marker.
struct HorseWorld {
    World world;
    ElementId note, silver, crow, black_hoof, wayward, golden;
    ViewId factions;    // 1-a Black Hoof, 1-b Wayward, 1-c Golden Stirrup
    ViewId loyalties;   // A Golden Stirrup, B Black Hoof, C Wayward
};

inline const char* kBlackHoof = "The Black Hoof Sect, a sinister cult that corrupts horses to do their evil bidding.";
inline const char* kWayward =
    "The Wayward Pony Patrol, a ragtag group of young horses who strive to help others, despite their lack of formal "
    "training or noble heritage.";
inline const char* kGolden =
    "The Order of the Golden Stirrup, a secret society of horse whisperers who use their supernatural talents to aid "
    "the pure of heart.";
inline const char* kSilver =
    "Silver Starshine, 29, is a conflicted gray stallion who turned from the Wayward Pony Patrol to the allure of the "
    "Black Hoof Sect, despite his Order of the Golden Stirrup upbringing. Though he tries to deny it, Silver feels the "
    "pull of his conscience and Willow's faith in him, making him question his dark path.";
inline const char* kCrow =
    "Crow Shadow, 19, is a slick black colt who joined the Patrol after leaving the Sect, but whose cold heart leaves "
    "him susceptible to their dark whispers. Though he claims to seek redemption, his sarcasm and scheming nature make "
    "the idealistic Willow uneasy.";

inline HorseWorld horse_world() {
    HorseWorld h{World("horse-world", "Horse soul", ticking_clock()), {}, {}, {}, {}, {}, {}, {}, {}};
    World& w = h.world;
    h.note = w.create_element(ElementKind::note, "steed for the horse soul.", CreatedBy::user).id;
    h.silver = w.create_element(ElementKind::character, kSilver, CreatedBy::generated).id;
    h.black_hoof = w.create_element(ElementKind::faction, kBlackHoof, CreatedBy::generated).id;
    h.wayward = w.create_element(ElementKind::faction, kWayward, CreatedBy::generated).id;
    h.golden = w.create_element(ElementKind::faction, kGolden, CreatedBy::generated).id;

    const auto& tri = triangle_layout();
    h.factions = w.create_view("factions", {{kBlackHoof, tri[0], h.black_hoof},
                                            {kWayward, tri[1], h.wayward},
                                            {kGolden, tri[2], h.golden}})
                     .id;
    const MagnetLayout fl = w.view(h.factions).layout();
    w.add_element_to_view(h.factions, h.silver, WeightVector({0.40, 0.30, 0.30}));
    w.reposition_element(h.factions, h.silver, weights_to_position(fl, WeightVector({0.51, 0.20, 0.29})));
    w.set_steering_marker(h.factions, weights_to_position(fl, WeightVector({0.48, 0.34, 0.18})));

    h.loyalties = w.create_view("loyalties", {{kGolden, tri[0], std::nullopt},
                                              {kBlackHoof, tri[1], std::nullopt},
                                              {kWayward, tri[2], std::nullopt}})
                      .id;
    // Crow Shadow is corrected in the loyalties view, leaving the example
    // behind, and then removed from the world.
    h.crow = w.create_element(ElementKind::character, kCrow, CreatedBy::generated).id;
    const MagnetLayout ll = w.view(h.loyalties).layout();
    w.add_element_to_view(h.loyalties, h.crow, WeightVector({0.2, 0.4, 0.4}));
    w.reposition_element(h.loyalties, h.crow, weights_to_position(ll, WeightVector({0.03, 0.50, 0.47})));
    w.delete_element(h.crow);
    return h;
}

// A view of four faction concepts with five characters, transcribed from a
// participant's world.
struct GuardiansWorld {
    World world;
    ViewId view;
    std::vector<ElementId> factions;
    std::vector<ElementId> characters;
};

inline GuardiansWorld guardians_world() {
    GuardiansWorld g{World("guardians", "Forest of hunters", ticking_clock()), {}, {}, {}};
    World& w = g.world;
    const char* concepts[4] = {
        "Nature's Guardians- A group of pacifist druids who use nature magic to heal and protect the forest's "
        "creatures.",
        "The Sacred Circle - A coven of benevolent witches who use divination and healing magic to maintain harmony "
        "between humans and supernatural creatures.",
        "The Ironwardens are a reclusive order of monster hunters who use their knowledge of ancient rituals and "
        "enchanted weaponry to banish supernatural threats while avoiding unnecessary bloodshed.",
        "Evil's End- A grizzled band of monster hunters who use advanced technology and weaponry to hunt supernatural "
        "creatures.",
    };
    // Screen coordinates: top-left, top-right, bottom-right, bottom-left.
    const Point2D corners[4] = {{100, 100}, {500, 100}, {500, 500}, {100, 500}};
    std::vector<MagnetSpec> specs;
    for (int i = 0; i < 4; ++i) {
        g.factions.push_back(w.create_element(ElementKind::faction, concepts[i], CreatedBy::user).id);
        specs.push_back({concepts[i], corners[i], g.factions.back()});
    }
    g.view = w.create_view("factions", specs).id;
    struct Placed {
        const char* text;
        Point2D at;
    };
    const Placed chars[5] = {
        {"Miranda Stonewall, 26 years old. An idealistic young druid who believes in protecting all life, Miranda is "
         "conflicted over whether to help Linus, whom she sees as misguided or report him to her elders in Nature's "
         "Guardians.",
         {130, 140}},
        {"Ava Wildheart is a young ranger who patrols the enchanted forest, using her bow and nature magic to protect "
         "its creatures from poachers and dark sorcery. Though she is gentle and nurturing by nature, she will kill if "
         "necessary to defend the weak and innocent.",
         {120, 260}},
        {"Morgan Blackstone, 43 years old. A ruthless, battle-hardened monster hunter, Morgan serves as a senior "
         "commander in Evil's End, tirelessly tracking down supernatural creatures with advanced weaponry and "
         "technology. Though he scoffs at pacifist druids and witches, he sometimes recalls the teachings of his "
         "former mentor Solomon, who sought to temper Morgan's methods with wisdom and restraint.",
         {170, 420}},
        {"Linus Blackwell, 37 years old. A former member of Nature's Guardians turned cynical monster hunter after a "
         "werewolf killed his wife, he now sees shades of gray rather than Nature's Guardians' black-and-white views. "
         "The Sacred Circle has put a bounty out on his life.",
         {300, 300}},
        {"Elora Moonbrook, 32 years old. As a senior enchantress of the Sacred Circle, Elora tries to guide the Circle "
         "away from bounty hunting, hoping instead to redeem her old friend Linus through compassion. She secretly "
         "meets with Linus in the woods, reminding him of their shared past in Nature's Guardians.",
         {460, 130}},
    };
    const MagnetLayout layout = w.view(g.view).layout();
    for (const auto& c : chars) {
        g.characters.push_back(w.create_element(ElementKind::character, c.text, CreatedBy::generated).id);
        w.add_element_to_view(g.view, g.characters.back(), position_to_weights(layout, c.at), Provenance::user_corrected);
    }
    return g;
}

// Two-magnet alignment views (good-evil, law-chaos), crossed, with four
// characters placed in both.
struct AlignmentWorld {
    World world;
    ViewId good_evil, law_chaos;
    std::vector<ElementId> characters;
};

inline AlignmentWorld alignment_world() {
    AlignmentWorld a{World("alignment", "Alignment chart", ticking_clock()), {}, {}, {}};
    World& w = a.world;
    a.good_evil = w.create_view("good - evil", {{"Good implies altruism, respect for life, and a concern for the "
                                                 "dignity of sentient beings.",
                                                 {0, 0}, std::nullopt},
                                                {"Evil implies hurting, oppressing, and killing others.", {1, 0},
                                                 std::nullopt}})
                      .id;
    a.law_chaos = w.create_view("law - chaos", {{"Law implies honor, trustworthiness, obedience to authority, and "
                                                 "reliability.",
                                                 {0, 0}, std::nullopt},
                                                {"Chaos implies freedom, adaptability, and flexibility.", {1, 0},
                                                 std::nullopt}})
                      .id;
    struct C {
        const char* text;
        double good, law;
    };
    const C chars[4] = {
        {"Sir Galahad Pureheart, age 45, is a devoted paladin who lives by a strict code of honor, righteousness and "
         "duty.",
         0.92, 0.95},
        {"Captain Jade Stormcloud, age 32, is a brash but big-hearted pirate who lives life to the fullest.", 0.7, 0.15},
        {"Lord Vladimir Skullreaper, age 67, is a cruel tyrant who rules his lands with an iron fist.", 0.05, 0.85},
        {"Brother Lucian Greymane, age 37, is a battle-hardened templar who tirelessly wages war against the forces of "
         "darkness.",
         0.75, 0.7},
    };
    for (const auto& c : chars) {
        a.characters.push_back(w.create_element(ElementKind::character, c.text, CreatedBy::generated).id);
        w.add_element_to_view(a.good_evil, a.characters.back(), WeightVector({c.good, 1.0 - c.good}));
        w.add_element_to_view(a.law_chaos, a.characters.back(), WeightVector({c.law, 1.0 - c.law}));
    }
    w.link_views(a.good_evil, a.law_chaos, LinkKind::crossed);
    w.set_steering_marker(a.good_evil, Point2D{0.2, 0.0});
    return a;
}

// Interaction log with hand-computed metrics, on one 2-magnet view "v".
//
//   element  example_count  steering   auto        final       recognition  steering
//   e1..e6   0..5           -          (0.7,0.3)   unchanged   0            -
//   e7       6              -          (0.7,0.3)   (0.6,0.4)   0.1          -
//   e8       7              (0.5,0.5)  (0.42,0.58) (0.32,0.68) 0.1          0.18
//   e9       8              (0.5,0.5)  (0.32,0.68) unchanged   0            0.18
//   e10      9              (0.5,0.5)  (0.88,0.12) (0.68,0.32) 0.2          0.18
//   e11      3              -          (1,0)       (0,1)       deleted later, excluded
//   e12      4              -          (0.5,0.5)   excluded from the view, excluded
//
// Recognition mean 0.4 / 10 = 0.04, steering mean 0.18. Recognition OLS
// on example_count: xbar 4.5, Sxx 82.5, Sxy 1.3, slope 1.3 / 82.5.
inline std::vector<InteractionLogEntry> metrics_log() {
    std::vector<InteractionLogEntry> log;
    Timestamp t = 1700000000000;
    auto push = [&](InteractionLogEntry e) {
        e.timestamp = (t += 1000);
        e.view_id = e.kind == LogKind::remove ? "" : "v";
        log.push_back(std::move(e));
    };
    auto wv = [](double a) { return WeightVector({a, 1.0 - a}); };
    for (int i = 1; i <= 6; ++i) {
        push({.kind = LogKind::recognize, .element_id = "e" + std::to_string(i), .auto_weights = wv(0.7),
              .example_count_at_time = i - 1});
    }
    push({.kind = LogKind::recognize, .element_id = "e11", .auto_weights = wv(1.0), .example_count_at_time = 3});
    push({.kind = LogKind::recognize, .element_id = "e12", .auto_weights = wv(0.5), .example_count_at_time = 4});
    push({.kind = LogKind::recognize, .element_id = "e7", .auto_weights = wv(0.7), .example_count_at_time = 6});
    push({.kind = LogKind::reposition, .element_id = "e7", .auto_weights = wv(0.7), .user_weights = wv(0.6),
          .example_count_at_time = 6});
    push({.kind = LogKind::reposition, .element_id = "e11", .auto_weights = wv(1.0), .user_weights = wv(0.0),
          .example_count_at_time = 7});
    const double autos[3] = {0.42, 0.32, 0.88};
    for (int k = 0; k < 3; ++k) {
        const std::string id = "e" + std::to_string(8 + k);
        push({.kind = LogKind::generate, .element_id = id, .steering_weights = wv(0.5), .example_count_at_time = 7 + k});
        push({.kind = LogKind::recognize, .element_id = id, .auto_weights = wv(autos[k]), .steering_weights = wv(0.5),
              .example_count_at_time = 7 + k});
    }
    push({.kind = LogKind::reposition, .element_id = "e8", .auto_weights = wv(0.42), .user_weights = wv(0.32),
          .example_count_at_time = 10});
    push({.kind = LogKind::reposition, .element_id = "e10", .auto_weights = wv(0.88), .user_weights = wv(0.68),
          .example_count_at_time = 11});
    push({.kind = LogKind::exclude, .element_id = "e12"});
    push({.kind = LogKind::remove, .element_id = "e11"});
    return log;
}

} // namespace fixtures
