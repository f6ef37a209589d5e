#include "dustmagnet/world.hpp"

#include "dustmagnet/error.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace dustmagnet {

Clock system_clock() {
    return [] {
        using namespace std::chrono;
        return duration_cast<milliseconds>(system_clock::now().time_since_epoch()).count();
    };
}

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::pair<Enum, std::string_view> (&table)[N], std::string_view what) {
    for (const auto& [value, name] : table) {
        if (name == s) return value;
    }
    throw Error(ErrorCode::BadRequest, "unknown " + std::string(what) + " '" + std::string(s) + "'");
}

template <typename Enum, std::size_t N>
std::string_view enum_name(Enum e, const std::pair<Enum, std::string_view> (&table)[N]) {
    for (const auto& [value, name] : table) {
        if (value == e) return name;
    }
    return "unknown";
}

constexpr std::pair<ElementKind, std::string_view> kKindNames[] = {
    {ElementKind::character, "character"}, {ElementKind::event, "event"}, {ElementKind::faction, "faction"},
    {ElementKind::place, "place"},         {ElementKind::prop, "prop"},   {ElementKind::note, "note"},
};
constexpr std::pair<CreatedBy, std::string_view> kCreatedByNames[] = {
    {CreatedBy::user, "user"},
    {CreatedBy::generated, "generated"},
};
constexpr std::pair<Provenance, std::string_view> kProvenanceNames[] = {
    {Provenance::auto_recognized, "auto_recognized"},
    {Provenance::user_corrected, "user_corrected"},
    {Provenance::steered, "steered"},
};
constexpr std::pair<LinkKind, std::string_view> kLinkNames[] = {
    {LinkKind::anchored, "anchored"},
    {LinkKind::crossed, "crossed"},
};
constexpr std::pair<LogKind, std::string_view> kLogNames[] = {
    {LogKind::create, "create"},             {LogKind::generate, "generate"},         {LogKind::recognize, "recognize"}, {LogKind::reposition, "reposition"},
    {LogKind::rewrite, "rewrite"},           {LogKind::concept_edit, "concept_edit"},
    {LogKind::exclude, "exclude"},           {LogKind::remove, "delete"},
};

std::string trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

bool is_auto(Provenance p) { return p == Provenance::auto_recognized || p == Provenance::steered; }

std::vector<double> insert_zero(const WeightVector& w, std::size_t index) {
    std::vector<double> values = w.values();
    values.insert(values.begin() + static_cast<std::ptrdiff_t>(index), 0.0);
    return values;
}

WeightVector drop_entry(const WeightVector& w, std::size_t index) {
    std::vector<double> values = w.values();
    values.erase(values.begin() + static_cast<std::ptrdiff_t>(index));
    double sum = 0.0;
    for (double v : values) sum += v;
    if (!(sum > 0.0)) return WeightVector::uniform(values.size());
    return WeightVector::normalized(std::move(values));
}

} // namespace

std::string_view to_string(ElementKind kind) { return enum_name(kind, kKindNames); }
std::string_view to_string(CreatedBy who) { return enum_name(who, kCreatedByNames); }
std::string_view to_string(Provenance p) { return enum_name(p, kProvenanceNames); }
std::string_view to_string(LinkKind kind) { return enum_name(kind, kLinkNames); }
std::string_view to_string(LogKind kind) { return enum_name(kind, kLogNames); }

ElementKind parse_element_kind(std::string_view s) { return parse_enum(s, kKindNames, "element kind"); }
CreatedBy parse_created_by(std::string_view s) { return parse_enum(s, kCreatedByNames, "creator"); }
Provenance parse_provenance(std::string_view s) { return parse_enum(s, kProvenanceNames, "provenance"); }
LinkKind parse_link_kind(std::string_view s) { return parse_enum(s, kLinkNames, "link kind"); }
LogKind parse_log_kind(std::string_view s) { return parse_enum(s, kLogNames, "log kind"); }

MagnetLayout View::layout() const {
    std::vector<Point2D> positions;
    positions.reserve(magnets.size());
    for (const auto& m : magnets) positions.push_back(m.position);
    return MagnetLayout(std::move(positions));
}

std::optional<WeightVector> View::marker_weights() const {
    if (!steering_marker) return std::nullopt;
    return position_to_weights(layout(), *steering_marker);
}

const Placement* View::find_placement(const ElementId& id) const {
    auto it = placements.find(id);
    return it == placements.end() ? nullptr : &it->second;
}

std::size_t View::magnet_index(const MagnetId& mid) const {
    for (std::size_t i = 0; i < magnets.size(); ++i) {
        if (magnets[i].id == mid) return i;
    }
    throw Error(ErrorCode::NotFound, "magnet '" + mid + "' not found in view '" + id + "'");
}

World::World(std::string id, std::string name, Clock clock)
    : id_(std::move(id)), name_(std::move(name)), clock_(std::move(clock)) {}

const Element& World::element(const ElementId& id) const {
    for (const auto& e : elements_) {
        if (e.id == id) return e;
    }
    throw Error(ErrorCode::NotFound, "element '" + id + "' not found");
}

const View& World::view(const ViewId& id) const {
    for (const auto& v : views_) {
        if (v.id == id) return v;
    }
    throw Error(ErrorCode::NotFound, "view '" + id + "' not found");
}

Element& World::mutable_element(const ElementId& id) { return const_cast<Element&>(element(id)); }
View& World::mutable_view(const ViewId& id) { return const_cast<View&>(view(id)); }

bool World::has_element(const ElementId& id) const {
    return std::any_of(elements_.begin(), elements_.end(), [&](const Element& e) { return e.id == id; });
}

bool World::has_view(const ViewId& id) const {
    return std::any_of(views_.begin(), views_.end(), [&](const View& v) { return v.id == id; });
}

std::string World::next_id(std::string_view prefix) { return std::string(prefix) + "-" + std::to_string(next_id_++); }

void World::flag_stale(View& view) {
    for (auto& [_, placement] : view.placements) placement.stale = true;
}

void World::recompute_positions(View& view) {
    if (view.magnets.size() < 2) return;
    const MagnetLayout layout = view.layout();
    for (auto& [_, placement] : view.placements) placement.position = weights_to_position(layout, placement.weights);
}

const Element& World::create_element(ElementKind kind, std::string text, CreatedBy created_by) {
    text = trim(text);
    if (text.empty()) throw Error(ErrorCode::InvalidElement, "element text is empty");
    Element e;
    e.id = next_id("el");
    e.kind = kind;
    e.text = std::move(text);
    e.created_by = created_by;
    e.created_at = clock_();
    elements_.push_back(std::move(e));
    if (created_by == CreatedBy::user) {
        append_log({.timestamp = elements_.back().created_at, .kind = LogKind::create, .element_id = elements_.back().id});
    }
    return elements_.back();
}

void World::edit_element_text(const ElementId& id, std::string text) {
    text = trim(text);
    if (text.empty()) throw Error(ErrorCode::InvalidElement, "element text is empty");
    Element& e = mutable_element(id);
    if (e.text == text) return;
    e.text = std::move(text);
    for (auto& v : views_) {
        auto it = v.placements.find(id);
        if (it != v.placements.end()) it->second.stale = true;
    }
}

void World::delete_element(const ElementId& id) {
    const Element& e = element(id);
    const ElementId eid = e.id;
    for (auto& v : views_) {
        v.placements.erase(eid);
        for (auto& m : v.magnets) {
            if (m.source == eid) m.source.reset();
        }
    }
    selection_.erase(eid);
    std::erase_if(elements_, [&](const Element& x) { return x.id == eid; });
    append_log({.timestamp = clock_(), .kind = LogKind::remove, .element_id = eid});
}

void World::set_selection(std::set<ElementId> ids) {
    for (const auto& id : ids) element(id);
    selection_ = std::move(ids);
}

std::vector<const Element*> World::context_elements() const {
    std::vector<const Element*> out;
    for (const auto& e : elements_) {
        if (selection_.empty() || selection_.contains(e.id)) out.push_back(&e);
    }
    return out;
}

const View& World::create_view(std::string name, std::vector<MagnetSpec> magnets) {
    View v;
    v.id = next_id("view");
    v.name = trim(name).empty() ? "View" : trim(name);
    for (auto& spec : magnets) {
        if (spec.source) {
            const Element& src = element(*spec.source);
            if (trim(spec.text).empty()) spec.text = src.text;
        }
        spec.text = trim(spec.text);
        if (spec.text.empty()) throw Error(ErrorCode::InvalidConcept, "concept text is empty");
        v.magnets.push_back({next_id("mag"), std::move(spec.text), spec.position, spec.source, {}});
    }
    if (v.magnets.size() >= 2) v.layout(); // throws DegenerateLayout
    if (v.magnets.size() == 1 && !std::isfinite(v.magnets[0].position.x + v.magnets[0].position.y)) {
        throw Error(ErrorCode::DegenerateLayout, "magnet position is not finite");
    }
    views_.push_back(std::move(v));
    return views_.back();
}

void World::rename_view(const ViewId& id, std::string name) {
    name = trim(name);
    if (name.empty()) throw Error(ErrorCode::BadRequest, "view name is empty");
    mutable_view(id).name = std::move(name);
}

void World::delete_view(const ViewId& id) {
    view(id);
    unlink_views(id);
    std::erase_if(views_, [&](const View& v) { return v.id == id; });
}

const Magnet& World::add_magnet(const ViewId& vid, MagnetSpec spec) {
    View& v = mutable_view(vid);
    if (v.link && v.link->kind == LinkKind::crossed) {
        throw Error(ErrorCode::IllegalCross, "a crossed view must keep exactly two magnets");
    }
    if (spec.source) {
        const Element& src = element(*spec.source);
        if (trim(spec.text).empty()) spec.text = src.text;
    }
    spec.text = trim(spec.text);
    if (spec.text.empty()) throw Error(ErrorCode::InvalidConcept, "concept text is empty");
    if (!std::isfinite(spec.position.x) || !std::isfinite(spec.position.y)) {
        throw Error(ErrorCode::DegenerateLayout, "magnet position is not finite");
    }

    std::vector<Point2D> positions;
    for (const auto& m : v.magnets) positions.push_back(m.position);

    // Insert where the polygon stays convex.
    std::optional<std::size_t> slot;
    if (positions.size() < 2) {
        positions.push_back(spec.position);
        if (positions.size() == 2 && !MagnetLayout::is_valid(positions)) {
            throw Error(ErrorCode::DegenerateLayout, "new magnet coincides with an existing one");
        }
        slot = positions.size() - 1;
    } else {
        for (std::size_t k = 0; k <= positions.size() && !slot; ++k) {
            auto trial = positions;
            trial.insert(trial.begin() + static_cast<std::ptrdiff_t>(k), spec.position);
            if (MagnetLayout::is_valid(trial)) slot = k;
        }
        if (!slot) throw Error(ErrorCode::DegenerateLayout, "no insertion point keeps the magnets convex");
    }

    const auto index = static_cast<std::ptrdiff_t>(*slot);
    v.magnets.insert(v.magnets.begin() + index, Magnet{next_id("mag"), std::move(spec.text), spec.position, spec.source, {}});
    for (auto& [_, p] : v.placements) {
        p.weights = WeightVector(insert_zero(p.weights, *slot));
        if (p.last_auto_weights) p.last_auto_weights = WeightVector(insert_zero(*p.last_auto_weights, *slot));
    }
    for (auto& ex : v.examples) ex.weights = WeightVector(insert_zero(ex.weights, *slot));
    flag_stale(v);
    recompute_positions(v);
    append_log({.timestamp = clock_(), .kind = LogKind::concept_edit, .view_id = v.id,
                .example_count_at_time = static_cast<int>(v.examples.size())});
    return v.magnets[*slot];
}

void World::remove_magnet(const ViewId& vid, const MagnetId& mid) {
    View& v = mutable_view(vid);
    const std::size_t index = v.magnet_index(mid);
    if (v.link && v.link->kind == LinkKind::crossed) {
        throw Error(ErrorCode::IllegalCross, "a crossed view must keep exactly two magnets");
    }
    if (v.magnets.size() <= 2 && (!v.placements.empty() || !v.examples.empty())) {
        throw Error(ErrorCode::InvalidConcept, "a view holding elements needs at least two magnets");
    }
    v.magnets.erase(v.magnets.begin() + static_cast<std::ptrdiff_t>(index));
    for (auto& [_, p] : v.placements) {
        p.weights = drop_entry(p.weights, index);
        if (p.last_auto_weights) p.last_auto_weights = drop_entry(*p.last_auto_weights, index);
    }
    for (auto& ex : v.examples) ex.weights = drop_entry(ex.weights, index);
    flag_stale(v);
    recompute_positions(v);
    append_log({.timestamp = clock_(), .kind = LogKind::concept_edit, .view_id = v.id,
                .example_count_at_time = static_cast<int>(v.examples.size())});
}

void World::edit_concept(const ViewId& vid, const MagnetId& mid, std::string text) {
    text = trim(text);
    if (text.empty()) throw Error(ErrorCode::InvalidConcept, "concept text is empty");
    View& v = mutable_view(vid);
    Magnet& m = v.magnets[v.magnet_index(mid)];
    if (m.definition_text == text) return;
    m.definition_text = std::move(text);
    flag_stale(v);
    if (v.link && v.link->kind == LinkKind::crossed) flag_stale(mutable_view(v.link->other));
    append_log({.timestamp = clock_(), .kind = LogKind::concept_edit, .view_id = v.id,
                .example_count_at_time = static_cast<int>(v.examples.size())});
}

MagnetMove World::move_magnet(const ViewId& vid, const MagnetId& mid, Point2D proposed) {
    View& v = mutable_view(vid);
    const std::size_t index = v.magnet_index(mid);
    Point2D accepted = proposed;
    if (v.magnets.size() >= 2) {
        accepted = validate_or_project_convex(v.layout(), index, proposed);
    } else if (!std::isfinite(proposed.x) || !std::isfinite(proposed.y)) {
        accepted = v.magnets[index].position;
    }
    v.magnets[index].position = accepted;
    recompute_positions(v);
    return {proposed, accepted, !(accepted == proposed)};
}

const Placement& World::add_element_to_view(const ViewId& vid, const ElementId& eid, const WeightVector& weights,
                                            Provenance provenance) {
    element(eid);
    View& v = mutable_view(vid);
    const MagnetLayout layout = v.layout();
    Placement p;
    p.element_id = eid;
    p.position = weights_to_position(layout, weights); // throws on dimension mismatch
    p.weights = weights;
    p.provenance = provenance;
    if (is_auto(provenance)) p.last_auto_weights = weights;
    v.placements[eid] = std::move(p);
    return v.placements[eid];
}

const Placement& World::reposition_element(const ViewId& vid, const ElementId& eid, Point2D new_position) {
    View& v = mutable_view(vid);
    auto it = v.placements.find(eid);
    if (it == v.placements.end()) {
        throw Error(ErrorCode::NotFound, "element '" + eid + "' is not placed in view '" + vid + "'");
    }
    Placement& p = it->second;
    const MagnetLayout layout = v.layout();
    WeightVector updated = position_to_weights(layout, new_position);
    if (approx_equal(updated, p.weights, 1e-9)) return p;

    const WeightVector previous = p.weights;
    const int examples_before = static_cast<int>(v.examples.size());
    p.weights = updated;
    p.position = weights_to_position(layout, updated);
    p.provenance = Provenance::user_corrected;
    p.stale = false;
    const Element& e = element(eid);
    v.examples.push_back({e.kind, e.text, updated, {}});
    append_log({.timestamp = clock_(), .kind = LogKind::reposition, .view_id = vid, .element_id = eid,
                .auto_weights = previous, .user_weights = updated, .example_count_at_time = examples_before});
    return p;
}

void World::exclude_element(const ViewId& vid, const ElementId& eid) {
    View& v = mutable_view(vid);
    if (v.placements.erase(eid) == 0) {
        throw Error(ErrorCode::NotFound, "element '" + eid + "' is not placed in view '" + vid + "'");
    }
    append_log({.timestamp = clock_(), .kind = LogKind::exclude, .view_id = vid, .element_id = eid});
}

void World::delete_example(const ViewId& vid, std::size_t index) {
    View& v = mutable_view(vid);
    if (index >= v.examples.size()) throw Error(ErrorCode::NotFound, "example index out of range");
    v.examples.erase(v.examples.begin() + static_cast<std::ptrdiff_t>(index));
}

std::vector<const Example*> World::prompt_examples(const ViewId& vid) const {
    const View& v = view(vid);
    std::vector<const Example*> out;
    const std::size_t start = v.examples.size() > kPromptExampleCap ? v.examples.size() - kPromptExampleCap : 0;
    for (std::size_t i = start; i < v.examples.size(); ++i) out.push_back(&v.examples[i]);
    return out;
}

void World::link_views(const ViewId& a, const ViewId& b, LinkKind kind) {
    if (a == b) throw Error(ErrorCode::BadRequest, "cannot link a view to itself");
    const View& va = view(a);
    const View& vb = view(b);
    if (kind == LinkKind::crossed && (va.magnets.size() != 2 || vb.magnets.size() != 2)) {
        throw Error(ErrorCode::IllegalCross, "crossing needs two views with exactly two magnets each");
    }
    unlink_views(a);
    unlink_views(b);
    mutable_view(a).link = ViewLink{kind, b};
    mutable_view(b).link = ViewLink{kind, a};
}

void World::unlink_views(const ViewId& a) {
    View& va = mutable_view(a);
    if (!va.link) return;
    const ViewId other = va.link->other;
    va.link.reset();
    if (has_view(other)) mutable_view(other).link.reset();
}

CrossedPlane World::crossed_plane(const ViewId& vid) const {
    const View& va = view(vid);
    if (!va.link || va.link->kind != LinkKind::crossed) {
        throw Error(ErrorCode::IllegalCross, "view '" + vid + "' is not crossed with another view");
    }
    const View& vb = view(va.link->other);
    CrossedPlane plane{va.id, vb.id, CrossedAxes::unit_plane(), {}};
    for (const auto& e : elements_) {
        const Placement* pa = va.find_placement(e.id);
        const Placement* pb = vb.find_placement(e.id);
        if (!pa || !pb) continue;
        plane.points.push_back(
            {e.id, crossed_weights_to_position(plane.axes, pa->weights, pb->weights), pa->weights, pb->weights});
    }
    return plane;
}

std::vector<AnchoredPair> World::anchored_pairs(const ViewId& vid) const {
    const View& va = view(vid);
    if (!va.link || va.link->kind != LinkKind::anchored) {
        throw Error(ErrorCode::NotFound, "view '" + vid + "' is not anchored to another view");
    }
    const View& vb = view(va.link->other);
    std::vector<AnchoredPair> pairs;
    for (const auto& e : elements_) {
        const Placement* pa = va.find_placement(e.id);
        const Placement* pb = vb.find_placement(e.id);
        if (pa && pb) pairs.push_back({e.id, pa->position, pb->position});
    }
    return pairs;
}

void World::reposition_on_crossed_plane(const ViewId& vid, const ElementId& eid, Point2D position) {
    const CrossedPlane plane = crossed_plane(vid);
    const View& va = view(plane.view_a);
    const View& vb = view(plane.view_b);
    if (!va.find_placement(eid) || !vb.find_placement(eid)) {
        throw Error(ErrorCode::NotFound, "element '" + eid + "' is not on the crossed plane");
    }
    const auto [wa, wb] = crossed_position_to_weights(plane.axes, position);
    const Point2D pa = weights_to_position(va.layout(), wa);
    const Point2D pb = weights_to_position(vb.layout(), wb);
    reposition_element(plane.view_a, eid, pa);
    reposition_element(plane.view_b, eid, pb);
}

void World::set_steering_marker(const ViewId& vid, std::optional<Point2D> position) {
    View& v = mutable_view(vid);
    if (!position) {
        v.steering_marker.reset();
        return;
    }
    v.steering_marker = v.layout().clamp_to_hull(*position);
}

void World::append_log(InteractionLogEntry entry) { log_.push_back(std::move(entry)); }

World World::from_raw(Raw raw, Clock clock) {
    World w(std::move(raw.id), std::move(raw.name), std::move(clock));
    w.elements_ = std::move(raw.elements);
    w.views_ = std::move(raw.views);
    w.selection_ = std::move(raw.selection);
    w.log_ = std::move(raw.log);
    w.next_id_ = raw.next_id;
    w.extras_ = std::move(raw.extras);
    w.validate();
    return w;
}

World::Raw World::to_raw() const {
    return {id_, name_, elements_, views_, selection_, log_, next_id_, extras_};
}

void World::validate() const {
    auto fail = [](const std::string& path, const std::string& msg) {
        throw Error(ErrorCode::CorruptWorldFile, path + ": " + msg, path);
    };
    std::set<std::string> element_ids;
    for (std::size_t i = 0; i < elements_.size(); ++i) {
        const auto& e = elements_[i];
        const std::string path = "/world/elements/" + std::to_string(i);
        if (e.id.empty() || !element_ids.insert(e.id).second) fail(path + "/id", "missing or duplicate id");
        if (trim(e.text).empty()) fail(path + "/text", "empty text");
    }
    for (const auto& id : selection_) {
        if (!element_ids.contains(id)) fail("/world/selection", "unknown element '" + id + "'");
    }
    std::set<std::string> view_ids;
    for (const auto& v : views_) view_ids.insert(v.id);
    if (view_ids.size() != views_.size()) fail("/world/views", "duplicate view id");

    for (std::size_t vi = 0; vi < views_.size(); ++vi) {
        const View& v = views_[vi];
        const std::string path = "/world/views/" + std::to_string(vi);
        std::set<std::string> magnet_ids;
        for (std::size_t mi = 0; mi < v.magnets.size(); ++mi) {
            const auto& m = v.magnets[mi];
            const std::string mpath = path + "/magnets/" + std::to_string(mi);
            if (m.id.empty() || !magnet_ids.insert(m.id).second) fail(mpath + "/id", "missing or duplicate id");
            if (trim(m.definition_text).empty()) fail(mpath + "/definition_text", "empty concept");
            if (m.source && !element_ids.contains(*m.source)) fail(mpath + "/source", "unknown element");
        }
        std::optional<MagnetLayout> layout;
        if (v.magnets.size() >= 2) {
            try {
                layout = v.layout();
            } catch (const Error& err) {
                fail(path + "/magnets", err.what());
            }
        }
        const std::size_t n = v.magnets.size();
        std::size_t pi = 0; // placements are stored as an array in element-id order
        for (const auto& [eid, p] : v.placements) {
            const std::string ppath = path + "/placements/" + std::to_string(pi++);
            if (!element_ids.contains(eid) || p.element_id != eid) fail(ppath, "unknown element");
            if (!layout) fail(ppath, "placement in a view with fewer than two magnets");
            if (p.weights.size() != n) fail(ppath + "/weights", "not aligned with magnets");
            if (p.last_auto_weights && p.last_auto_weights->size() != n) {
                fail(ppath + "/last_auto_weights", "not aligned with magnets");
            }
            // Files keep 12 significant digits, so the tolerance scales with the coordinates.
            const double tol = 1e-9 * (1.0 + std::abs(p.position.x) + std::abs(p.position.y));
            if (distance(weights_to_position(*layout, p.weights), p.position) > tol) {
                fail(ppath + "/position", "does not match weights");
            }
        }
        for (std::size_t xi = 0; xi < v.examples.size(); ++xi) {
            const std::string xpath = path + "/examples/" + std::to_string(xi);
            if (v.examples[xi].weights.size() != n) fail(xpath + "/weights", "not aligned with magnets");
            if (trim(v.examples[xi].text).empty()) fail(xpath + "/text", "empty text");
        }
        if (v.steering_marker && !layout) fail(path + "/steering_marker", "marker in a view without a layout");
        if (v.link) {
            if (!view_ids.contains(v.link->other) || v.link->other == v.id) fail(path + "/link", "unknown view");
            const View& other = view(v.link->other);
            if (!other.link || other.link->other != v.id || other.link->kind != v.link->kind) {
                fail(path + "/link", "link is not symmetric");
            }
            if (v.link->kind == LinkKind::crossed && (n != 2 || other.magnets.size() != 2)) {
                fail(path + "/link", "crossed views need exactly two magnets");
            }
        }
    }
}

} // namespace dustmagnet
