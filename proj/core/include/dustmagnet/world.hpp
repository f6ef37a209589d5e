#pragma once

#include "dustmagnet/geometry.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace dustmagnet {

using ElementId = std::string;
using ViewId = std::string;
using MagnetId = std::string;

// Milliseconds since the Unix epoch.
using Timestamp = std::int64_t;
using Clock = std::function<Timestamp()>;

Clock system_clock();

enum class ElementKind { character, event, faction, place, prop, note };
enum class CreatedBy { user, generated };
enum class Provenance { auto_recognized, user_corrected, steered };
enum class LinkKind { anchored, crossed };
enum class LogKind { create, generate, recognize, reposition, rewrite, concept_edit, exclude, remove };

std::string_view to_string(ElementKind kind);
std::string_view to_string(CreatedBy who);
std::string_view to_string(Provenance p);
std::string_view to_string(LinkKind kind);
std::string_view to_string(LogKind kind);

// Throw BadRequest on unknown names.
ElementKind parse_element_kind(std::string_view s);
CreatedBy parse_created_by(std::string_view s);
Provenance parse_provenance(std::string_view s);
LinkKind parse_link_kind(std::string_view s);
LogKind parse_log_kind(std::string_view s);

inline constexpr ElementKind kAllElementKinds[] = {ElementKind::character, ElementKind::event, ElementKind::faction,
                                                   ElementKind::place,     ElementKind::prop,  ElementKind::note};

struct Element {
    ElementId id;
    ElementKind kind = ElementKind::note;
    std::string text;
    CreatedBy created_by = CreatedBy::user;
    Timestamp created_at = 0;
    nlohmann::json extras; // unknown fields carried through load/save
};

struct Magnet {
    MagnetId id;
    std::string definition_text;
    Point2D position;
    std::optional<ElementId> source;
    nlohmann::json extras;
};

struct Placement {
    ElementId element_id;
    WeightVector weights;
    Point2D position;
    Provenance provenance = Provenance::auto_recognized;
    std::optional<WeightVector> last_auto_weights;
    bool stale = false; // concept or text changed since the weights were set
    nlohmann::json extras;
};

// A correction kept as an in-context example. Holds a snapshot of the
// element, not a reference, so later edits or deletes do not rewrite it.
struct Example {
    ElementKind kind = ElementKind::note;
    std::string text;
    WeightVector weights;
    nlohmann::json extras;
};

struct ViewLink {
    LinkKind kind = LinkKind::anchored;
    ViewId other;

    friend bool operator==(const ViewLink&, const ViewLink&) = default;
};

struct View {
    ViewId id;
    std::string name;
    std::vector<Magnet> magnets;
    // Keyed by element id; ordering for prompts and re-recognition follows
    // World::elements, not this map.
    std::map<ElementId, Placement> placements;
    std::vector<Example> examples;
    std::optional<Point2D> steering_marker;
    std::optional<ViewLink> link;
    nlohmann::json extras;

    MagnetLayout layout() const;
    std::optional<WeightVector> marker_weights() const;
    const Placement* find_placement(const ElementId& id) const;
    std::size_t magnet_index(const MagnetId& id) const; // throws NotFound
};

struct InteractionLogEntry {
    Timestamp timestamp = 0;
    LogKind kind = LogKind::generate;
    ViewId view_id;
    ElementId element_id;
    std::optional<WeightVector> auto_weights;
    std::optional<WeightVector> user_weights;
    std::optional<WeightVector> steering_weights;
    int example_count_at_time = 0;
};

struct MagnetSpec {
    std::string text;
    Point2D position;
    std::optional<ElementId> source;
};

struct CrossedPoint {
    ElementId element_id;
    Point2D position;
    WeightVector weights_a;
    WeightVector weights_b;
};

struct CrossedPlane {
    ViewId view_a;
    ViewId view_b;
    CrossedAxes axes;
    std::vector<CrossedPoint> points;
};

struct AnchoredPair {
    ElementId element_id;
    Point2D position_a;
    Point2D position_b;
};

// Outcome of a magnet drag: where the magnet ended up.
struct MagnetMove {
    Point2D requested;
    Point2D position;
    bool projected = false;
};

// The number of most recent examples per view that prompts include.
inline constexpr std::size_t kPromptExampleCap = 10;

class World {
public:
    explicit World(std::string id = "world", std::string name = "Untitled world", Clock clock = system_clock());

    const std::string& id() const { return id_; }
    const std::string& name() const { return name_; }
    void rename(std::string name) { name_ = std::move(name); }

    const std::vector<Element>& elements() const { return elements_; }
    const std::vector<View>& views() const { return views_; }
    const std::set<ElementId>& selection() const { return selection_; }
    const std::vector<InteractionLogEntry>& log() const { return log_; }

    const Element& element(const ElementId& id) const; // throws NotFound
    const View& view(const ViewId& id) const;           // throws NotFound
    bool has_element(const ElementId& id) const;
    bool has_view(const ViewId& id) const;

    Timestamp now() const { return clock_(); }
    void set_clock(Clock clock) { clock_ = std::move(clock); }

    // Elements

    const Element& create_element(ElementKind kind, std::string text, CreatedBy created_by);
    void edit_element_text(const ElementId& id, std::string text);
    void delete_element(const ElementId& id);
    void set_selection(std::set<ElementId> ids);

    // Elements to use as prompt context: the selection, or everything when
    // nothing is selected.
    std::vector<const Element*> context_elements() const;

    // Views and magnets

    const View& create_view(std::string name, std::vector<MagnetSpec> magnets);
    void rename_view(const ViewId& id, std::string name);
    void delete_view(const ViewId& id);
    const Magnet& add_magnet(const ViewId& view, MagnetSpec spec);
    void remove_magnet(const ViewId& view, const MagnetId& magnet);
    void edit_concept(const ViewId& view, const MagnetId& magnet, std::string text);
    MagnetMove move_magnet(const ViewId& view, const MagnetId& magnet, Point2D proposed);

    // Placements

    const Placement& add_element_to_view(const ViewId& view, const ElementId& element, const WeightVector& weights,
                                         Provenance provenance = Provenance::auto_recognized);
    const Placement& reposition_element(const ViewId& view, const ElementId& element, Point2D new_position);
    void exclude_element(const ViewId& view, const ElementId& element);
    void delete_example(const ViewId& view, std::size_t index);

    // The last kPromptExampleCap examples, oldest first.
    std::vector<const Example*> prompt_examples(const ViewId& view) const;

    // Links

    void link_views(const ViewId& a, const ViewId& b, LinkKind kind);
    void unlink_views(const ViewId& a);
    CrossedPlane crossed_plane(const ViewId& view) const;
    std::vector<AnchoredPair> anchored_pairs(const ViewId& view) const;
    // Repositions an element on a crossed plane, correcting both axis views.
    void reposition_on_crossed_plane(const ViewId& view, const ElementId& element, Point2D position);

    // Steering

    void set_steering_marker(const ViewId& view, std::optional<Point2D> position);

    // Log

    void append_log(InteractionLogEntry entry);

    // Persistence hooks: rebuild a world verbatim, then check invariants.
    struct Raw {
        std::string id;
        std::string name;
        std::vector<Element> elements;
        std::vector<View> views;
        std::set<ElementId> selection;
        std::vector<InteractionLogEntry> log;
        std::uint64_t next_id = 1;
        nlohmann::json extras;
    };
    static World from_raw(Raw raw, Clock clock = system_clock());
    Raw to_raw() const;

    // Throws CorruptWorldFile naming the first broken invariant.
    void validate() const;

    const nlohmann::json& extras() const { return extras_; }
    std::uint64_t id_counter() const { return next_id_; }

private:
    Element& mutable_element(const ElementId& id);
    View& mutable_view(const ViewId& id);
    std::string next_id(std::string_view prefix);
    void flag_stale(View& view);
    void recompute_positions(View& view);

    std::string id_;
    std::string name_;
    Clock clock_;
    std::vector<Element> elements_;
    std::vector<View> views_;
    std::set<ElementId> selection_;
    std::vector<InteractionLogEntry> log_;
    std::uint64_t next_id_ = 1;
    nlohmann::json extras_;
};

// Single-writer gate around a World. Mutations run one at a time; readers
// take copies. Commit hooks run after each mutation, still inside the writer
// slot, so autosave and log persistence see mutations in order.
class WorldStore {
public:
    using CommitHook = std::function<void(const World&)>;

    explicit WorldStore(World world) : world_(std::move(world)) {}

    World snapshot() const {
        std::lock_guard lock(mutex_);
        return world_;
    }

    template <typename F>
    auto read(F&& f) const {
        std::lock_guard lock(mutex_);
        return f(static_cast<const World&>(world_));
    }

    template <typename F>
    auto mutate(F&& f) {
        std::lock_guard lock(mutex_);
        World draft = world_;
        if constexpr (std::is_void_v<decltype(f(draft))>) {
            f(draft);
            commit(std::move(draft));
        } else {
            auto result = f(draft);
            commit(std::move(draft));
            return result;
        }
    }

    void replace(World world) {
        std::lock_guard lock(mutex_);
        commit(std::move(world));
    }

    void on_commit(CommitHook hook) {
        std::lock_guard lock(mutex_);
        hooks_.push_back(std::move(hook));
    }

private:
    void commit(World&& draft) {
        world_ = std::move(draft);
        for (auto& hook : hooks_) hook(world_);
    }

    mutable std::mutex mutex_;
    World world_;
    std::vector<CommitHook> hooks_;
};

} // namespace dustmagnet
