#include "dustmagnet/persistence.hpp"

#include "dustmagnet/error.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace dustmagnet {

namespace fs = std::filesystem;
using nlohmann::json;

double round_12(double v) {
    if (!std::isfinite(v)) return v;
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.12g", v);
    return std::strtod(buf, nullptr);
}

namespace {

json rounded(const json& j) {
    switch (j.type()) {
    case json::value_t::number_float:
        return round_12(j.get<double>());
    case json::value_t::array: {
        json out = json::array();
        for (const auto& x : j) out.push_back(rounded(x));
        return out;
    }
    case json::value_t::object: {
        json out = json::object();
        for (const auto& [k, v] : j.items()) out[k] = rounded(v);
        return out;
    }
    default:
        return j;
    }
}

[[noreturn]] void corrupt(const std::string& path, const std::string& msg) {
    throw Error(ErrorCode::CorruptWorldFile, (path.empty() ? std::string("/") : path) + ": " + msg,
                path.empty() ? "/" : path);
}

std::string child(const std::string& path, std::string_view key) {
    std::string escaped;
    for (char c : key) {
        if (c == '~') escaped += "~0";
        else if (c == '/') escaped += "~1";
        else escaped += c;
    }
    return path + "/" + escaped;
}

std::string child(const std::string& path, std::size_t index) { return path + "/" + std::to_string(index); }

// Field access with path-carrying errors.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) corrupt(path_, "expected an object");
    }

    const std::string& path() const { return path_; }

    const json& at(std::string_view key) const {
        used_.insert(std::string(key));
        auto it = j_.find(key);
        if (it == j_.end()) corrupt(child(path_, key), "missing field");
        return *it;
    }
    const json* find(std::string_view key) const {
        used_.insert(std::string(key));
        auto it = j_.find(key);
        return it == j_.end() || it->is_null() ? nullptr : &*it;
    }

    std::string str(std::string_view key) const {
        const json& v = at(key);
        if (!v.is_string()) corrupt(child(path_, key), "expected a string");
        return v.get<std::string>();
    }
    std::int64_t integer(std::string_view key) const {
        const json& v = at(key);
        if (!v.is_number_integer()) corrupt(child(path_, key), "expected an integer");
        return v.get<std::int64_t>();
    }
    bool boolean(std::string_view key) const {
        const json& v = at(key);
        if (!v.is_boolean()) corrupt(child(path_, key), "expected a boolean");
        return v.get<bool>();
    }
    const json& array(std::string_view key) const {
        const json& v = at(key);
        if (!v.is_array()) corrupt(child(path_, key), "expected an array");
        return v;
    }

    json extras() const {
        json out = json::object();
        for (const auto& [k, v] : j_.items()) {
            if (!used_.contains(k)) out[k] = v;
        }
        return out;
    }

private:
    const json& j_;
    std::string path_;
    mutable std::set<std::string> used_;
};

template <typename F>
auto guarded(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::CorruptWorldFile || e.code() == ErrorCode::UnsupportedVersion) throw;
        corrupt(path, e.what());
    }
}

WeightVector weights_from(const json& j, const std::string& path) {
    if (!j.is_array()) corrupt(path, "expected an array of numbers");
    std::vector<double> values;
    for (std::size_t i = 0; i < j.size(); ++i) {
        if (!j[i].is_number()) corrupt(child(path, i), "expected a number");
        values.push_back(j[i].get<double>());
    }
    return guarded(path, [&] { return WeightVector(std::move(values)); });
}

Point2D point_from(const json& j, const std::string& path) {
    Obj o(j, path);
    auto num = [&](std::string_view key) {
        const json& v = o.at(key);
        if (!v.is_number() || !std::isfinite(v.get<double>())) corrupt(child(path, key), "expected a finite number");
        return v.get<double>();
    };
    return {num("x"), num("y")};
}

json with_extras(const json& extras, json known) {
    json out = extras.is_object() ? extras : json::object();
    for (auto& [k, v] : known.items()) out[k] = std::move(v);
    return out;
}

template <typename F>
auto parse_enum(const std::string& path, F&& f) {
    try {
        return f();
    } catch (const Error& e) {
        corrupt(path, e.what());
    }
}

Element element_from(const json& j, const std::string& path) {
    Obj o(j, path);
    Element e;
    e.id = o.str("id");
    const std::string kind = o.str("kind");
    e.kind = parse_enum(child(path, "kind"), [&] { return parse_element_kind(kind); });
    e.text = o.str("text");
    const std::string by = o.str("created_by");
    e.created_by = parse_enum(child(path, "created_by"), [&] { return parse_created_by(by); });
    e.created_at = o.integer("created_at");
    e.extras = o.extras();
    return e;
}

Magnet magnet_from(const json& j, const std::string& path) {
    Obj o(j, path);
    Magnet m;
    m.id = o.str("id");
    m.definition_text = o.str("definition_text");
    m.position = point_from(o.at("position"), child(path, "position"));
    if (const json* s = o.find("source")) {
        if (!s->is_string()) corrupt(child(path, "source"), "expected a string");
        m.source = s->get<std::string>();
    }
    m.extras = o.extras();
    return m;
}

Placement placement_from(const json& j, const std::string& path) {
    Obj o(j, path);
    Placement p;
    p.element_id = o.str("element_id");
    p.weights = weights_from(o.at("weights"), child(path, "weights"));
    p.position = point_from(o.at("position"), child(path, "position"));
    const std::string prov = o.str("provenance");
    p.provenance = parse_enum(child(path, "provenance"), [&] { return parse_provenance(prov); });
    if (const json* w = o.find("last_auto_weights")) p.last_auto_weights = weights_from(*w, child(path, "last_auto_weights"));
    p.stale = o.boolean("stale");
    p.extras = o.extras();
    return p;
}

Example example_from(const json& j, const std::string& path) {
    Obj o(j, path);
    Example x;
    const std::string kind = o.str("kind");
    x.kind = parse_enum(child(path, "kind"), [&] { return parse_element_kind(kind); });
    x.text = o.str("text");
    x.weights = weights_from(o.at("weights"), child(path, "weights"));
    x.extras = o.extras();
    return x;
}

View view_from(const json& j, const std::string& path) {
    Obj o(j, path);
    View v;
    v.id = o.str("id");
    v.name = o.str("name");
    const json& magnets = o.array("magnets");
    for (std::size_t i = 0; i < magnets.size(); ++i) {
        v.magnets.push_back(magnet_from(magnets[i], child(child(path, "magnets"), i)));
    }
    const json& placements = o.array("placements");
    for (std::size_t i = 0; i < placements.size(); ++i) {
        const std::string ppath = child(child(path, "placements"), i);
        Placement p = placement_from(placements[i], ppath);
        if (v.placements.contains(p.element_id)) corrupt(child(ppath, "element_id"), "duplicate placement");
        v.placements.emplace(p.element_id, std::move(p));
    }
    const json& examples = o.array("examples");
    for (std::size_t i = 0; i < examples.size(); ++i) {
        v.examples.push_back(example_from(examples[i], child(child(path, "examples"), i)));
    }
    if (const json* m = o.find("steering_marker")) v.steering_marker = point_from(*m, child(path, "steering_marker"));
    if (const json* l = o.find("link")) {
        const std::string lpath = child(path, "link");
        Obj lo(*l, lpath);
        const std::string kind = lo.str("kind");
        v.link = ViewLink{parse_enum(child(lpath, "kind"), [&] { return parse_link_kind(kind); }), lo.str("other")};
    }
    v.extras = o.extras();
    return v;
}

} // namespace

std::string canonical_dump(const json& doc) { return rounded(doc).dump(2) + "\n"; }

json to_json(const WeightVector& w) { return json(w.values()); }

json to_json(const InteractionLogEntry& e) {
    json j = {{"timestamp", e.timestamp},
              {"kind", to_string(e.kind)},
              {"view_id", e.view_id},
              {"element_id", e.element_id},
              {"example_count", e.example_count_at_time}};
    if (e.auto_weights) j["auto_weights"] = to_json(*e.auto_weights);
    if (e.user_weights) j["user_weights"] = to_json(*e.user_weights);
    if (e.steering_weights) j["steering_weights"] = to_json(*e.steering_weights);
    return j;
}

InteractionLogEntry log_entry_from_json(const json& j, const std::string& path) {
    Obj o(j, path);
    InteractionLogEntry e;
    e.timestamp = o.integer("timestamp");
    const std::string kind = o.str("kind");
    e.kind = parse_enum(child(path, "kind"), [&] { return parse_log_kind(kind); });
    e.view_id = o.str("view_id");
    e.element_id = o.str("element_id");
    e.example_count_at_time = static_cast<int>(o.integer("example_count"));
    if (const json* w = o.find("auto_weights")) e.auto_weights = weights_from(*w, child(path, "auto_weights"));
    if (const json* w = o.find("user_weights")) e.user_weights = weights_from(*w, child(path, "user_weights"));
    if (const json* w = o.find("steering_weights")) e.steering_weights = weights_from(*w, child(path, "steering_weights"));
    return e;
}

json to_json(Point2D p) { return {{"x", p.x}, {"y", p.y}}; }

json to_json(const Element& e) {
    return with_extras(e.extras, {{"id", e.id},
                                  {"kind", to_string(e.kind)},
                                  {"text", e.text},
                                  {"created_by", to_string(e.created_by)},
                                  {"created_at", e.created_at}});
}

json to_json(const Magnet& m) {
    json mj = {{"id", m.id}, {"definition_text", m.definition_text}, {"position", to_json(m.position)}};
    if (m.source) mj["source"] = *m.source;
    return with_extras(m.extras, std::move(mj));
}

json to_json(const Placement& p) {
    json pj = {{"element_id", p.element_id},
               {"weights", to_json(p.weights)},
               {"position", to_json(p.position)},
               {"provenance", to_string(p.provenance)},
               {"stale", p.stale}};
    if (p.last_auto_weights) pj["last_auto_weights"] = to_json(*p.last_auto_weights);
    return with_extras(p.extras, std::move(pj));
}

json to_json(const Example& x) {
    return with_extras(x.extras, {{"kind", to_string(x.kind)}, {"text", x.text}, {"weights", to_json(x.weights)}});
}

json to_json(const View& v) {
    json magnets = json::array();
    for (const auto& m : v.magnets) magnets.push_back(to_json(m));
    json placements = json::array();
    for (const auto& [eid, p] : v.placements) placements.push_back(to_json(p));
    json examples = json::array();
    for (const auto& x : v.examples) examples.push_back(to_json(x));
    json vj = {{"id", v.id}, {"name", v.name}, {"magnets", magnets}, {"placements", placements}, {"examples", examples}};
    if (v.steering_marker) vj["steering_marker"] = to_json(*v.steering_marker);
    if (v.link) vj["link"] = {{"kind", to_string(v.link->kind)}, {"other", v.link->other}};
    return with_extras(v.extras, std::move(vj));
}

json world_to_json(const World& world) {
    json elements = json::array();
    for (const auto& e : world.elements()) elements.push_back(to_json(e));
    json views = json::array();
    for (const auto& v : world.views()) views.push_back(to_json(v));
    return with_extras(world.extras(), {{"id", world.id()},
                                        {"name", world.name()},
                                        {"next_id", world.id_counter()},
                                        {"selection", json(world.selection())},
                                        {"elements", elements},
                                        {"views", views}});
}

json world_file_to_json(const WorldFile& file) {
    return with_extras(file.extras, {{"format_version", file.format_version},
                                     {"saved_at", file.saved_at},
                                     {"world", world_to_json(file.world)}});
}

WorldFile world_file_from_json(const json& doc, std::vector<InteractionLogEntry> log, Clock clock) {
    Obj top(doc, "");
    const std::int64_t version = top.integer("format_version");
    if (version > kWorldFormatVersion) {
        throw Error(ErrorCode::UnsupportedVersion,
                    "world file format " + std::to_string(version) + " is newer than supported " +
                        std::to_string(kWorldFormatVersion),
                    "/format_version");
    }
    if (version < 1) corrupt("/format_version", "format_version must be positive");
    const Timestamp saved_at = top.integer("saved_at");

    Obj w(top.at("world"), "/world");
    World::Raw raw;
    raw.id = w.str("id");
    raw.name = w.str("name");
    const std::int64_t next_id = w.integer("next_id");
    if (next_id < 1) corrupt("/world/next_id", "must be positive");
    raw.next_id = static_cast<std::uint64_t>(next_id);
    const json& selection = w.array("selection");
    for (std::size_t i = 0; i < selection.size(); ++i) {
        if (!selection[i].is_string()) corrupt(child("/world/selection", i), "expected a string");
        raw.selection.insert(selection[i].get<std::string>());
    }
    const json& elements = w.array("elements");
    for (std::size_t i = 0; i < elements.size(); ++i) {
        raw.elements.push_back(element_from(elements[i], child("/world/elements", i)));
    }
    const json& views = w.array("views");
    for (std::size_t i = 0; i < views.size(); ++i) raw.views.push_back(view_from(views[i], child("/world/views", i)));
    raw.extras = w.extras();
    raw.log = std::move(log);

    WorldFile file{static_cast<int>(version), saved_at, World::from_raw(std::move(raw), std::move(clock)), top.extras()};
    return file;
}

WorldFile parse_world_file(std::string_view text, std::vector<InteractionLogEntry> log, Clock clock) {
    const json doc = json::parse(text, nullptr, false);
    if (doc.is_discarded()) corrupt("", "not valid JSON (truncated or malformed)");
    return world_file_from_json(doc, std::move(log), std::move(clock));
}

std::string serialize_world(const World& world, Timestamp saved_at, const json& extras) {
    return canonical_dump(world_file_to_json({kWorldFormatVersion, saved_at, world, extras}));
}

namespace {

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace

void save_world(const World& world, const fs::path& path, std::optional<Timestamp> saved_at, const json& extras) {
    const std::string text = serialize_world(world, saved_at ? *saved_at : world.now(), extras);
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorCode::IoError, "cannot write " + tmp.string());
        out << text;
        if (!out.flush()) throw Error(ErrorCode::IoError, "write failed for " + tmp.string());
    }
    fs::rename(tmp, path, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot replace " + path.string() + ": " + ec.message());
}

WorldFile load_world_file(const fs::path& path, std::vector<InteractionLogEntry> log, Clock clock) {
    return parse_world_file(read_file(path), std::move(log), std::move(clock));
}

World load_world(const fs::path& path, std::vector<InteractionLogEntry> log, Clock clock) {
    return load_world_file(path, std::move(log), std::move(clock)).world;
}

LogStore::LogStore(fs::path dir) : dir_(std::move(dir)) {}

fs::path LogStore::path_for(const std::string& world_id) const {
    std::string safe;
    for (char c : world_id) safe += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
    return dir_ / (safe + ".log.ndjson");
}

void LogStore::append_log(const std::string& world_id, const InteractionLogEntry& entry) {
    append_log(world_id, std::span<const InteractionLogEntry>(&entry, 1));
}

void LogStore::append_log(const std::string& world_id, std::span<const InteractionLogEntry> entries) {
    if (entries.empty()) return;
    std::string chunk;
    for (const auto& e : entries) chunk += rounded(to_json(e)).dump() + "\n";
    std::lock_guard lock(mutex_);
    std::error_code ec;
    fs::create_directories(dir_, ec);
    std::ofstream out(path_for(world_id), std::ios::binary | std::ios::app);
    if (!out) throw Error(ErrorCode::IoError, "cannot append to " + path_for(world_id).string());
    out << chunk;
    if (!out.flush()) throw Error(ErrorCode::IoError, "append failed for " + path_for(world_id).string());
}

std::vector<InteractionLogEntry> LogStore::read_log(const std::string& world_id) const {
    std::lock_guard lock(mutex_);
    if (!fs::exists(path_for(world_id))) return {};
    return read_log_file(path_for(world_id));
}

std::vector<InteractionLogEntry> read_log_file(const fs::path& path) {
    std::istringstream in(read_file(path));
    std::vector<InteractionLogEntry> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const std::string path_prefix = "/" + std::to_string(lineno - 1);
        const json j = json::parse(line, nullptr, false);
        if (j.is_discarded()) corrupt(path_prefix, "log line " + std::to_string(lineno) + " is not valid JSON");
        out.push_back(log_entry_from_json(j, path_prefix));
    }
    return out;
}

Autosaver::Autosaver(fs::path world_path, LogStore& logs, Clock clock)
    : world_path_(std::move(world_path)), logs_(logs), clock_(std::move(clock)) {}

void Autosaver::mark_persisted(const std::string& world_id, std::size_t count) {
    world_id_ = world_id;
    persisted_ = count;
}

void Autosaver::operator()(const World& world) {
    if (world.id() != world_id_) mark_persisted(world.id(), world.log().size());
    const auto& log = world.log();
    if (log.size() > persisted_) {
        logs_.append_log(world.id(), std::span<const InteractionLogEntry>(log).subspan(persisted_));
        persisted_ = log.size();
    }
    save_world(world, world_path_, clock_());
}

void attach_autosave(WorldStore& store, std::shared_ptr<Autosaver> saver) {
    store.read([&](const World& w) { saver->mark_persisted(w.id(), w.log().size()); });
    store.on_commit([saver](const World& w) { (*saver)(w); });
}

} // namespace dustmagnet
