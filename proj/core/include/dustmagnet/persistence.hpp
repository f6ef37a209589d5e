#pragma once

#include "dustmagnet/world.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <mutex>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace dustmagnet {

inline constexpr int kWorldFormatVersion = 1;

// A world file as stored on disk. The interaction log lives in its own
// newline-delimited file and is not part of it.
struct WorldFile {
    int format_version = kWorldFormatVersion;
    Timestamp saved_at = 0;
    World world;
    nlohmann::json extras; // unknown top-level fields
};

// Doubles are rounded to 12 significant digits and object keys are sorted,
// so dump(load(dump(w))) == dump(w).
std::string canonical_dump(const nlohmann::json& doc);
double round_12(double v);

nlohmann::json to_json(const WeightVector& w);
nlohmann::json to_json(Point2D p);
nlohmann::json to_json(const Element& e);
nlohmann::json to_json(const Magnet& m);
nlohmann::json to_json(const Placement& p);
nlohmann::json to_json(const Example& x);
nlohmann::json to_json(const View& v);
nlohmann::json to_json(const InteractionLogEntry& entry);
nlohmann::json world_to_json(const World& world);
nlohmann::json world_file_to_json(const WorldFile& file);

// Throw CorruptWorldFile naming the offending field, or UnsupportedVersion.
InteractionLogEntry log_entry_from_json(const nlohmann::json& j, const std::string& path = "");
WorldFile world_file_from_json(const nlohmann::json& doc, std::vector<InteractionLogEntry> log = {},
                               Clock clock = system_clock());
WorldFile parse_world_file(std::string_view text, std::vector<InteractionLogEntry> log = {},
                           Clock clock = system_clock());

std::string serialize_world(const World& world, Timestamp saved_at, const nlohmann::json& extras = {});

// Writes through a temporary file and a rename. Throws IoError.
void save_world(const World& world, const std::filesystem::path& path, std::optional<Timestamp> saved_at = {},
                const nlohmann::json& extras = {});
WorldFile load_world_file(const std::filesystem::path& path, std::vector<InteractionLogEntry> log = {},
                          Clock clock = system_clock());
World load_world(const std::filesystem::path& path, std::vector<InteractionLogEntry> log = {},
                 Clock clock = system_clock());

// Append-only interaction logs, one file per world in a directory.
class LogStore {
public:
    explicit LogStore(std::filesystem::path dir);

    std::filesystem::path path_for(const std::string& world_id) const;
    void append_log(const std::string& world_id, const InteractionLogEntry& entry);
    void append_log(const std::string& world_id, std::span<const InteractionLogEntry> entries);
    // Entries in write order; empty when the file does not exist.
    std::vector<InteractionLogEntry> read_log(const std::string& world_id) const;

private:
    std::filesystem::path dir_;
    mutable std::mutex mutex_;
};

std::vector<InteractionLogEntry> read_log_file(const std::filesystem::path& path);

// Commit hook that saves the world and appends new log entries after every
// committed mutation.
class Autosaver {
public:
    Autosaver(std::filesystem::path world_path, LogStore& logs, Clock clock = system_clock());

    // Marks the first `count` entries of the world's log as already stored.
    void mark_persisted(const std::string& world_id, std::size_t count);
    void operator()(const World& world);

private:
    std::filesystem::path world_path_;
    LogStore& logs_;
    Clock clock_;
    std::string world_id_;
    std::size_t persisted_ = 0;
};

// Entries already in the store's world count as persisted. A commit that
// swaps in a world with another id (load, import) treats that world's log
// as persisted too.
void attach_autosave(WorldStore& store, std::shared_ptr<Autosaver> saver);

} // namespace dustmagnet
