#pragma once

#include "dustmagnet/error.hpp"
#include "dustmagnet/llm.hpp"
#include "dustmagnet/orchestration.hpp"
#include "dustmagnet/persistence.hpp"
#include "dustmagnet/world.hpp"

#include <nlohmann/json.hpp>

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace dustmagnet {

// HTTP status for each error code. Total over ErrorCode.
int http_status(ErrorCode code);

// {"code", "message", "field_path"?}
nlohmann::json api_error(const Error& e);

enum class JobStatus { pending, running, succeeded, failed };
std::string_view to_string(JobStatus s);

struct JobInfo {
    std::string id;
    std::string kind;
    JobStatus status = JobStatus::pending;
    nlohmann::json result;  // set when succeeded
    nlohmann::json error;   // api_error when failed
    int http_status = 0;    // status the error maps to when failed
};

nlohmann::json to_json(const JobInfo& job);

// Runs long operations on background threads. Results stay pollable.
class JobRunner {
public:
    JobRunner() = default;
    ~JobRunner();
    JobRunner(const JobRunner&) = delete;
    JobRunner& operator=(const JobRunner&) = delete;

    std::string submit(std::string kind, std::function<nlohmann::json()> work);
    std::optional<JobInfo> get(const std::string& id) const;
    // Blocks until the job finishes or the timeout passes.
    std::optional<JobInfo> wait(const std::string& id, std::chrono::milliseconds timeout) const;
    // Blocks until no job is pending or running.
    void drain();

private:
    mutable std::mutex mutex_;
    mutable std::condition_variable done_;
    std::map<std::string, JobInfo> jobs_;
    std::vector<std::thread> threads_;
    std::uint64_t next_ = 1;
};

struct ServerOptions {
    std::filesystem::path data_dir = "data";
    std::shared_ptr<CompletionProvider> provider;
    ProviderConfig provider_config;
    RetryPolicy retry;
    Clock clock = system_clock();
    bool autosave = true;
};

struct RouteInfo {
    std::string method;
    std::string pattern;
    std::string summary;
};

class Server {
public:
    // Loads <data_dir>/world.json and its log when present. Throws
    // InvalidConfig without a provider.
    explicit Server(ServerOptions options);
    ~Server();
    Server(const Server&) = delete;
    Server& operator=(const Server&) = delete;

    // Binds and serves on a background thread; returns the bound port.
    // Throws IoError when the port cannot be bound.
    int start(const std::string& host, int port);
    // Serves on the calling thread until stop().
    void run(const std::string& host, int port);
    void stop();

    WorldStore& store() { return *store_; }
    JobRunner& jobs() { return *jobs_; }
    const std::filesystem::path& world_path() const { return world_path_; }

    static const std::vector<RouteInfo>& routes();

private:
    void install_routes();

    ServerOptions options_;
    std::filesystem::path world_path_;
    std::unique_ptr<LogStore> logs_;
    std::unique_ptr<WorldStore> store_;
    std::shared_ptr<Autosaver> autosaver_;
    std::unique_ptr<Orchestrator> orchestrator_;
    std::unique_ptr<JobRunner> jobs_;
    std::unique_ptr<httplib::Server> http_;
    std::thread thread_;
};

} // namespace dustmagnet
