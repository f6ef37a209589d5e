#include "dustmagnet/server.hpp"

#include "dustmagnet/metrics.hpp"

#include <httplib.h>

#include <set>

namespace dustmagnet {

namespace fs = std::filesystem;
using nlohmann::json;

int http_status(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotFound: return 404;
    case ErrorCode::SteeringUnset:
    case ErrorCode::IllegalCross: return 409;
    case ErrorCode::InvalidWeightVector:
    case ErrorCode::DegenerateLayout:
    case ErrorCode::InvalidElement:
    case ErrorCode::InvalidConcept:
    case ErrorCode::InsufficientData:
    case ErrorCode::CorruptWorldFile:
    case ErrorCode::UnsupportedVersion: return 422;
    case ErrorCode::BadRequest:
    case ErrorCode::InvalidConfig: return 400;
    case ErrorCode::MissingMarker:
    case ErrorCode::EmptyGeneration:
    case ErrorCode::MalformedRecognition:
    case ErrorCode::ProviderRejected: return 502;
    case ErrorCode::ProviderUnavailable: return 503;
    case ErrorCode::HeuristicFailure:
    case ErrorCode::IoError:
    case ErrorCode::InvalidTemplate: return 500;
    }
    return 500;
}

json api_error(const Error& e) {
    json j = {{"code", to_string(e.code())}, {"message", e.what()}};
    if (!e.field_path().empty()) j["field_path"] = e.field_path();
    return j;
}

std::string_view to_string(JobStatus s) {
    switch (s) {
    case JobStatus::pending: return "pending";
    case JobStatus::running: return "running";
    case JobStatus::succeeded: return "succeeded";
    case JobStatus::failed: return "failed";
    }
    return "pending";
}

json to_json(const JobInfo& job) {
    json j = {{"id", job.id}, {"kind", job.kind}, {"status", to_string(job.status)}};
    if (job.status == JobStatus::succeeded) j["result"] = job.result;
    if (job.status == JobStatus::failed) {
        j["error"] = job.error;
        j["http_status"] = job.http_status;
    }
    return j;
}

JobRunner::~JobRunner() {
    for (auto& t : threads_) {
        if (t.joinable()) t.join();
    }
}

std::string JobRunner::submit(std::string kind, std::function<json()> work) {
    std::lock_guard lock(mutex_);
    const std::string id = "job-" + std::to_string(next_++);
    jobs_[id] = JobInfo{id, std::move(kind)};
    threads_.emplace_back([this, id, work = std::move(work)] {
        {
            std::lock_guard l(mutex_);
            jobs_[id].status = JobStatus::running;
        }
        JobInfo outcome;
        try {
            outcome.result = work();
            outcome.status = JobStatus::succeeded;
        } catch (const Error& e) {
            outcome.status = JobStatus::failed;
            outcome.error = api_error(e);
            outcome.http_status = http_status(e.code());
        } catch (const std::exception& e) {
            outcome.status = JobStatus::failed;
            outcome.error = {{"code", "Internal"}, {"message", e.what()}};
            outcome.http_status = 500;
        }
        std::lock_guard l(mutex_);
        JobInfo& job = jobs_[id];
        job.status = outcome.status;
        job.result = std::move(outcome.result);
        job.error = std::move(outcome.error);
        job.http_status = outcome.http_status;
        done_.notify_all();
    });
    return id;
}

std::optional<JobInfo> JobRunner::get(const std::string& id) const {
    std::lock_guard lock(mutex_);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

std::optional<JobInfo> JobRunner::wait(const std::string& id, std::chrono::milliseconds timeout) const {
    std::unique_lock lock(mutex_);
    auto finished = [&] {
        auto it = jobs_.find(id);
        return it == jobs_.end() || it->second.status == JobStatus::succeeded || it->second.status == JobStatus::failed;
    };
    done_.wait_for(lock, timeout, finished);
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return std::nullopt;
    return it->second;
}

void JobRunner::drain() {
    std::unique_lock lock(mutex_);
    done_.wait(lock, [&] {
        for (const auto& [_, job] : jobs_) {
            if (job.status == JobStatus::pending || job.status == JobStatus::running) return false;
        }
        return true;
    });
}

namespace {

const std::vector<RouteInfo> kRoutes = {
    {"GET", "/api/health", "liveness probe"},
    {"GET", "/api/config", "provider settings without secrets"},
    {"GET", "/api/world", "whole world"},
    {"PATCH", "/api/world", "rename the world"},
    {"GET", "/api/elements", "list elements"},
    {"POST", "/api/elements", "create an element (notes and other user-written items)"},
    {"GET", "/api/elements/:id", "one element"},
    {"PATCH", "/api/elements/:id", "edit element text"},
    {"DELETE", "/api/elements/:id", "delete an element everywhere"},
    {"GET", "/api/selection", "selected elements with their positions in every view"},
    {"PUT", "/api/selection", "replace the selection"},
    {"GET", "/api/views", "list views"},
    {"POST", "/api/views", "create a view"},
    {"GET", "/api/views/:id", "one view"},
    {"PATCH", "/api/views/:id", "rename a view"},
    {"DELETE", "/api/views/:id", "delete a view"},
    {"POST", "/api/views/:id/magnets", "add a concept"},
    {"PATCH", "/api/views/:id/magnets/:mid", "edit a concept"},
    {"POST", "/api/views/:id/magnets/:mid/move", "move a concept, projected to keep the layout convex"},
    {"DELETE", "/api/views/:id/magnets/:mid", "remove a concept"},
    {"POST", "/api/views/:id/placements", "add an element to a view"},
    {"POST", "/api/views/:id/placements/:eid/reposition", "correct a placement"},
    {"DELETE", "/api/views/:id/placements/:eid", "exclude an element from a view"},
    {"PUT", "/api/views/:id/marker", "set the steering marker"},
    {"DELETE", "/api/views/:id/marker", "clear the steering marker"},
    {"POST", "/api/views/:id/recognize", "recognize an element in a view (job)"},
    {"POST", "/api/views/:id/rerecognize", "recognize stale placements again (job)"},
    {"POST", "/api/views/:id/rewrite", "rewrite an element toward a position (job)"},
    {"GET", "/api/views/:id/examples", "correction examples"},
    {"DELETE", "/api/views/:id/examples/:index", "drop a correction example"},
    {"POST", "/api/links", "anchor or cross two views"},
    {"DELETE", "/api/views/:id/link", "unlink a view"},
    {"GET", "/api/views/:id/crossed", "crossed plane"},
    {"POST", "/api/views/:id/crossed/reposition", "correct a placement on a crossed plane"},
    {"GET", "/api/views/:id/anchored", "anchored element pairs"},
    {"POST", "/api/generate", "generate an element, optionally steered (job)"},
    {"GET", "/api/jobs/:id", "poll a job"},
    {"GET", "/api/log", "interaction log"},
    {"GET", "/api/metrics", "error metrics report"},
    {"POST", "/api/world/save", "save the world to a file in the data directory"},
    {"POST", "/api/world/load", "load a world file from the data directory"},
    {"GET", "/api/world/export", "world file document"},
    {"POST", "/api/world/import", "replace the world from a world file document"},
};

json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    json j = json::parse(req.body, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::BadRequest, "request body must be a JSON object");
    return j;
}

std::string req_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || !it->is_string()) {
        throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' must be a string", std::string("/") + key);
    }
    return it->get<std::string>();
}

std::optional<std::string> opt_string(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) {
        throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' must be a string", std::string("/") + key);
    }
    return it->get<std::string>();
}

Point2D point_at(const json& j, const std::string& path) {
    if (j.is_array() && j.size() == 2 && j[0].is_number() && j[1].is_number()) {
        return {j[0].get<double>(), j[1].get<double>()};
    }
    if (j.is_object() && j.contains("x") && j.contains("y") && j["x"].is_number() && j["y"].is_number()) {
        return {j["x"].get<double>(), j["y"].get<double>()};
    }
    throw Error(ErrorCode::BadRequest, "expected a point {\"x\", \"y\"}", path);
}

Point2D req_point(const json& body, const char* key) {
    auto it = body.find(key);
    if (it == body.end()) throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' is required", std::string("/") + key);
    return point_at(*it, std::string("/") + key);
}

std::vector<std::string> string_list(const json& body, const char* key) {
    std::vector<std::string> out;
    auto it = body.find(key);
    if (it == body.end() || it->is_null()) return out;
    if (!it->is_array()) throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' must be an array", std::string("/") + key);
    for (const auto& x : *it) {
        if (!x.is_string()) throw Error(ErrorCode::BadRequest, std::string("field '") + key + "' must hold strings", std::string("/") + key);
        out.push_back(x.get<std::string>());
    }
    return out;
}

WeightVector weights_at(const json& j) {
    if (!j.is_array()) throw Error(ErrorCode::BadRequest, "weights must be an array of numbers", "/weights");
    std::vector<double> values;
    for (const auto& x : j) {
        if (!x.is_number()) throw Error(ErrorCode::BadRequest, "weights must be an array of numbers", "/weights");
        values.push_back(x.get<double>());
    }
    return WeightVector(std::move(values));
}

void reply(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
}

void reply_error(httplib::Response& res, const Error& e) { reply(res, http_status(e.code()), api_error(e)); }

// A file name inside the data directory; rejects anything with a path.
fs::path data_file(const fs::path& dir, const std::optional<std::string>& name) {
    const std::string file = name.value_or("world.json");
    if (file.empty() || file.find('/') != std::string::npos || file.find('\\') != std::string::npos || file == "." ||
        file == "..") {
        throw Error(ErrorCode::BadRequest, "file name must not contain a path", "/file");
    }
    return dir / file;
}

json placement_entry(const ViewId& vid, const Placement& p) { return {{"view_id", vid}, {"placement", to_json(p)}}; }

json crossed_json(const CrossedPlane& plane) {
    json points = json::array();
    for (const auto& p : plane.points) {
        points.push_back({{"element_id", p.element_id},
                          {"position", to_json(p.position)},
                          {"weights_a", to_json(p.weights_a)},
                          {"weights_b", to_json(p.weights_b)}});
    }
    const auto& ax = plane.axes;
    return {{"view_a", plane.view_a},
            {"view_b", plane.view_b},
            {"axis_a", {to_json(ax.axis_a()[0]), to_json(ax.axis_a()[1])}},
            {"axis_b", {to_json(ax.axis_b()[0]), to_json(ax.axis_b()[1])}},
            {"frame", {{"min", to_json(ax.frame().min)}, {"max", to_json(ax.frame().max)}}},
            {"points", points}};
}

} // namespace

const std::vector<RouteInfo>& Server::routes() { return kRoutes; }

Server::Server(ServerOptions options) : options_(std::move(options)) {
    if (!options_.provider) throw Error(ErrorCode::InvalidConfig, "no completion provider configured");
    options_.provider_config.validate();
    std::error_code ec;
    fs::create_directories(options_.data_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create data directory " + options_.data_dir.string() + ": " + ec.message());
    world_path_ = options_.data_dir / "world.json";
    logs_ = std::make_unique<LogStore>(options_.data_dir / "logs");

    World world("world", "Untitled world", options_.clock);
    if (fs::exists(world_path_)) {
        // The log is keyed by world id, which is only known after reading.
        const WorldFile probe = load_world_file(world_path_, {}, options_.clock);
        world = load_world(world_path_, logs_->read_log(probe.world.id()), options_.clock);
    }
    store_ = std::make_unique<WorldStore>(world);
    if (options_.autosave) {
        autosaver_ = std::make_shared<Autosaver>(world_path_, *logs_, options_.clock);
        autosaver_->mark_persisted(world.id(), world.log().size());
        attach_autosave(*store_, autosaver_);
    }
    orchestrator_ = std::make_unique<Orchestrator>(*store_, options_.provider, options_.provider_config,
                                                   TemplateSet::builtin(), options_.retry);
    jobs_ = std::make_unique<JobRunner>();
    http_ = std::make_unique<httplib::Server>();
    // Without SO_REUSEPORT a second server on a busy port fails to bind.
    http_->set_socket_options([](socket_t sock) {
        int yes = 1;
        setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, reinterpret_cast<const void*>(&yes), sizeof(yes));
    });
    install_routes();
}

Server::~Server() {
    stop();
    if (jobs_) jobs_->drain();
}

int Server::start(const std::string& host, int port) {
    const int bound = port == 0 ? http_->bind_to_any_port(host) : (http_->bind_to_port(host, port) ? port : -1);
    if (bound < 0) throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    thread_ = std::thread([this] { http_->listen_after_bind(); });
    http_->wait_until_ready();
    return bound;
}

void Server::run(const std::string& host, int port) {
    if (!http_->bind_to_port(host, port)) {
        throw Error(ErrorCode::IoError, "cannot bind " + host + ":" + std::to_string(port) + " (port busy?)");
    }
    http_->listen_after_bind();
}

void Server::stop() {
    if (http_) http_->stop();
    if (thread_.joinable()) thread_.join();
}

void Server::install_routes() {
    using Handler = std::function<void(const httplib::Request&, httplib::Response&)>;
    std::set<std::pair<std::string, std::string>> installed;
    auto on = [&](const std::string& method, const std::string& pattern, Handler handler) {
        installed.emplace(method, pattern);
        auto wrapped = [handler = std::move(handler)](const httplib::Request& req, httplib::Response& res) {
            try {
                handler(req, res);
            } catch (const Error& e) {
                reply_error(res, e);
            } catch (const json::exception& e) {
                reply(res, 400, {{"code", to_string(ErrorCode::BadRequest)}, {"message", e.what()}});
            } catch (const std::exception& e) {
                reply(res, 500, {{"code", "Internal"}, {"message", e.what()}});
            }
        };
        if (method == "GET") http_->Get(pattern, wrapped);
        else if (method == "POST") http_->Post(pattern, wrapped);
        else if (method == "PUT") http_->Put(pattern, wrapped);
        else if (method == "PATCH") http_->Patch(pattern, wrapped);
        else if (method == "DELETE") http_->Delete(pattern, wrapped);
    };
    auto param = [](const httplib::Request& req, const char* name) { return req.path_params.at(name); };
    WorldStore& store = *store_;
    Orchestrator& orch = *orchestrator_;
    JobRunner& jobs = *jobs_;
    auto accepted = [&jobs](httplib::Response& res, const std::string& id) {
        reply(res, 202, {{"job_id", id}, {"status", to_string(jobs.get(id)->status)}});
    };

    on("GET", "/api/health", [](const auto&, auto& res) { reply(res, 200, {{"status", "ok"}}); });

    on("GET", "/api/config", [this](const auto&, auto& res) {
        const ProviderConfig& c = options_.provider_config;
        reply(res, 200, {{"provider", options_.provider->id()},
                         {"endpoint_url", c.endpoint_url},
                         {"model_name", c.model_name},
                         {"api_key_env", c.api_key_env},
                         {"max_tokens", c.max_tokens},
                         {"temperature", c.temperature},
                         {"request_timeout_s", c.request_timeout_s}});
    });

    // World

    on("GET", "/api/world", [&store](const auto&, auto& res) {
        reply(res, 200, store.read([](const World& w) { return world_to_json(w); }));
    });
    on("PATCH", "/api/world", [&store](const auto& req, auto& res) {
        const std::string name = req_string(parse_body(req), "name");
        store.mutate([&](World& w) { w.rename(name); });
        reply(res, 200, {{"name", name}});
    });

    // Elements

    on("GET", "/api/elements", [&store](const auto&, auto& res) {
        reply(res, 200, store.read([](const World& w) {
            json out = json::array();
            for (const auto& e : w.elements()) out.push_back(to_json(e));
            return out;
        }));
    });
    on("POST", "/api/elements", [&store](const auto& req, auto& res) {
        const json body = parse_body(req);
        const ElementKind kind = parse_element_kind(req_string(body, "kind"));
        const std::string text = req_string(body, "text");
        reply(res, 201, store.mutate([&](World& w) { return to_json(w.create_element(kind, text, CreatedBy::user)); }));
    });
    on("GET", "/api/elements/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        reply(res, 200, store.read([&](const World& w) { return to_json(w.element(id)); }));
    });
    on("PATCH", "/api/elements/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string text = req_string(parse_body(req), "text");
        reply(res, 200, store.mutate([&](World& w) {
            w.edit_element_text(id, text);
            return to_json(w.element(id));
        }));
    });
    on("DELETE", "/api/elements/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        store.mutate([&](World& w) { w.delete_element(id); });
        reply(res, 200, {{"deleted", id}});
    });
    on("GET", "/api/selection", [&store](const auto&, auto& res) {
        reply(res, 200, store.read([](const World& w) {
            json highlights = json::array();
            for (const auto& v : w.views()) {
                for (const auto& id : w.selection()) {
                    if (const Placement* p = v.find_placement(id)) {
                        highlights.push_back({{"element_id", id}, {"view_id", v.id}, {"position", to_json(p->position)}});
                    }
                }
            }
            return json{{"element_ids", json(w.selection())}, {"highlights", highlights}};
        }));
    });
    on("PUT", "/api/selection", [&store](const auto& req, auto& res) {
        const auto ids = string_list(parse_body(req), "element_ids");
        store.mutate([&](World& w) { w.set_selection({ids.begin(), ids.end()}); });
        reply(res, 200, {{"element_ids", ids}});
    });

    // Views and magnets

    on("GET", "/api/views", [&store](const auto&, auto& res) {
        reply(res, 200, store.read([](const World& w) {
            json out = json::array();
            for (const auto& v : w.views()) out.push_back(to_json(v));
            return out;
        }));
    });
    on("POST", "/api/views", [&store](const auto& req, auto& res) {
        const json body = parse_body(req);
        const std::string name = req_string(body, "name");
        std::vector<MagnetSpec> specs;
        if (auto it = body.find("magnets"); it != body.end()) {
            if (!it->is_array()) throw Error(ErrorCode::BadRequest, "magnets must be an array", "/magnets");
            for (std::size_t i = 0; i < it->size(); ++i) {
                const json& m = (*it)[i];
                if (!m.is_object()) throw Error(ErrorCode::BadRequest, "magnet must be an object", "/magnets/" + std::to_string(i));
                specs.push_back({req_string(m, "text"), req_point(m, "position"), opt_string(m, "source")});
            }
        }
        reply(res, 201, store.mutate([&](World& w) { return to_json(w.create_view(name, std::move(specs))); }));
    });
    on("GET", "/api/views/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        reply(res, 200, store.read([&](const World& w) { return to_json(w.view(id)); }));
    });
    on("PATCH", "/api/views/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string name = req_string(parse_body(req), "name");
        reply(res, 200, store.mutate([&](World& w) {
            w.rename_view(id, name);
            return to_json(w.view(id));
        }));
    });
    on("DELETE", "/api/views/:id", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        store.mutate([&](World& w) { w.delete_view(id); });
        reply(res, 200, {{"deleted", id}});
    });
    on("POST", "/api/views/:id/magnets", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const json body = parse_body(req);
        MagnetSpec spec{req_string(body, "text"), req_point(body, "position"), opt_string(body, "source")};
        reply(res, 201, store.mutate([&](World& w) { return to_json(w.add_magnet(id, std::move(spec))); }));
    });
    on("PATCH", "/api/views/:id/magnets/:mid", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string mid = param(req, "mid");
        const std::string text = req_string(parse_body(req), "text");
        reply(res, 200, store.mutate([&](World& w) {
            w.edit_concept(id, mid, text);
            const View& v = w.view(id);
            return to_json(v.magnets[v.magnet_index(mid)]);
        }));
    });
    on("POST", "/api/views/:id/magnets/:mid/move", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string mid = param(req, "mid");
        const Point2D p = req_point(parse_body(req), "position");
        reply(res, 200, store.mutate([&](World& w) {
            const MagnetMove mv = w.move_magnet(id, mid, p);
            return json{{"requested", to_json(mv.requested)},
                        {"position", to_json(mv.position)},
                        {"projected", mv.projected},
                        {"view", to_json(w.view(id))}};
        }));
    });
    on("DELETE", "/api/views/:id/magnets/:mid", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string mid = param(req, "mid");
        reply(res, 200, store.mutate([&](World& w) {
            w.remove_magnet(id, mid);
            return to_json(w.view(id));
        }));
    });

    // Placements

    on("POST", "/api/views/:id/placements", [&store, &orch, &jobs, param, accepted](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const json body = parse_body(req);
        const std::string eid = req_string(body, "element_id");
        if (body.contains("weights") || body.contains("position")) {
            reply(res, 201, store.mutate([&](World& w) {
                const WeightVector weights = body.contains("weights")
                                                 ? weights_at(body["weights"])
                                                 : position_to_weights(w.view(id).layout(), req_point(body, "position"));
                return to_json(w.add_element_to_view(id, eid, weights, Provenance::user_corrected));
            }));
            return;
        }
        store.read([&](const World& w) {
            w.element(eid);
            if (w.view(id).magnets.size() < 2) throw Error(ErrorCode::BadRequest, "view needs at least two magnets");
            return 0;
        });
        accepted(res, jobs.submit("recognize", [&orch, id, eid] {
            return placement_entry(id, orch.recognize_and_place(id, eid, RecognizeMode::explicit_request));
        }));
    });
    on("POST", "/api/views/:id/placements/:eid/reposition", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string eid = param(req, "eid");
        const Point2D p = req_point(parse_body(req), "position");
        reply(res, 200, store.mutate([&](World& w) { return to_json(w.reposition_element(id, eid, p)); }));
    });
    on("DELETE", "/api/views/:id/placements/:eid", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string eid = param(req, "eid");
        store.mutate([&](World& w) { w.exclude_element(id, eid); });
        reply(res, 200, {{"excluded", eid}, {"view_id", id}});
    });

    // Steering

    on("PUT", "/api/views/:id/marker", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const Point2D p = req_point(parse_body(req), "position");
        reply(res, 200, store.mutate([&](World& w) {
            w.set_steering_marker(id, p);
            const View& v = w.view(id);
            return json{{"position", to_json(*v.steering_marker)}, {"weights", to_json(*v.marker_weights())}};
        }));
    });
    on("DELETE", "/api/views/:id/marker", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        store.mutate([&](World& w) { w.set_steering_marker(id, std::nullopt); });
        reply(res, 200, {{"cleared", id}});
    });

    // Long operations

    on("POST", "/api/views/:id/recognize", [&store, &orch, &jobs, param, accepted](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const json body = parse_body(req);
        const std::string eid = req_string(body, "element_id");
        const bool keep = body.value("keep_user_corrections", false);
        store.read([&](const World& w) {
            w.element(eid);
            if (w.view(id).magnets.size() < 2) throw Error(ErrorCode::BadRequest, "view needs at least two magnets");
            return 0;
        });
        const RecognizeMode mode = keep ? RecognizeMode::keep_user_corrections : RecognizeMode::explicit_request;
        accepted(res, jobs.submit("recognize", [&orch, id, eid, mode] {
            return placement_entry(id, orch.recognize_and_place(id, eid, mode));
        }));
    });
    on("POST", "/api/views/:id/rerecognize", [&store, &orch, &jobs, param, accepted](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        store.read([&](const World& w) { return w.view(id).id; });
        accepted(res, jobs.submit("rerecognize", [&orch, id] {
            json out = json::array();
            for (const auto& p : orch.rerecognize_stale(id)) out.push_back(placement_entry(id, p));
            return out;
        }));
    });
    on("POST", "/api/views/:id/rewrite", [&store, &orch, &jobs, param, accepted](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const json body = parse_body(req);
        const std::string eid = req_string(body, "element_id");
        const Point2D target = req_point(body, "position");
        store.read([&](const World& w) {
            if (!w.view(id).find_placement(eid)) {
                throw Error(ErrorCode::NotFound, "element '" + eid + "' is not placed in view '" + id + "'");
            }
            return 0;
        });
        accepted(res, jobs.submit("rewrite", [&orch, &store, id, eid, target] {
            const Element e = orch.rewrite_element(id, eid, target);
            return store.read([&](const World& w) {
                json placements = json::array();
                for (const auto& v : w.views()) {
                    if (const Placement* p = v.find_placement(eid)) placements.push_back(placement_entry(v.id, *p));
                }
                return json{{"element", to_json(e)}, {"placements", placements}};
            });
        }));
    });
    on("POST", "/api/generate", [&store, &orch, &jobs, accepted](const auto& req, auto& res) {
        const json body = parse_body(req);
        GenerationRequest gen;
        gen.kind = parse_element_kind(req_string(body, "kind"));
        gen.user_prompt = opt_string(body, "prompt");
        if (gen.user_prompt && gen.user_prompt->find_first_not_of(" \t\r\n") == std::string::npos) gen.user_prompt.reset();
        gen.steering = string_list(body, "steering");
        if (body.contains("selection") && !body["selection"].is_null()) {
            const auto sel = string_list(body, "selection");
            gen.context_selection = std::set<ElementId>(sel.begin(), sel.end());
        }
        store.read([&](const World& w) {
            for (const auto& vid : gen.steering) {
                if (!w.view(vid).steering_marker) {
                    throw Error(ErrorCode::SteeringUnset, "view '" + vid + "' has no steering marker");
                }
            }
            if (gen.context_selection) {
                for (const auto& eid : *gen.context_selection) w.element(eid);
            }
            return 0;
        });
        accepted(res, jobs.submit("generate", [&orch, gen] {
            const GenerationOutcome out = orch.generate_element(gen);
            json placements = json::array();
            for (std::size_t i = 0; i < out.placements.size(); ++i) {
                placements.push_back(placement_entry(gen.steering[i], out.placements[i]));
            }
            return json{{"element", to_json(out.element)}, {"placements", placements}};
        }));
    });
    on("GET", "/api/jobs/:id", [&jobs, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        std::optional<JobInfo> job;
        if (req.has_param("wait_ms")) {
            const long ms = std::clamp(std::stol(req.get_param_value("wait_ms")), 0L, 60000L);
            job = jobs.wait(id, std::chrono::milliseconds(ms));
        } else {
            job = jobs.get(id);
        }
        if (!job) throw Error(ErrorCode::NotFound, "no job '" + id + "'");
        reply(res, 200, to_json(*job));
    });

    // Examples

    on("GET", "/api/views/:id/examples", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        reply(res, 200, store.read([&](const World& w) {
            json out = json::array();
            for (const auto& x : w.view(id).examples) out.push_back(to_json(x));
            return out;
        }));
    });
    on("DELETE", "/api/views/:id/examples/:index", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const std::string raw = param(req, "index");
        if (raw.empty() || raw.find_first_not_of("0123456789") != std::string::npos) {
            throw Error(ErrorCode::BadRequest, "example index must be a non-negative integer");
        }
        const std::size_t index = std::stoul(raw);
        store.mutate([&](World& w) { w.delete_example(id, index); });
        reply(res, 200, {{"deleted", index}, {"view_id", id}});
    });

    // Links

    on("POST", "/api/links", [&store](const auto& req, auto& res) {
        const json body = parse_body(req);
        const std::string a = req_string(body, "view_a");
        const std::string b = req_string(body, "view_b");
        const LinkKind kind = parse_link_kind(req_string(body, "kind"));
        store.mutate([&](World& w) { w.link_views(a, b, kind); });
        reply(res, 201, {{"view_a", a}, {"view_b", b}, {"kind", to_string(kind)}});
    });
    on("DELETE", "/api/views/:id/link", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        store.mutate([&](World& w) { w.unlink_views(id); });
        reply(res, 200, {{"unlinked", id}});
    });
    on("GET", "/api/views/:id/crossed", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        reply(res, 200, store.read([&](const World& w) { return crossed_json(w.crossed_plane(id)); }));
    });
    on("POST", "/api/views/:id/crossed/reposition", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        const json body = parse_body(req);
        const std::string eid = req_string(body, "element_id");
        const Point2D p = req_point(body, "position");
        reply(res, 200, store.mutate([&](World& w) {
            w.reposition_on_crossed_plane(id, eid, p);
            return crossed_json(w.crossed_plane(id));
        }));
    });
    on("GET", "/api/views/:id/anchored", [&store, param](const auto& req, auto& res) {
        const std::string id = param(req, "id");
        reply(res, 200, store.read([&](const World& w) {
            const View& v = w.view(id);
            json pairs = json::array();
            for (const auto& p : w.anchored_pairs(id)) {
                pairs.push_back({{"element_id", p.element_id},
                                 {"position_a", to_json(p.position_a)},
                                 {"position_b", to_json(p.position_b)}});
            }
            return json{{"view_a", id}, {"view_b", v.link->other}, {"pairs", pairs}};
        }));
    });

    // Log and metrics

    on("GET", "/api/log", [&store](const auto&, auto& res) {
        reply(res, 200, store.read([](const World& w) {
            json out = json::array();
            for (const auto& e : w.log()) out.push_back(to_json(e));
            return out;
        }));
    });
    on("GET", "/api/metrics", [&store](const auto& req, auto& res) {
        const auto log = store.read([](const World& w) { return w.log(); });
        const MetricsReport report = metrics_report(log);
        if (req.get_param_value("format") == "text") {
            res.status = 200;
            res.set_content(to_text(report), "text/plain");
            return;
        }
        reply(res, 200, to_json(report));
    });

    // Files

    on("POST", "/api/world/save", [this, &store](const auto& req, auto& res) {
        const fs::path path = data_file(options_.data_dir, opt_string(parse_body(req), "file"));
        store.read([&](const World& w) {
            save_world(w, path, options_.clock());
            return 0;
        });
        reply(res, 200, {{"file", path.filename().string()}});
    });
    on("POST", "/api/world/load", [this, &store](const auto& req, auto& res) {
        const fs::path path = data_file(options_.data_dir, opt_string(parse_body(req), "file"));
        if (!fs::exists(path)) throw Error(ErrorCode::NotFound, "no world file '" + path.filename().string() + "'");
        const WorldFile probe = load_world_file(path, {}, options_.clock);
        World loaded = load_world(path, logs_->read_log(probe.world.id()), options_.clock);
        store.mutate([&](World& w) {
            if (autosaver_) autosaver_->mark_persisted(loaded.id(), loaded.log().size());
            w = std::move(loaded);
        });
        reply(res, 200, store.read([](const World& w) { return world_to_json(w); }));
    });
    on("GET", "/api/world/export", [this, &store](const auto&, auto& res) {
        const std::string text = store.read([&](const World& w) { return serialize_world(w, options_.clock()); });
        res.status = 200;
        res.set_content(text, "application/json");
    });
    on("POST", "/api/world/import", [this, &store](const auto& req, auto& res) {
        // Imported worlds start a fresh log file only if their id is new.
        WorldFile file = parse_world_file(req.body, {}, options_.clock);
        World imported = std::move(file.world);
        World::Raw raw = imported.to_raw();
        raw.log = logs_->read_log(raw.id);
        World world = World::from_raw(std::move(raw), options_.clock);
        store.mutate([&](World& w) {
            if (autosaver_) autosaver_->mark_persisted(world.id(), world.log().size());
            w = std::move(world);
        });
        reply(res, 200, store.read([](const World& w) { return world_to_json(w); }));
    });

    std::set<std::pair<std::string, std::string>> expected;
    for (const auto& r : kRoutes) expected.emplace(r.method, r.pattern);
    if (expected != installed) throw std::logic_error("route table and installed handlers disagree");
}

} // namespace dustmagnet
