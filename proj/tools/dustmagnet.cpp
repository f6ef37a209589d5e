#include "dustmagnet/error.hpp"
#include "dustmagnet/geometry.hpp"
#include "dustmagnet/llm.hpp"
#include "dustmagnet/metrics.hpp"
#include "dustmagnet/persistence.hpp"
#include "dustmagnet/server.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <pthread.h>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dustmagnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitData = 1;
constexpr int kExitConfig = 2;
constexpr double kResidualLimit = 1e-9;

struct ServeArgs {
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string data_dir = "data";
    std::optional<std::string> endpoint;
    std::optional<std::string> model;
    bool mock = false;
    std::uint64_t mock_seed = 0;
    std::optional<double> temperature;
    std::optional<int> max_tokens;
    std::optional<std::string> key_env;
    std::optional<std::string> key_header;
    std::optional<std::string> request_style;
    std::optional<std::string> response_pointer;
    std::optional<double> timeout;
};

int serve(const ServeArgs& a) {
    ProviderConfig cfg;
    if (a.endpoint) cfg.endpoint_url = *a.endpoint;
    if (a.model) cfg.model_name = *a.model;
    if (a.temperature) cfg.temperature = *a.temperature;
    if (a.max_tokens) cfg.max_tokens = *a.max_tokens;
    if (a.key_env) cfg.api_key_env = *a.key_env;
    if (a.key_header) cfg.api_key_header = *a.key_header;
    if (a.response_pointer) cfg.response_text_pointer = *a.response_pointer;
    if (a.timeout) cfg.request_timeout_s = *a.timeout;
    if (a.request_style) {
        if (*a.request_style == "messages") cfg.request_style = RequestStyle::messages;
        else if (*a.request_style == "prompt") cfg.request_style = RequestStyle::prompt;
        else {
            std::cerr << "error: --request-style must be 'messages' or 'prompt'\n";
            return kExitConfig;
        }
    }

    std::shared_ptr<CompletionProvider> provider;
    if (a.mock) {
        provider = std::make_shared<MockProvider>(a.mock_seed);
    } else {
        provider = std::make_shared<HttpProvider>();
        const char* key = cfg.api_key_env.empty() ? nullptr : std::getenv(cfg.api_key_env.c_str());
        if (!key || !*key) std::cerr << "warning: $" << cfg.api_key_env << " is not set; requests go out without a key\n";
    }

    // Signals are taken synchronously on this thread; the server threads
    // inherit the blocked mask.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    try {
        Server server({.data_dir = a.data_dir, .provider = provider, .provider_config = cfg});
        const int port = server.start(a.host, a.port);
        std::cerr << "listening on http://" << a.host << ":" << port << " (data: " << a.data_dir
                  << ", provider: " << provider->id() << ")\n";
        int sig = 0;
        sigwait(&signals, &sig);
        std::cerr << "shutting down\n";
        server.stop();
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::CorruptWorldFile || e.code() == ErrorCode::UnsupportedVersion ? kExitData
                                                                                                    : kExitConfig;
    }
    return kExitOk;
}

json row_error(std::size_t row, ErrorCode code, const std::string& message) {
    return {{"row", row}, {"error", {{"code", to_string(code)}, {"message", message}}}};
}

Point2D point_of(const json& j) {
    if (!j.is_array() || j.size() != 2 || !j[0].is_number() || !j[1].is_number()) {
        throw Error(ErrorCode::BadRequest, "points must be [x, y] number pairs");
    }
    return {j[0].get<double>(), j[1].get<double>()};
}

int batch_weights(const std::string& input, const std::string& output) {
    std::ifstream in(input);
    if (!in) {
        std::cerr << "error: cannot read " << input << "\n";
        return kExitConfig;
    }
    std::ofstream file;
    if (!output.empty()) {
        file.open(output, std::ios::trunc);
        if (!file) {
            std::cerr << "error: cannot write " << output << "\n";
            return kExitConfig;
        }
    }
    std::ostream& out = output.empty() ? std::cout : file;

    bool failed = false;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        json result;
        try {
            const json j = json::parse(line);
            if (!j.is_object() || !j.contains("layout") || !j.contains("point") || !j["layout"].is_array()) {
                throw Error(ErrorCode::BadRequest, "row needs \"layout\" and \"point\"");
            }
            std::vector<Point2D> positions;
            for (const auto& p : j["layout"]) positions.push_back(point_of(p));
            const MagnetLayout layout(std::move(positions));
            const Point2D p = point_of(j["point"]);
            const Point2D target = layout.clamp_to_hull(p);
            const WeightVector w = position_to_weights(layout, p);
            const Point2D back = weights_to_position(layout, w);
            const double residual = distance(back, target);
            result = {{"row", row},
                      {"weights", w.values()},
                      {"position", {back.x, back.y}},
                      {"clamped", distance(target, p) > kResidualLimit},
                      {"residual", residual}};
            if (!(residual <= kResidualLimit)) failed = true;
        } catch (const Error& e) {
            result = row_error(row, e.code(), e.what());
            failed = true;
        } catch (const json::exception& e) {
            result = row_error(row, ErrorCode::BadRequest, e.what());
            failed = true;
        }
        out << result.dump() << "\n";
        ++row;
    }
    out.flush();
    return failed ? kExitData : kExitOk;
}

int metrics_report_cmd(const std::string& log_path, bool as_json) {
    if (!fs::exists(log_path)) {
        std::cerr << "error: no log file " << log_path << "\n";
        return kExitConfig;
    }
    try {
        const auto log = read_log_file(log_path);
        const MetricsReport report = metrics_report(log);
        if (as_json) std::cout << to_json(report).dump(2) << "\n";
        else std::cout << to_text(report);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == ErrorCode::IoError ? kExitConfig : kExitData;
    }
    return kExitOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"dustmagnet: concept-map world building backed by a language model"};
    app.require_subcommand(1);

    ServeArgs serve_args;
    auto* serve_cmd = app.add_subcommand("serve", "run the HTTP API");
    serve_cmd->add_option("--host", serve_args.host, "interface to bind")->capture_default_str();
    serve_cmd->add_option("--port", serve_args.port, "port to listen on (0 picks a free one)")->capture_default_str();
    serve_cmd->add_option("--data-dir", serve_args.data_dir, "world file and logs")->capture_default_str();
    serve_cmd->add_option("--llm-endpoint", serve_args.endpoint, "completion endpoint URL");
    serve_cmd->add_option("--model", serve_args.model, "model name sent to the endpoint");
    serve_cmd->add_flag("--mock-llm", serve_args.mock, "use the offline mock provider");
    serve_cmd->add_option("--mock-seed", serve_args.mock_seed, "seed for the mock provider");
    serve_cmd->add_option("--temperature", serve_args.temperature, "sampling temperature");
    serve_cmd->add_option("--max-tokens", serve_args.max_tokens, "completion token limit");
    serve_cmd->add_option("--api-key-env", serve_args.key_env, "environment variable holding the API key");
    serve_cmd->add_option("--api-key-header", serve_args.key_header, "header that carries the key");
    serve_cmd->add_option("--request-style", serve_args.request_style, "messages or prompt");
    serve_cmd->add_option("--response-pointer", serve_args.response_pointer, "JSON pointer to the completion text");
    serve_cmd->add_option("--timeout", serve_args.timeout, "request timeout in seconds");

    std::string batch_input, batch_output;
    auto* batch_cmd = app.add_subcommand("batch-weights", "convert positions to weights for NDJSON rows");
    batch_cmd->add_option("input", batch_input, "NDJSON rows {\"layout\": [[x,y],...], \"point\": [x,y]}")->required();
    batch_cmd->add_option("-o,--output", batch_output, "output file (stdout when omitted)");

    std::string log_path;
    bool as_json = false;
    auto* metrics_cmd = app.add_subcommand("metrics-report", "recognition and steering errors from a log file");
    metrics_cmd->add_option("log", log_path, "NDJSON interaction log")->required();
    metrics_cmd->add_flag("--json", as_json, "emit JSON instead of a table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kExitOk : kExitConfig;
    }

    if (*serve_cmd) return serve(serve_args);
    if (*batch_cmd) return batch_weights(batch_input, batch_output);
    if (*metrics_cmd) return metrics_report_cmd(log_path, as_json);
    return kExitConfig;
}
