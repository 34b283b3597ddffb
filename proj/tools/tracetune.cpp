// tracetune: run session scripts, serve the HTTP API, replay archives.

#include "tracetune/config.hpp"
#include "tracetune/script.hpp"
#include "tracetune/service.hpp"
#include "tracetune/studio.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <csignal>
#include <fstream>
#include <iostream>
#include <thread>
#include <unistd.h>

namespace fs = std::filesystem;
using namespace tracetune;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;

/// Owns a scratch data directory unless the user supplied one.
struct DataDir {
    fs::path path;
    bool owned = false;

    explicit DataDir(const std::string& requested) {
        if (!requested.empty()) {
            path = requested;
            fs::create_directories(path);
            return;
        }
        path = fs::temp_directory_path() / ("tracetune-" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
        owned = true;
    }
    ~DataDir() {
        std::error_code ec;
        if (owned) fs::remove_all(path, ec);
    }
};

ProviderConfig load_config(const std::string& path, bool mock_only) {
    ProviderConfig cfg = load_provider_config(path, process_environment(), mock_only);
    for (const auto& var : cfg.missing_credentials) {
        std::cerr << "note: " << var << " is not set; its provider runs as a mock\n";
    }
    return cfg;
}

StudioOptions studio_options(const ProviderConfig& cfg, const fs::path& data, bool persistent) {
    StudioOptions o;
    o.image_dir = data / "images";
    o.session_db = persistent ? (data / "sessions.db").string() : ":memory:";
    o.rng_seed = cfg.rng_seed;
    if (cfg.rng_seed) o.clock = [] { return std::string("1970-01-01T00:00:00Z"); };
    return o;
}

int config_error(const Error& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
}

bool is_config_error(const Error& e) {
    return e.code() == ErrorCode::MalformedConfig || e.code() == ErrorCode::MissingCredential ||
           e.code() == ErrorCode::ScriptParseError;
}

int cmd_run(const std::string& config_path, const std::string& script_path, bool mock_only,
            const std::string& export_dir, const std::string& report_path, const std::string& data_dir,
            bool no_timing) {
    std::optional<ProviderConfig> cfg;
    std::optional<Script> script;
    try {
        cfg = load_config(config_path, mock_only);
        script = load_script(script_path);
    } catch (const Error& e) {
        return config_error(e);
    }

    DataDir data(data_dir);
    std::optional<Studio> studio;
    try {
        studio.emplace(build_providers(*cfg), studio_options(*cfg, data.path, false));
    } catch (const Error& e) {
        return config_error(e);
    }

    ScriptRunner runner(*studio, fs::path(script_path).parent_path());
    const RunReport report = runner.run(*script);
    const auto doc = report.to_json(!no_timing);

    if (!report_path.empty()) {
        std::ofstream out(report_path, std::ios::trunc);
        out << doc.dump(2) << "\n";
        if (!out) {
            std::cerr << "cannot write report to " << report_path << "\n";
            return kExitFailure;
        }
    }
    if (!export_dir.empty() && runner.session()) {
        try {
            export_session(studio->session(runner.session()->session_id), studio->images(), export_dir);
        } catch (const Error& e) {
            std::cerr << "export failed: " << e.what() << "\n";
            return kExitFailure;
        }
    }

    for (const auto& s : report.steps) {
        std::cout << "line " << s.line << "  " << s.op;
        if (!s.name.empty()) std::cout << " as " << s.name;
        if (!no_timing) std::cout << "  " << static_cast<long>(s.elapsed_ms) << " ms";
        std::cout << "\n";
    }
    std::cout << report.status << ": " << report.steps.size() << " steps, " << report.refine_steps
              << " refinements, " << report.node_count << " nodes\n";
    if (report.failure) std::cerr << report.failure->message << "\n";
    return report.passed() ? kExitOk : kExitFailure;
}

volatile std::sig_atomic_t g_stop = 0;

void on_signal(int) { g_stop = 1; }

int cmd_serve(const std::string& config_path, bool mock_only, const std::string& host, int port,
              const std::string& data_dir) {
    std::optional<ProviderConfig> cfg;
    std::optional<Studio> studio;
    try {
        cfg = load_config(config_path, mock_only);
        fs::create_directories(data_dir);
        studio.emplace(build_providers(*cfg), studio_options(*cfg, data_dir, true));
    } catch (const Error& e) {
        return config_error(e);
    }
    ServiceOptions opts;
    opts.host = host;
    opts.port = port;
    Service service(*studio, opts);
    int bound = 0;
    try {
        bound = service.start();
    } catch (const Error& e) {
        return config_error(e);
    }
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cout << "listening on http://" << host << ":" << bound << "\n" << std::flush;
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    service.drain();
    service.stop();
    return kExitOk;
}

int cmd_replay(const std::string& config_path, const std::string& archive, bool mock_only) {
    std::optional<ProviderConfig> cfg;
    try {
        cfg = load_config(config_path, mock_only);
    } catch (const Error& e) {
        return config_error(e);
    }
    DataDir data("");
    try {
        Studio studio(build_providers(*cfg), studio_options(*cfg, data.path, false));
        const Session s = import_session(archive, &studio.images());
        std::size_t mismatches = 0;
        for (const auto& [id, n] : s.nodes) {
            if (!n.parent_id) continue;
            const StructuredPrompt replayed = replay_prompt(studio.refiner(), studio.images(), s, id);
            const bool same = replayed == n.prompt;
            if (!same) ++mismatches;
            std::cout << id << "  " << (same ? "ok" : "MISMATCH") << "\n";
        }
        std::cout << (mismatches == 0 ? "lineage verified" : "lineage differs") << ": " << s.nodes.size()
                  << " nodes, " << mismatches << " mismatches\n";
        return mismatches == 0 ? kExitOk : kExitFailure;
    } catch (const Error& e) {
        if (is_config_error(e)) return config_error(e);
        std::cerr << e.what() << "\n";
        return kExitFailure;
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"tracetune: traceable prompt refinement for image generation"};
    app.require_subcommand(1);

    std::string config_path;
    std::string script_path;
    std::string export_dir;
    std::string report_path;
    std::string data_dir;
    std::string archive;
    std::string host = "127.0.0.1";
    int port = 8080;
    bool mock_only = false;
    bool no_timing = false;

    auto* run = app.add_subcommand("run", "Execute a session script");
    run->add_option("--config", config_path, "Provider config file")->required();
    run->add_option("--script", script_path, "Session script (JSON lines)")->required();
    run->add_flag("--mock-only", mock_only, "Replace every live provider with its mock");
    run->add_option("--export", export_dir, "Write the resulting session archive here");
    run->add_option("--report", report_path, "Write the JSON run report here");
    run->add_option("--data-dir", data_dir, "Keep generated images here instead of a scratch directory");
    run->add_flag("--no-timing", no_timing, "Omit timings so reports compare equal across runs");

    auto* serve = app.add_subcommand("serve", "Serve the HTTP API");
    serve->add_option("--config", config_path, "Provider config file")->required();
    serve->add_flag("--mock-only", mock_only, "Replace every live provider with its mock");
    serve->add_option("--host", host, "Listen address");
    serve->add_option("--port", port, "Listen port");
    serve->add_option("--data-dir", data_dir, "Image store and session database directory")->default_val("tracetune-data");

    auto* replay = app.add_subcommand("replay", "Re-derive every prompt of an exported session");
    replay->add_option("--config", config_path, "Provider config file")->required();
    replay->add_option("--archive", archive, "Exported session directory")->required();
    replay->add_flag("--mock-only", mock_only, "Replace every live provider with its mock");

    auto* templates = app.add_subcommand("templates", "Print the built-in prompt templates");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kExitOk : kExitConfig;
    }

    if (*run) return cmd_run(config_path, script_path, mock_only, export_dir, report_path, data_dir, no_timing);
    if (*serve) return cmd_serve(config_path, mock_only, host, port, data_dir);
    if (*replay) return cmd_replay(config_path, archive, mock_only);
    if (*templates) {
        std::cout << TemplateSet::defaults().to_document();
        return kExitOk;
    }
    return kExitConfig;
}
