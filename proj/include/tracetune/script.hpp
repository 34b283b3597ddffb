#pragma once

// Session scripts: one JSON object per line, executed in order against a
// Studio. Steps bind names ("as") that later steps use as node references:
// "name" is the first node a step produced, "name[k]" its slot k.
//
//   {"op":"generate","input":"...","as":"root"}
//   {"op":"resolve","node":"root","selection":{...},"as":"r"}
//   {"op":"refine","node":"root","mode":"mixed","instruction":"...","selection":{...},"as":"b"}
//   {"op":"select","node":"b[1]"}
//   {"op":"suggest","kind":"label_based","node":"b[1]","label":"tram","as":"sg"}
//   {"op":"expect","check":"rank1","of":"r","label":"tram"}
//
// Blank lines and lines starting with '#' are ignored.

#include "tracetune/studio.hpp"

#include <json.hpp>

#include <filesystem>
#include <string>
#include <vector>

namespace tracetune {

inline constexpr std::string_view kReportSchema = "tracetune/report/v1";

struct ScriptStep {
    std::size_t line = 0;
    std::string op;
    nlohmann::json args;
};

struct Script {
    std::string name;
    std::vector<ScriptStep> steps;
};

/// Throws ScriptParseError citing the line number.
Script parse_script(std::string_view text, std::string name = {});
Script load_script(const std::filesystem::path& path);

struct StepReport {
    std::size_t line = 0;
    std::string op;
    std::string name;
    double elapsed_ms = 0.0;
    nlohmann::json detail = nlohmann::json::object();
};

struct RunReport {
    std::string script;
    std::string status = "passed"; ///< passed | failed (assertion) | error
    std::string session_id;
    std::vector<StepReport> steps;
    std::size_t refine_steps = 0;
    std::size_t node_count = 0;
    double elapsed_ms = 0.0;
    std::optional<ErrorInfo> failure;

    bool passed() const { return status == "passed"; }
    /// `with_timing = false` drops every elapsed_ms field, leaving a
    /// document that is identical across runs with mock providers.
    nlohmann::json to_json(bool with_timing = true) const;
};

class ScriptRunner {
public:
    /// Relative reference-image paths resolve against `base_dir`.
    ScriptRunner(Studio& studio, std::filesystem::path base_dir);

    /// Runs every step; stops at the first failure, which is recorded in
    /// the report rather than thrown.
    RunReport run(const Script& script);

    /// The session the last run created, if any.
    const std::optional<Session>& session() const { return session_; }

private:
    struct Binding {
        std::vector<std::optional<std::string>> nodes;
        std::optional<ResolveResult> resolution;
        std::optional<GenerationBatch> batch;
        std::string parent;
        std::optional<SuggestionSet> suggestions;
    };

    std::string node_ref(const std::string& ref) const;
    const Binding& binding(const std::string& name) const;
    nlohmann::json execute(const ScriptStep& step, std::size_t refine_ordinal);
    nlohmann::json check(const ScriptStep& step);

    Studio& studio_;
    std::filesystem::path base_dir_;
    std::optional<Session> session_;
    std::map<std::string, Binding> bindings_;
};

} // namespace tracetune
