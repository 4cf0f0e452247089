#pragma once

// Scenario documents for the simulated backend. The schema is described in
// docs/formats.md.

#include <filesystem>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/package_index.hpp"

namespace evoconfig::sim {

struct Effects {
    std::map<std::string, std::string> install;  // name -> version
    std::vector<std::string> uninstall;
    std::vector<std::string> set_facts;
    std::vector<std::string> clear_facts;
    std::map<std::string, std::string> write;  // path -> content
    std::vector<std::string> remove;

    bool empty() const;
};

/// Scripted outcome for commands matching `match`, consulted before the
/// builtin package model. `when` atoms use the predicate grammar.
struct Behavior {
    std::string match;
    std::regex pattern;
    std::vector<std::string> when;
    int exit_code = 0;
    std::string stdout_text;
    std::string stderr_text;
    double duration = 1.0;
    Effects effects;
    int max_fires = -1;  // unlimited
};

/// Optional compiled extension of the project itself.
struct ExtensionSpec {
    std::string name;               // e.g. "pkg._speedups"
    std::vector<std::string> needs;  // facts required to build it
    bool optional = true;           // optional: install succeeds with a warning
    std::string fact;               // fact set once built
};

struct ProjectSpec {
    std::string distribution;  // normalized name recorded as installed
    std::string module;        // importable top-level module
    std::string layout = "flat";  // flat | src
    std::vector<std::string> requires_;
    std::vector<ExtensionSpec> extensions;
    std::vector<std::string> test_imports;
    std::vector<std::string> test_requires_facts;
    int test_count = 0;
    double test_seconds = 2.0;
    double build_seconds = 5.0;
};

struct Annotation {
    std::string command_pattern;
    std::string output_pattern;
    std::string error_type;
    std::vector<std::string> keywords;
    std::string fix_pattern;
};

struct Scenario {
    std::string name;
    std::vector<std::string> tags;
    std::string expected_status;
    std::optional<int> t_max;
    std::optional<double> time_budget;

    std::map<std::string, std::string> virtual_fs;
    PackageIndex registry;
    std::map<std::string, std::string> installed;  // preinstalled
    std::set<std::string> facts;
    std::optional<ProjectSpec> project;
    std::vector<Behavior> behaviors;
    bool builtins = false;
    std::vector<std::string> solved_predicate;
    std::vector<std::string> solution;
    std::vector<Annotation> annotations;

    nlohmann::json source;  // the document as loaded

    bool has_tag(const std::string& tag) const;
};

/// Throws ScenarioInvalid on schema violations.
Scenario parse_scenario(const nlohmann::json& doc);
/// Throws ScenarioInvalid when the file is missing or unparseable.
Scenario load_scenario(const std::filesystem::path& path);

/// Validates a predicate atom; throws ScenarioInvalid.
void validate_atom(const std::string& atom);

}  // namespace evoconfig::sim
