#pragma once

// Desk-scale package index for the simulated environment: versions with
// requirements, wheel availability and build needs, plus a small
// backtracking resolver that reports pip-style conflicts.

#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evoconfig::sim {

/// Dotted numeric versions ("1.26.4"); non-numeric parts compare as strings.
int compare_versions(const std::string& a, const std::string& b);

std::string normalize_package_name(const std::string& name);

struct VersionClause {
    std::string op;  // ==, !=, >=, <=, >, <
    std::string version;
};

struct Requirement {
    std::string name;  // normalized
    std::vector<VersionClause> clauses;

    bool satisfied_by(const std::string& version) const;
    std::string to_string() const;
};

/// Parses "name", "name==1.0", "name>=1,<2", "name[extra]==1". Throws
/// std::invalid_argument on an empty name.
Requirement parse_requirement(const std::string& spec);

struct ReleaseInfo {
    std::vector<std::string> requires_;
    bool wheel = true;
    double build_seconds = 90.0;    // source builds only
    double install_seconds = 3.0;
    std::vector<std::string> needs;  // facts required to build from source
};

struct PackageInfo {
    std::map<std::string, ReleaseInfo> releases;  // version -> info
    std::vector<std::string> modules;              // importable top-level modules
};

class PackageIndex {
public:
    PackageIndex() = default;
    static PackageIndex from_json(const nlohmann::json& registry);

    bool has(const std::string& name) const;
    const PackageInfo* find(const std::string& name) const;
    /// Versions sorted newest first.
    std::vector<std::string> versions(const std::string& name) const;
    const ReleaseInfo* release(const std::string& name, const std::string& version) const;
    /// Distribution providing an importable module, if any.
    std::optional<std::string> provider_of_module(const std::string& module) const;
    std::vector<std::string> modules_of(const std::string& name) const;

    /// Declared pairs of packages that can never be installed together.
    const std::vector<std::pair<std::string, std::string>>& conflict_pairs() const { return conflicts_; }

    /// Adds or replaces a package (the simulator registers the local project this way).
    void add_package(const std::string& name, PackageInfo info);

    nlohmann::json to_json() const;

private:
    std::map<std::string, PackageInfo> packages_;
    std::vector<std::pair<std::string, std::string>> conflicts_;
};

struct ResolveRequest {
    std::vector<Requirement> requested;
    std::map<std::string, std::string> installed;  // name -> version
    bool prefer_binary = false;
    bool no_deps = false;
    std::set<std::string> facts;
};

struct ResolveResult {
    bool ok = false;
    std::map<std::string, std::string> to_install;  // new or changed pins
    std::string error;                              // pip-style message when !ok
    double duration = 0.0;
    std::vector<std::string> source_builds;         // packages built from sdist
    std::vector<std::string> broken_after;          // installed requirements left unsatisfied
};

/// Resolves `requested` against the index. Installed packages are kept when
/// they satisfy every constraint, otherwise replaced. Source builds whose
/// `needs` facts are missing make the resolution fail with a build error.
ResolveResult resolve(const PackageIndex& index, const ResolveRequest& request);

}  // namespace evoconfig::sim
