#include "evoconfig/package_index.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "evoconfig/text.hpp"

namespace evoconfig::sim {

using nlohmann::json;

int compare_versions(const std::string& a, const std::string& b) {
    const auto pa = text::split(a, '.');
    const auto pb = text::split(b, '.');
    const std::size_t n = std::max(pa.size(), pb.size());
    for (std::size_t i = 0; i < n; ++i) {
        const std::string x = i < pa.size() ? pa[i] : "0";
        const std::string y = i < pb.size() ? pb[i] : "0";
        const bool nx = !x.empty() && std::all_of(x.begin(), x.end(), ::isdigit);
        const bool ny = !y.empty() && std::all_of(y.begin(), y.end(), ::isdigit);
        if (nx && ny) {
            const long long vx = std::stoll(x), vy = std::stoll(y);
            if (vx != vy) return vx < vy ? -1 : 1;
        } else if (x != y) {
            return x < y ? -1 : 1;
        }
    }
    return 0;
}

std::string normalize_package_name(const std::string& name) {
    std::string out = text::to_lower(text::trim(name));
    std::replace(out.begin(), out.end(), '_', '-');
    std::replace(out.begin(), out.end(), '.', '-');
    return out;
}

bool Requirement::satisfied_by(const std::string& version) const {
    for (const auto& c : clauses) {
        const int cmp = compare_versions(version, c.version);
        bool ok = true;
        if (c.op == "==") ok = cmp == 0;
        else if (c.op == "!=") ok = cmp != 0;
        else if (c.op == ">=") ok = cmp >= 0;
        else if (c.op == "<=") ok = cmp <= 0;
        else if (c.op == ">") ok = cmp > 0;
        else if (c.op == "<") ok = cmp < 0;
        if (!ok) return false;
    }
    return true;
}

std::string Requirement::to_string() const {
    std::string out = name;
    for (std::size_t i = 0; i < clauses.size(); ++i) {
        if (i) out += ",";
        out += clauses[i].op + clauses[i].version;
    }
    return out;
}

Requirement parse_requirement(const std::string& raw) {
    std::string spec = text::trim(raw);
    if (auto semi = spec.find(';'); semi != std::string::npos) spec = text::trim(spec.substr(0, semi));
    std::size_t i = 0;
    while (i < spec.size() && (std::isalnum(static_cast<unsigned char>(spec[i])) || spec[i] == '-' ||
                               spec[i] == '_' || spec[i] == '.'))
        ++i;
    Requirement req;
    req.name = normalize_package_name(spec.substr(0, i));
    if (req.name.empty()) throw std::invalid_argument("requirement without a name: " + raw);
    std::string rest = spec.substr(i);
    if (!rest.empty() && rest[0] == '[') {
        auto close = rest.find(']');
        rest = close == std::string::npos ? "" : rest.substr(close + 1);
    }
    for (auto& part : text::split(rest, ',')) {
        std::string clause = text::trim(part);
        if (clause.empty()) continue;
        std::string op;
        for (const char* candidate : {"==", "!=", ">=", "<=", "~=", ">", "<"}) {
            if (clause.rfind(candidate, 0) == 0) {
                op = candidate;
                break;
            }
        }
        if (op.empty()) throw std::invalid_argument("bad version clause in requirement: " + raw);
        std::string version = text::trim(clause.substr(op.size()));
        if (op == "~=") {
            // ~=X.Y means >=X.Y,==X.*; approximated as >=X.Y,<X+1
            auto parts = text::split(version, '.');
            req.clauses.push_back({">=", version});
            if (!parts.empty() && std::all_of(parts[0].begin(), parts[0].end(), ::isdigit) && !parts[0].empty())
                req.clauses.push_back({"<", std::to_string(std::stoll(parts[0]) + 1)});
            continue;
        }
        req.clauses.push_back({op, version});
    }
    return req;
}

// ---------------------------------------------------------------------------
// PackageIndex

PackageIndex PackageIndex::from_json(const json& registry) {
    PackageIndex idx;
    if (registry.is_null()) return idx;
    const json& packages = registry.contains("packages") ? registry.at("packages") : json::object();
    for (const auto& [raw_name, body] : packages.items()) {
        PackageInfo info;
        const std::string name = normalize_package_name(raw_name);
        const json& releases = body.contains("releases") ? body.at("releases") : json::object();
        if (releases.is_array()) {
            for (const auto& v : releases) info.releases[v.get<std::string>()] = ReleaseInfo{};
        } else {
            for (const auto& [version, rel] : releases.items()) {
                ReleaseInfo r;
                r.requires_ = rel.value("requires", std::vector<std::string>{});
                r.wheel = rel.value("wheel", true);
                r.build_seconds = rel.value("build_seconds", 90.0);
                r.install_seconds = rel.value("install_seconds", 3.0);
                r.needs = rel.value("needs", std::vector<std::string>{});
                info.releases[version] = std::move(r);
            }
        }
        info.modules = body.value("modules", std::vector<std::string>{});
        if (info.modules.empty()) {
            std::string module = name;
            std::replace(module.begin(), module.end(), '-', '_');
            info.modules.push_back(module);
        }
        idx.packages_[name] = std::move(info);
    }
    if (registry.contains("conflicts")) {
        for (const auto& pair : registry.at("conflicts")) {
            if (!pair.is_array() || pair.size() != 2)
                throw std::invalid_argument("registry conflicts must be pairs of package names");
            idx.conflicts_.emplace_back(normalize_package_name(pair[0].get<std::string>()),
                                        normalize_package_name(pair[1].get<std::string>()));
        }
    }
    return idx;
}

json PackageIndex::to_json() const {
    json packages = json::object();
    for (const auto& [name, info] : packages_) {
        json releases = json::object();
        for (const auto& [v, r] : info.releases) {
            releases[v] = {{"requires", r.requires_}, {"wheel", r.wheel}, {"build_seconds", r.build_seconds},
                           {"install_seconds", r.install_seconds}, {"needs", r.needs}};
        }
        packages[name] = {{"modules", info.modules}, {"releases", releases}};
    }
    json conflicts = json::array();
    for (const auto& [a, b] : conflicts_) conflicts.push_back({a, b});
    return {{"packages", packages}, {"conflicts", conflicts}};
}

void PackageIndex::add_package(const std::string& name, PackageInfo info) {
    packages_[normalize_package_name(name)] = std::move(info);
}

bool PackageIndex::has(const std::string& name) const { return packages_.count(normalize_package_name(name)) > 0; }

const PackageInfo* PackageIndex::find(const std::string& name) const {
    auto it = packages_.find(normalize_package_name(name));
    return it == packages_.end() ? nullptr : &it->second;
}

std::vector<std::string> PackageIndex::versions(const std::string& name) const {
    std::vector<std::string> out;
    if (const auto* info = find(name))
        for (const auto& [v, _] : info->releases) out.push_back(v);
    std::sort(out.begin(), out.end(), [](const std::string& a, const std::string& b) {
        return compare_versions(a, b) > 0;
    });
    return out;
}

const ReleaseInfo* PackageIndex::release(const std::string& name, const std::string& version) const {
    const auto* info = find(name);
    if (!info) return nullptr;
    auto it = info->releases.find(version);
    return it == info->releases.end() ? nullptr : &it->second;
}

std::optional<std::string> PackageIndex::provider_of_module(const std::string& module) const {
    for (const auto& [name, info] : packages_)
        if (std::find(info.modules.begin(), info.modules.end(), module) != info.modules.end()) return name;
    return std::nullopt;
}

std::vector<std::string> PackageIndex::modules_of(const std::string& name) const {
    const auto* info = find(name);
    return info ? info->modules : std::vector<std::string>{};
}

// ---------------------------------------------------------------------------
// resolver

namespace {

struct Constraint {
    Requirement req;
    std::string source;  // "The user requested x==1" or "pkg 1.0 depends on x==1"
    std::string root;    // user spec this constraint descends from
};

struct Failure {
    bool set = false;
    std::string message;
};

class Resolver {
public:
    Resolver(const PackageIndex& index, const ResolveRequest& request) : index_(index), request_(request) {}

    ResolveResult run() {
        ResolveResult out;
        std::vector<std::string> pending;
        std::map<std::string, std::vector<Constraint>> constraints;
        for (const auto& r : request_.requested) {
            const std::string spec = r.to_string();
            if (!index_.has(r.name)) {
                out.error = not_found(r, {});
                return out;
            }
            constraints[r.name].push_back({r, "The user requested " + spec, spec});
            if (std::find(pending.begin(), pending.end(), r.name) == pending.end()) pending.push_back(r.name);
        }
        std::map<std::string, std::string> assignment;
        std::map<std::string, std::string> roots;
        if (!search(pending, 0, assignment, constraints, roots)) {
            out.error = failure_.set ? failure_.message : "ERROR: ResolutionImpossible";
            return out;
        }

        double duration = 1.0;
        for (const auto& [name, version] : assignment) {
            auto inst = request_.installed.find(name);
            if (inst != request_.installed.end() && inst->second == version) continue;
            const ReleaseInfo* rel = index_.release(name, version);
            out.to_install[name] = version;
            if (!rel->wheel) {
                duration += rel->build_seconds;
                out.source_builds.push_back(name);
                for (const auto& fact : rel->needs) {
                    if (!request_.facts.count(fact)) {
                        out.to_install.clear();
                        out.duration = duration;
                        out.error = build_failure(name, version, fact);
                        return out;
                    }
                }
            }
            duration += rel->install_seconds;
        }
        out.duration = duration;
        out.ok = true;

        std::map<std::string, std::string> final_env = request_.installed;
        for (const auto& [n, v] : out.to_install) final_env[n] = v;
        for (const auto& [name, version] : final_env) {
            if (assignment.count(name)) continue;
            const ReleaseInfo* rel = index_.release(name, version);
            if (!rel) continue;
            for (const auto& spec : rel->requires_) {
                Requirement dep = parse_requirement(spec);
                auto have = final_env.find(dep.name);
                if (have == final_env.end()) {
                    out.broken_after.push_back(name + " " + version + " requires " + dep.name +
                                               ", which is not installed.");
                } else if (!dep.satisfied_by(have->second)) {
                    out.broken_after.push_back(name + " " + version + " requires " + dep.to_string() +
                                               ", but you have " + dep.name + " " + have->second +
                                               " which is incompatible.");
                }
            }
        }
        return out;
    }

private:
    static constexpr int kStepLimit = 20000;

    std::string not_found(const Requirement& r, const std::vector<std::string>& versions) const {
        std::string listed = versions.empty() ? "none" : text::join(versions, ", ");
        return "ERROR: Could not find a version that satisfies the requirement " + r.to_string() +
               " (from versions: " + listed + ")\nERROR: No matching distribution found for " + r.name;
    }

    static std::string build_failure(const std::string& name, const std::string& version, const std::string& fact) {
        std::string detail = fact == "compiler"
                                 ? "error: command 'gcc' failed: No such file or directory"
                                 : "error: required build dependency '" + fact + "' is not available";
        return "  Building wheel for " + name + " (pyproject.toml) did not run successfully.\n" +
               "  exit code: 1\n  building '" + name + "' extension version " + version + "\n  " + detail +
               "\n  ERROR: Failed building wheel for " + name + "\nERROR: Could not build wheels for " + name +
               ", which is required to install pyproject.toml-based projects";
    }

    void record_conflict(const std::string& name, const std::vector<Constraint>& cs, const std::string& extra = "",
                         const std::string& other = "") {
        if (failure_.set) return;
        failure_.set = true;
        std::vector<std::string> root_specs;
        for (const auto& c : cs)
            if (std::find(root_specs.begin(), root_specs.end(), c.root) == root_specs.end())
                root_specs.push_back(c.root);
        bool user_only = std::all_of(cs.begin(), cs.end(), [](const Constraint& c) {
            return c.source.rfind("The user requested", 0) == 0;
        });
        if (user_only && root_specs.size() == 1 && extra.empty()) {
            failure_.message = not_found(cs.front().req, index_.versions(name));
            return;
        }
        if (root_specs.empty()) root_specs.push_back(name);
        if (!other.empty()) root_specs.push_back(other);
        else if (root_specs.size() == 1) root_specs.push_back(name);
        std::string parties;
        for (std::size_t i = 0; i < root_specs.size(); ++i) {
            if (i > 0) parties += i + 1 == root_specs.size() ? " and " : ", ";
            parties += root_specs[i];
        }
        std::string msg = "ERROR: Cannot install " + parties +
                          " because these package versions have conflicting dependencies.\n\n"
                          "The conflict is caused by:\n";
        for (const auto& c : cs) msg += "    " + c.source + "\n";
        if (!extra.empty()) msg += "    " + extra + "\n";
        msg +=
            "\nTo fix this you could try to:\n"
            "1. loosen the range of package versions you've specified\n"
            "2. remove package versions to allow pip to attempt to solve the dependency conflict\n\n"
            "ERROR: ResolutionImpossible: for help visit "
            "https://pip.pypa.io/en/latest/topics/dependency-resolution/#dealing-with-dependency-conflicts";
        failure_.message = msg;
    }

    bool declared_conflict(const std::string& name, const std::map<std::string, std::string>& assignment,
                           std::string& other) const {
        for (const auto& [a, b] : index_.conflict_pairs()) {
            std::string partner;
            if (a == name) partner = b;
            else if (b == name) partner = a;
            else continue;
            if (assignment.count(partner) || request_.installed.count(partner)) {
                other = partner;
                return true;
            }
        }
        return false;
    }

    std::vector<std::string> candidates(const std::string& name) const {
        std::vector<std::string> out;
        auto inst = request_.installed.find(name);
        if (inst != request_.installed.end()) out.push_back(inst->second);
        auto versions = index_.versions(name);
        if (request_.prefer_binary) {
            std::stable_partition(versions.begin(), versions.end(), [&](const std::string& v) {
                return index_.release(name, v)->wheel;
            });
        }
        for (auto& v : versions)
            if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        return out;
    }

    bool search(std::vector<std::string> pending, std::size_t next, std::map<std::string, std::string>& assignment,
                std::map<std::string, std::vector<Constraint>> constraints, std::map<std::string, std::string>& roots) {
        if (++steps_ > kStepLimit) {
            if (!failure_.set) {
                failure_.set = true;
                failure_.message = "ERROR: ResolutionTooDeep: resolution took too many steps";
            }
            return false;
        }
        if (next >= pending.size()) return true;
        const std::string name = pending[next];
        if (assignment.count(name)) return search(pending, next + 1, assignment, constraints, roots);

        const auto& cs = constraints[name];
        std::string conflicting_partner;
        if (declared_conflict(name, assignment, conflicting_partner)) {
            auto held = assignment.count(conflicting_partner) ? assignment.at(conflicting_partner)
                                                              : request_.installed.at(conflicting_partner);
            record_conflict(name, cs, name + " is declared incompatible with " + conflicting_partner,
                            conflicting_partner + "==" + held);
            return false;
        }
        bool any_candidate = false;
        for (const auto& version : candidates(name)) {
            bool ok = std::all_of(cs.begin(), cs.end(), [&](const Constraint& c) { return c.req.satisfied_by(version); });
            if (!ok) continue;
            any_candidate = true;
            const std::string root = cs.empty() ? name : cs.front().root;

            auto next_constraints = constraints;
            auto next_pending = pending;
            bool consistent = true;
            if (!request_.no_deps) {
                for (const auto& spec : index_.release(name, version)->requires_) {
                    Requirement dep = parse_requirement(spec);
                    Constraint c{dep, name + " " + version + " depends on " + dep.to_string(), root};
                    if (!index_.has(dep.name)) {
                        if (!failure_.set) {
                            failure_.set = true;
                            failure_.message = not_found(dep, {});
                        }
                        consistent = false;
                        break;
                    }
                    auto assigned = assignment.find(dep.name);
                    next_constraints[dep.name].push_back(c);
                    if (assigned != assignment.end() && !dep.satisfied_by(assigned->second)) {
                        record_conflict(dep.name, next_constraints[dep.name]);
                        consistent = false;
                        break;
                    }
                    if (std::find(next_pending.begin(), next_pending.end(), dep.name) == next_pending.end())
                        next_pending.push_back(dep.name);
                }
            }
            if (!consistent) continue;
            assignment[name] = version;
            roots[name] = root;
            if (search(next_pending, next + 1, assignment, next_constraints, roots)) return true;
            assignment.erase(name);
            roots.erase(name);
        }
        if (!any_candidate) record_conflict(name, cs);
        return false;
    }

    const PackageIndex& index_;
    const ResolveRequest& request_;
    Failure failure_;
    int steps_ = 0;
};

}  // namespace

ResolveResult resolve(const PackageIndex& index, const ResolveRequest& request) {
    return Resolver(index, request).run();
}

}  // namespace evoconfig::sim
