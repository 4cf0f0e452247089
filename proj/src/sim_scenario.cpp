#include "evoconfig/sim_scenario.hpp"

#include <algorithm>
#include <fstream>

#include "evoconfig/sandbox.hpp"

namespace evoconfig::sim {

using nlohmann::json;

bool Effects::empty() const {
    return install.empty() && uninstall.empty() && set_facts.empty() && clear_facts.empty() && write.empty() &&
           remove.empty();
}

bool Scenario::has_tag(const std::string& tag) const {
    return std::find(tags.begin(), tags.end(), tag) != tags.end();
}

void validate_atom(const std::string& atom) {
    std::string a = atom;
    while (a.rfind("not:", 0) == 0) a = a.substr(4);
    if (a == "tests_launch") return;
    for (const char* prefix : {"installed:", "fact:", "file:", "importable:"}) {
        std::string p = prefix;
        if (a.rfind(p, 0) == 0 && a.size() > p.size()) return;
    }
    throw ScenarioInvalid("unknown predicate atom: " + atom);
}

namespace {

template <typename T>
T field(const json& obj, const char* key, T fallback, const std::string& where) {
    if (!obj.contains(key)) return fallback;
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw ScenarioInvalid(where + "." + key + ": " + e.what());
    }
}

Effects parse_effects(const json& j, const std::string& where) {
    Effects e;
    if (j.is_null()) return e;
    if (!j.is_object()) throw ScenarioInvalid(where + ": effects must be an object");
    const json install = field(j, "install", json::object(), where);
    for (const auto& [k, v] : install.items())
        e.install[normalize_package_name(k)] = v.get<std::string>();
    for (const auto& name : field(j, "uninstall", std::vector<std::string>{}, where))
        e.uninstall.push_back(normalize_package_name(name));
    e.set_facts = field(j, "set_facts", std::vector<std::string>{}, where);
    e.clear_facts = field(j, "clear_facts", std::vector<std::string>{}, where);
    e.write = field(j, "write", std::map<std::string, std::string>{}, where);
    e.remove = field(j, "remove", std::vector<std::string>{}, where);
    return e;
}

ProjectSpec parse_project(const json& j) {
    const std::string where = "project";
    if (!j.is_object()) throw ScenarioInvalid("project must be an object");
    ProjectSpec p;
    p.distribution = normalize_package_name(field<std::string>(j, "distribution", "", where));
    p.module = field<std::string>(j, "module", "", where);
    if (p.distribution.empty() || p.module.empty())
        throw ScenarioInvalid("project needs both distribution and module");
    p.layout = field<std::string>(j, "layout", "flat", where);
    if (p.layout != "flat" && p.layout != "src") throw ScenarioInvalid("project.layout must be flat or src");
    p.requires_ = field(j, "requires", std::vector<std::string>{}, where);
    for (const auto& r : p.requires_) {
        try {
            parse_requirement(r);
        } catch (const std::invalid_argument& e) {
            throw ScenarioInvalid(std::string("project.requires: ") + e.what());
        }
    }
    for (const auto& ext : field(j, "extensions", json::array(), where)) {
        ExtensionSpec x;
        x.name = field<std::string>(ext, "name", "", "project.extensions");
        x.needs = field(ext, "needs", std::vector<std::string>{}, "project.extensions");
        x.optional = field(ext, "optional", true, "project.extensions");
        x.fact = field<std::string>(ext, "fact", "", "project.extensions");
        if (x.name.empty()) throw ScenarioInvalid("project.extensions entries need a name");
        p.extensions.push_back(std::move(x));
    }
    p.test_imports = field(j, "test_imports", std::vector<std::string>{}, where);
    p.test_requires_facts = field(j, "test_requires_facts", std::vector<std::string>{}, where);
    p.test_count = field(j, "test_count", 0, where);
    p.test_seconds = field(j, "test_seconds", 2.0, where);
    p.build_seconds = field(j, "build_seconds", 5.0, where);
    return p;
}

}  // namespace

Scenario parse_scenario(const json& doc) {
    if (!doc.is_object()) throw ScenarioInvalid("scenario document must be an object");
    Scenario s;
    s.source = doc;
    s.name = field<std::string>(doc, "name", "", "scenario");
    if (s.name.empty()) throw ScenarioInvalid("scenario.name is required");
    const std::string where = "scenario " + s.name;
    s.tags = field(doc, "tags", std::vector<std::string>{}, where);
    s.expected_status = field<std::string>(doc, "expected_status", "", where);
    if (doc.contains("t_max")) {
        s.t_max = field(doc, "t_max", 0, where);
        if (*s.t_max < 1) throw ScenarioInvalid(where + ": t_max must be >= 1");
    }
    if (doc.contains("time_budget")) {
        s.time_budget = field(doc, "time_budget", 0.0, where);
        if (*s.time_budget <= 0) throw ScenarioInvalid(where + ": time_budget must be positive");
    }
    s.virtual_fs = field(doc, "virtual_fs", std::map<std::string, std::string>{}, where);
    try {
        s.registry = PackageIndex::from_json(doc.contains("registry") ? doc.at("registry") : json());
    } catch (const std::exception& e) {
        throw ScenarioInvalid(where + ": registry: " + e.what());
    }
    for (const auto& [k, v] : field(doc, "installed", std::map<std::string, std::string>{}, where))
        s.installed[normalize_package_name(k)] = v;
    for (const auto& f : field(doc, "facts", std::vector<std::string>{}, where)) s.facts.insert(f);
    if (doc.contains("project") && !doc.at("project").is_null()) s.project = parse_project(doc.at("project"));

    int index = 0;
    for (const auto& b : field(doc, "behaviors", json::array(), where)) {
        const std::string bw = where + ".behaviors[" + std::to_string(index++) + "]";
        Behavior beh;
        beh.match = field<std::string>(b, "match", "", bw);
        if (beh.match.empty()) throw ScenarioInvalid(bw + ": match is required");
        try {
            beh.pattern = std::regex(beh.match, std::regex::ECMAScript);
        } catch (const std::regex_error& e) {
            throw ScenarioInvalid(bw + ": bad regex: " + e.what());
        }
        beh.when = field(b, "when", std::vector<std::string>{}, bw);
        for (const auto& atom : beh.when) validate_atom(atom);
        beh.exit_code = field(b, "exit_code", 0, bw);
        beh.stdout_text = field<std::string>(b, "stdout", "", bw);
        beh.stderr_text = field<std::string>(b, "stderr", "", bw);
        beh.duration = field(b, "duration", 1.0, bw);
        if (beh.duration < 0) throw ScenarioInvalid(bw + ": duration must be non-negative");
        beh.effects = parse_effects(b.contains("effects") ? b.at("effects") : json(), bw);
        beh.max_fires = field(b, "max_fires", -1, bw);
        s.behaviors.push_back(std::move(beh));
    }
    s.builtins = field(doc, "builtins", false, where);
    s.solved_predicate = field(doc, "solved_predicate", std::vector<std::string>{}, where);
    if (s.solved_predicate.empty()) throw ScenarioInvalid(where + ": solved_predicate must not be empty");
    for (const auto& atom : s.solved_predicate) validate_atom(atom);
    s.solution = field(doc, "solution", std::vector<std::string>{}, where);
    for (const auto& a : field(doc, "annotations", json::array(), where)) {
        Annotation an;
        an.command_pattern = field<std::string>(a, "command_pattern", ".*", where + ".annotations");
        an.output_pattern = field<std::string>(a, "output_pattern", "", where + ".annotations");
        an.error_type = field<std::string>(a, "error_type", "", where + ".annotations");
        an.keywords = field(a, "keywords", std::vector<std::string>{}, where + ".annotations");
        an.fix_pattern = field<std::string>(a, "fix_pattern", "", where + ".annotations");
        if (an.error_type.empty()) throw ScenarioInvalid(where + ": annotation without error_type");
        s.annotations.push_back(std::move(an));
    }
    return s;
}

Scenario load_scenario(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ScenarioInvalid("cannot open scenario file: " + path.string());
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ScenarioInvalid("cannot parse scenario file " + path.string() + ": " + e.what());
    }
    return parse_scenario(doc);
}

}  // namespace evoconfig::sim
