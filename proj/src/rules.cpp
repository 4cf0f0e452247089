#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <regex>
#include <set>

#include "evoconfig/diagnosis.hpp"
#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

namespace {

template <typename E>
E lookup_enum(const std::vector<std::pair<E, const char*>>& table, const std::string& s, const char* what) {
    for (const auto& [e, name] : table)
        if (s == name) return e;
    throw std::invalid_argument(std::string("unknown ") + what + ": " + s);
}

template <typename E>
std::string enum_name(const std::vector<std::pair<E, const char*>>& table, E e) {
    for (const auto& [v, name] : table)
        if (v == e) return name;
    return "unknown";
}

const std::vector<std::pair<Verdict, const char*>> kVerdicts = {
    {Verdict::success, "success"}, {Verdict::failure, "failure"}, {Verdict::potential_risk, "potential_risk"}};
const std::vector<std::pair<ErrorType, const char*>> kErrorTypes = {
    {ErrorType::dependency_conflict, "dependency_conflict"},
    {ErrorType::missing_dependency, "missing_dependency"},
    {ErrorType::toolchain_mismatch, "toolchain_mismatch"},
    {ErrorType::missing_file, "missing_file"},
    {ErrorType::permission, "permission"},
    {ErrorType::network, "network"},
    {ErrorType::timeout, "timeout"},
    {ErrorType::syntax_or_usage, "syntax_or_usage"},
    {ErrorType::unknown, "unknown"}};
const std::vector<std::pair<RuleCategory, const char*>> kCategories = {
    {RuleCategory::repair_suggestion, "repair_suggestion"},
    {RuleCategory::tool_creation, "tool_creation"},
    {RuleCategory::risk_assessment, "risk_assessment"}};
const std::vector<std::pair<ExitMatch, const char*>> kExits = {
    {ExitMatch::any, "any"}, {ExitMatch::zero, "zero"}, {ExitMatch::nonzero, "nonzero"}};
const std::vector<std::pair<Feedback, const char*>> kFeedback = {{Feedback::repair_succeeded, "repair_succeeded"},
                                                                 {Feedback::repair_failed, "repair_failed"},
                                                                 {Feedback::risk_confirmed, "risk_confirmed"},
                                                                 {Feedback::risk_unfounded, "risk_unfounded"},
                                                                 {Feedback::none, "none"}};

// Compiled patterns are cached; rule regexes are few and reused constantly.
const std::regex& cached_regex(const std::string& pattern) {
    static std::mutex mu;
    static std::map<std::string, std::regex> cache;
    std::lock_guard lock(mu);
    auto it = cache.find(pattern);
    if (it == cache.end()) it = cache.emplace(pattern, std::regex(pattern, std::regex::ECMAScript)).first;
    return it->second;
}

double clamp_priority(double p) {
    p = std::clamp(p, 0.0, 1.0);
    return std::round(p * 1e9) / 1e9;
}

constexpr std::size_t kMaxMatchLine = 2000;

}  // namespace

std::string to_string(Verdict v) { return enum_name(kVerdicts, v); }
std::string to_string(ErrorType e) { return enum_name(kErrorTypes, e); }
std::string to_string(RuleCategory c) { return enum_name(kCategories, c); }
std::string to_string(ExitMatch m) { return enum_name(kExits, m); }
std::string to_string(Feedback f) { return enum_name(kFeedback, f); }
Verdict verdict_from_string(const std::string& s) { return lookup_enum(kVerdicts, s, "verdict"); }
ErrorType error_type_from_string(const std::string& s) { return lookup_enum(kErrorTypes, s, "error_type"); }
RuleCategory rule_category_from_string(const std::string& s) { return lookup_enum(kCategories, s, "rule category"); }
ExitMatch exit_match_from_string(const std::string& s) { return lookup_enum(kExits, s, "exit match"); }

const std::vector<std::string>& error_type_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> v;
        for (const auto& [_, n] : kErrorTypes) v.push_back(n);
        return v;
    }();
    return names;
}

// ---------------------------------------------------------------------------

const Rule* RuleSet::find(const std::string& id) const {
    for (const auto& r : rules)
        if (r.id == id) return &r;
    return nullptr;
}

json RuleSet::to_json() const {
    json arr = json::array();
    for (const auto& r : rules) {
        json trig = {{"command", r.trigger.command_regex},
                     {"exit", evoconfig::to_string(r.trigger.exit)},
                     {"output", r.trigger.output_regex}};
        if (r.trigger.error_type) trig["error_type"] = evoconfig::to_string(*r.trigger.error_type);
        arr.push_back({{"id", r.id},
                       {"category", evoconfig::to_string(r.category)},
                       {"trigger", trig},
                       {"effect", r.effect},
                       {"priority", r.priority},
                       {"created", r.created}});
    }
    return {{"version", 1}, {"cap", cap}, {"revision", revision}, {"learned", learned}, {"rules", arr}};
}

RuleSet RuleSet::from_json(const json& j) {
    RuleSet rs;
    try {
        rs.cap = j.value("cap", kDefaultRuleCap);
        rs.revision = j.value("revision", 0LL);
        rs.learned = j.value("learned", 0);
        if (rs.cap < 1) throw RuleInvalid("rule cap must be >= 1");
        std::set<std::string> ids;
        long long seq = 0;
        for (const auto& r : j.at("rules")) {
            Rule rule;
            rule.id = r.at("id").get<std::string>();
            if (rule.id.empty() || !ids.insert(rule.id).second) throw RuleInvalid("duplicate or empty rule id: " + rule.id);
            rule.category = rule_category_from_string(r.at("category").get<std::string>());
            const json& t = r.at("trigger");
            rule.trigger.command_regex = t.value("command", "");
            rule.trigger.exit = exit_match_from_string(t.value("exit", "any"));
            rule.trigger.output_regex = t.value("output", "");
            if (t.contains("error_type") && !t["error_type"].is_null())
                rule.trigger.error_type = error_type_from_string(t["error_type"].get<std::string>());
            for (const auto& pat : {rule.trigger.command_regex, rule.trigger.output_regex}) {
                try {
                    cached_regex(pat);
                } catch (const std::regex_error& e) {
                    throw RuleInvalid("rule " + rule.id + ": bad regex '" + pat + "': " + e.what());
                }
            }
            rule.effect = r.at("effect").get<std::string>();
            if (rule.effect.empty()) throw RuleInvalid("rule " + rule.id + " has an empty effect");
            rule.priority = r.value("priority", 0.5);
            if (!(rule.priority >= 0.0 && rule.priority <= 1.0))
                throw RuleInvalid("rule " + rule.id + ": priority outside [0, 1]");
            rule.created = r.value("created", seq);
            seq = std::max(seq, rule.created) + 1;
            rs.rules.push_back(std::move(rule));
        }
        rs.next_sequence = std::max(j.value("next_sequence", 0LL), seq);
        if (rs.rules.size() > rs.cap) throw RuleInvalid("more rules than the cap allows");
    } catch (const json::exception& e) {
        throw RuleInvalid(std::string("malformed rule set: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw RuleInvalid(e.what());
    }
    return rs;
}

RuleSet RuleSet::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw RuleInvalid("cannot open rule set: " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::parse_error& e) {
        throw RuleInvalid("cannot parse rule set " + path.string() + ": " + e.what());
    }
}

RuleMatch match_rule(const Rule& rule, const ExecutionRecord& record, std::optional<ErrorType> error_type) {
    RuleMatch m;
    const Trigger& t = rule.trigger;
    const bool nonzero = record.exit_code != 0 || record.timed_out;
    if (t.exit == ExitMatch::zero && nonzero) return m;
    if (t.exit == ExitMatch::nonzero && !nonzero) return m;
    if (t.error_type && (!error_type || *error_type != *t.error_type)) return m;
    if (!t.command_regex.empty() && !std::regex_search(record.command.text(), cached_regex(t.command_regex))) return m;
    if (t.output_regex.empty()) {
        m.matched = true;
        return m;
    }
    const std::regex& re = cached_regex(t.output_regex);
    for (const auto& raw : text::split_lines(record.combined_output())) {
        const std::string line = raw.size() > kMaxMatchLine ? raw.substr(0, kMaxMatchLine) : raw;
        std::smatch sm;
        if (std::regex_search(line, sm, re)) {
            m.matched = true;
            for (std::size_t i = 0; i < sm.size(); ++i) m.captures.push_back(i == 0 ? line : sm[i].str());
            return m;
        }
    }
    return m;
}

std::string expand_template(const std::string& tmpl, const std::vector<std::string>& captures,
                            const std::string& command) {
    std::string out;
    for (std::size_t i = 0; i < tmpl.size(); ++i) {
        if (tmpl[i] == '{') {
            auto close = tmpl.find('}', i);
            if (close != std::string::npos) {
                std::string key = tmpl.substr(i + 1, close - i - 1);
                if (key == "cmd") {
                    out += command;
                    i = close;
                    continue;
                }
                if (key.size() == 1 && key[0] >= '1' && key[0] <= '9') {
                    std::size_t idx = static_cast<std::size_t>(key[0] - '0');
                    out += idx < captures.size() ? captures[idx] : "";
                    i = close;
                    continue;
                }
            }
        }
        out += tmpl[i];
    }
    return out;
}

// ---------------------------------------------------------------------------
// evolution

namespace {

bool adjust(RuleSet& rs, const std::string& id, double delta) {
    for (auto& r : rs.rules) {
        if (r.id != id) continue;
        double p = clamp_priority(r.priority + delta);
        if (p == r.priority) return false;
        r.priority = p;
        return true;
    }
    return false;
}

bool synthesize(RuleSet& rs, const DiagnosticReport& report, const AtomicCommand& repair) {
    const std::string key = text::trim(report.signature.substr(report.signature.find(':') + 1));
    if (key.empty()) return false;
    const std::string& cmd = report.command.text();
    std::string effect = text::replace_all(repair.text(), cmd, "{cmd}");
    if (effect == "{cmd}") return false;  // a plain retry carries no repair knowledge
    auto words = text::shell_words(cmd);
    std::string head = words.empty() ? "" : words[0];
    if (words.size() > 1 && words[1].rfind("-", 0) != 0) head += " " + words[1];

    Rule rule;
    rule.category = RuleCategory::repair_suggestion;
    rule.trigger.command_regex = head.empty() ? "" : "^" + text::regex_escape(head);
    rule.trigger.exit = ExitMatch::nonzero;
    rule.trigger.output_regex = text::regex_escape(key);
    if (report.error_type != ErrorType::unknown) rule.trigger.error_type = report.error_type;
    rule.effect = effect;
    for (const auto& r : rs.rules)
        if (r.category == rule.category && r.trigger == rule.trigger && r.effect == rule.effect) return false;
    rs.learned += 1;
    rule.id = "learned-" + std::to_string(rs.learned);
    rule.priority = 0.5;
    rule.created = rs.next_sequence++;
    rs.rules.push_back(std::move(rule));
    return true;
}

void evict(RuleSet& rs) {
    while (rs.rules.size() > rs.cap) {
        auto victim = std::min_element(rs.rules.begin(), rs.rules.end(), [](const Rule& a, const Rule& b) {
            if (a.priority != b.priority) return a.priority < b.priority;
            return a.created < b.created;
        });
        rs.rules.erase(victim);
    }
}

}  // namespace

RuleSet evolve_rules(const RuleSet& rules, const DiagnosticReport& report, Feedback feedback,
                     std::optional<std::size_t> repair_index) {
    RuleSet out = rules;
    bool changed = false;
    switch (feedback) {
        case Feedback::none:
            return out;
        case Feedback::repair_succeeded:
        case Feedback::repair_failed: {
            const bool good = feedback == Feedback::repair_succeeded;
            std::vector<std::size_t> indices;
            if (repair_index) {
                if (*repair_index < report.repair_commands.size()) indices.push_back(*repair_index);
            } else {
                for (std::size_t i = 0; i < report.repair_commands.size(); ++i) indices.push_back(i);
            }
            std::set<std::string> adjusted;
            for (auto i : indices) {
                const std::string origin = i < report.repair_origins.size() ? report.repair_origins[i] : "model";
                if (origin != "model") {
                    if (adjusted.insert(origin).second) changed |= adjust(out, origin, good ? 0.1 : -0.2);
                } else if (good) {
                    changed |= synthesize(out, report, report.repair_commands[i]);
                }
            }
            break;
        }
        case Feedback::risk_confirmed:
        case Feedback::risk_unfounded:
            for (const auto& id : report.fired_rules) {
                const Rule* r = out.find(id);
                if (r && r->category == RuleCategory::risk_assessment)
                    changed |= adjust(out, id, feedback == Feedback::risk_confirmed ? 0.1 : -0.1);
            }
            break;
    }
    evict(out);
    // A synthesized rule can be evicted straight away; only a changed list counts.
    if (changed && out.rules != rules.rules) out.revision = rules.revision + 1;
    return out;
}

}  // namespace evoconfig
