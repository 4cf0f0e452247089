#include "evoconfig/diagnosis.hpp"

#include <algorithm>
#include <regex>
#include <set>

#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

const char* const kExpertSystemPrompt =
    "You are the diagnosis expert of a build-environment configuration system.\n"
    "You receive one executed shell command with its exit code and output, optional evidence gathered by "
    "read-only diagnostic tools, and the highest-priority matching rules.\n"
    "Classify the action as success, failure or potential_risk. Use one error_type from: dependency_conflict, "
    "missing_dependency, toolchain_mismatch, missing_file, permission, network, timeout, syntax_or_usage, unknown.\n"
    "Repair commands must be single-line shell commands that can run in the same environment, in order.\n"
    "Answer with exactly one ```json block holding an object with the keys verdict, error_type, description, "
    "repair_commands, risk_suggestions.";

namespace {

constexpr std::size_t kPromptStreamTail = 3000;
constexpr std::size_t kPromptEvidenceTail = 1500;
constexpr std::size_t kDigestLimit = 360;
constexpr double kToolTimeout = 60.0;

std::string tail(const std::string& s, std::size_t n) {
    bool clipped = false;
    std::string t = text::keep_tail(s, n, clipped);
    return clipped ? "[...]" + t : t;
}

struct KeywordRule {
    ErrorType type;
    std::vector<const char*> needles;
};

const std::vector<KeywordRule>& keyword_table() {
    static const std::vector<KeywordRule> table = {
        {ErrorType::dependency_conflict,
         {"conflicting dependencies", "ResolutionImpossible", "declared incompatible", "dependency conflict"}},
        {ErrorType::toolchain_mismatch,
         {"command 'gcc' failed", "gcc: not found", "command 'cc' failed", "Failed building wheel",
          "Could not build wheels", "Failed building editable", "compiler"}},
        {ErrorType::network,
         {"ReadTimeoutError", "Read timed out", "ConnectionError", "Connection reset", "name resolution",
          "Network is unreachable"}},
        {ErrorType::missing_dependency,
         {"No module named", "No matching distribution", "Could not find a version", "ImportError",
          "cannot import name", ": not found"}},
        {ErrorType::missing_file,
         {"No such file or directory", "Could not open requirements file", "does not appear to be a Python project",
          "could not find a pyproject.toml"}},
        {ErrorType::permission, {"Permission denied", "EACCES", "Operation not permitted"}},
        {ErrorType::syntax_or_usage,
         {"invalid command", "usage:", "unrecognized arguments", "SyntaxError", "Invalid requirement",
          "unknown command", "does not exist", "no such option"}},
    };
    return table;
}

const std::vector<std::regex>& key_line_patterns() {
    static const std::vector<std::regex> pats = [] {
        std::vector<std::regex> v;
        for (const char* p : {R"(^ERROR: (Cannot install|Could not|No matching|ResolutionImpossible))",
                              R"((ModuleNotFoundError|ImportError|cannot import name))",
                              R"(error: command '[^']+' failed)", R"(ReadTimeoutError|Read timed out)",
                              R"(^Killed|Killed$|Out of memory)", R"(timed out)", R"(^ERROR)", R"(Error)",
                              R"([Ee]rror:)", R"(not found)"})
            v.emplace_back(p);
        return v;
    }();
    return pats;
}

std::vector<std::string> dedupe(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    std::set<std::string> seen;
    for (const auto& i : items)
        if (seen.insert(i).second) out.push_back(i);
    return out;
}

bool is_marker_path(const std::string& line) {
    static const std::regex re(
        R"(^(\./)?([\w.-]+/)*(requirements[\w.-]*\.txt|setup\.py|setup\.cfg|pyproject\.toml|poetry\.lock|)"
        R"(environment\.ya?ml|__init__\.py|conftest\.py|pytest\.ini|tox\.ini|test_[\w]+\.py)$)");
    return std::regex_match(line, re);
}

// Read-only output is never quoted; a listing is reduced to the paths that
// tell the agent how the project is built.
std::string success_description(const ExecutionRecord& record) {
    if (classify_command(record.command) != CommandClass::read_only) return "exit 0";
    std::vector<std::string> markers;
    for (const auto& line : text::split_lines(record.stdout_text)) {
        std::string t = text::trim(line);
        if (t.size() < 256 && is_marker_path(t)) markers.push_back(t.rfind("./", 0) == 0 ? t.substr(2) : t);
    }
    if (markers.empty()) return "exit 0";
    return "exit 0; project files: " + text::clip(text::join(markers, ", "), kDigestLimit);
}

void finalize(DiagnosticReport& r, const ExecutionRecord& record) {
    r.exit_code = record.exit_code;
    if (r.verdict != Verdict::failure) {
        r.repair_commands.clear();
        r.repair_origins.clear();
    }
    if (r.verdict == Verdict::failure && text::trim(r.description).empty())
        r.description = "exit code " + std::to_string(record.exit_code);
    r.description = text::clip(text::single_line(r.description), kDescriptionLimit);
    r.signature = to_string(r.error_type) + ":" + key_error_line(record);
    r.summary = summarize_for_context(r);
}

std::vector<const Rule*> matching(const RuleSet& rules, const ExecutionRecord& record,
                                  std::optional<ErrorType> type, std::optional<RuleCategory> category,
                                  std::vector<std::vector<std::string>>* captures = nullptr) {
    std::vector<std::pair<const Rule*, std::vector<std::string>>> hits;
    for (const auto& r : rules.rules) {
        if (category && r.category != *category) continue;
        RuleMatch m = match_rule(r, record, type);
        if (m.matched) hits.emplace_back(&r, std::move(m.captures));
    }
    std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) {
        if (a.first->priority != b.first->priority) return a.first->priority > b.first->priority;
        return a.first->created < b.first->created;
    });
    std::vector<const Rule*> out;
    for (auto& [r, c] : hits) {
        out.push_back(r);
        if (captures) captures->push_back(std::move(c));
    }
    return out;
}

}  // namespace

ErrorType classify_failure_text(const ExecutionRecord& record) {
    if (record.timed_out) return ErrorType::timeout;
    if (record.exit_code == 0) return ErrorType::unknown;
    const std::string out = record.combined_output();
    for (const auto& row : keyword_table())
        for (const char* needle : row.needles)
            if (text::contains(out, needle)) return row.type;
    if (record.exit_code == 127) return ErrorType::missing_dependency;
    return ErrorType::unknown;
}

std::string key_error_line(const ExecutionRecord& record) {
    const auto lines = text::split_lines(record.combined_output());
    for (const auto& re : key_line_patterns()) {
        for (const auto& raw : lines) {
            std::string line = text::trim(raw.size() > 2000 ? raw.substr(0, 2000) : raw);
            if (!line.empty() && std::regex_search(line, re)) return text::clip(line, 200);
        }
    }
    return "";
}

std::string summarize_for_context(const DiagnosticReport& report) {
    std::string s = to_string(report.verdict);
    if (report.verdict != Verdict::success) s += " | " + to_string(report.error_type);
    s += " | repairs=" + std::to_string(report.repair_commands.size());
    s += " | risks=" + std::to_string(report.risk_suggestions.size());
    return text::clip(s, kSummaryLimit);
}

json to_json(const DiagnosticReport& r) {
    json evidence = json::array();
    for (const auto& e : r.evidence) evidence.push_back({{"tool", e.tool.text()}, {"record", to_json(e.record)}});
    json repairs = json::array();
    for (const auto& c : r.repair_commands) repairs.push_back(c.text());
    return {{"version", kReportSchemaVersion},
            {"command", r.command.text()},
            {"command_origin", to_string(r.command.origin())},
            {"command_timeout", r.command.timeout()},
            {"verdict", to_string(r.verdict)},
            {"error_type", to_string(r.error_type)},
            {"description", r.description},
            {"repair_commands", repairs},
            {"risk_suggestions", r.risk_suggestions},
            {"evidence", evidence},
            {"summary", r.summary},
            {"exit_code", r.exit_code},
            {"signature", r.signature},
            {"fired_rules", r.fired_rules},
            {"repair_origins", r.repair_origins},
            {"rejected_tools", r.rejected_tools}};
}

DiagnosticReport report_from_json(const json& j) {
    DiagnosticReport r;
    const double timeout = j.value("command_timeout", kDefaultCommandTimeout);
    r.command = AtomicCommand(j.at("command").get<std::string>(),
                              command_origin_from_string(j.value("command_origin", "main_agent")), timeout);
    r.verdict = verdict_from_string(j.at("verdict").get<std::string>());
    r.error_type = error_type_from_string(j.at("error_type").get<std::string>());
    r.description = j.value("description", "");
    for (const auto& c : j.value("repair_commands", std::vector<std::string>{}))
        r.repair_commands.emplace_back(c, CommandOrigin::expert_repair, timeout);
    r.risk_suggestions = j.value("risk_suggestions", std::vector<std::string>{});
    for (const auto& e : j.value("evidence", json::array())) {
        Evidence ev;
        ev.tool = AtomicCommand(e.at("tool").get<std::string>(), CommandOrigin::expert_tool, kToolTimeout);
        ev.record = record_from_json(e.at("record"));
        r.evidence.push_back(std::move(ev));
    }
    r.summary = j.value("summary", "");
    r.exit_code = j.value("exit_code", 0);
    r.signature = j.value("signature", "");
    r.fired_rules = j.value("fired_rules", std::vector<std::string>{});
    r.repair_origins = j.value("repair_origins", std::vector<std::string>{});
    r.rejected_tools = j.value("rejected_tools", std::vector<std::string>{});
    return r;
}

// ---------------------------------------------------------------------------
// model exchange

ModelVerdict parse_expert_reply(const std::string& reply) {
    std::string body;
    auto open = reply.find("```json");
    if (open != std::string::npos) {
        auto start = reply.find('\n', open);
        auto close = start == std::string::npos ? start : reply.find("```", start);
        if (close == std::string::npos) throw ModelFormatError("unterminated ```json block");
        body = reply.substr(start + 1, close - start - 1);
    } else {
        auto first = reply.find('{');
        auto last = reply.rfind('}');
        if (first == std::string::npos || last == std::string::npos || last < first)
            throw ModelFormatError("no ```json block in expert reply");
        body = reply.substr(first, last - first + 1);
    }
    ModelVerdict v;
    try {
        json j = json::parse(body);
        v.verdict = verdict_from_string(j.at("verdict").get<std::string>());
        v.error_type = error_type_from_string(j.value("error_type", "unknown"));
        v.description = j.value("description", "");
        v.repair_commands = j.value("repair_commands", std::vector<std::string>{});
        v.risk_suggestions = j.value("risk_suggestions", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw ModelFormatError(std::string("bad verdict block: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ModelFormatError(std::string("bad verdict block: ") + e.what());
    }
    return v;
}

std::string render_expert_reply(const ModelVerdict& v) {
    json j = {{"verdict", to_string(v.verdict)},
              {"error_type", to_string(v.error_type)},
              {"description", v.description},
              {"repair_commands", v.repair_commands},
              {"risk_suggestions", v.risk_suggestions}};
    return "```json\n" + j.dump(2) + "\n```\n";
}

std::string render_expert_prompt(const ExecutionRecord& record, const std::vector<Evidence>& evidence,
                                 const std::vector<const Rule*>& rules, ErrorType preliminary) {
    std::string p;
    p += "## Command\n" + record.command.text() + "\n";
    p += "## Exit code\n" + std::to_string(record.exit_code) + (record.timed_out ? " (timed out)" : "") + "\n";
    p += "## Stdout\n" + tail(record.stdout_text, kPromptStreamTail) + "\n";
    p += "## Stderr\n" + tail(record.stderr_text, kPromptStreamTail) + "\n";
    p += "## Evidence\n";
    if (evidence.empty()) p += "(none)\n";
    for (const auto& e : evidence) {
        p += "### " + e.tool.text() + " (exit " + std::to_string(e.record.exit_code) + ")\n";
        p += tail(e.record.combined_output(), kPromptEvidenceTail) + "\n";
    }
    p += "## Matching rules\n";
    if (rules.empty()) p += "(none)\n";
    for (const auto* r : rules) {
        char pr[16];
        std::snprintf(pr, sizeof(pr), "%.2f", r->priority);
        p += "- [" + r->id + "] " + to_string(r->category) + " p=" + pr + ": " + r->effect + "\n";
    }
    p += "## Preliminary classification\n" + to_string(preliminary) + "\n";
    return p;
}

// ---------------------------------------------------------------------------
// pipeline

DiagnosticReport diagnose(const ExecutionRecord& record, const RuleSet& rules, const ToolExecutor& tools,
                          LlmSession& model) {
    DiagnosticReport r;
    r.command = record.command;
    const std::string& cmd = record.command.text();
    const bool exit_ok = record.exit_code == 0 && !record.timed_out;

    std::vector<std::vector<std::string>> risk_caps;
    auto risks = matching(rules, record, std::nullopt, RuleCategory::risk_assessment, &risk_caps);
    if (exit_ok && risks.empty()) {
        r.verdict = Verdict::success;
        r.description = success_description(record);
        finalize(r, record);
        return r;
    }

    const ErrorType preliminary = classify_failure_text(record);

    std::vector<std::vector<std::string>> tool_caps;
    auto tool_rules = matching(rules, record, preliminary, RuleCategory::tool_creation, &tool_caps);
    std::set<std::string> tried;
    for (std::size_t i = 0; i < tool_rules.size() && r.evidence.size() < kMaxToolsPerDiagnosis; ++i) {
        const std::string text = expand_template(tool_rules[i]->effect, tool_caps[i], cmd);
        if (!tried.insert(text).second) continue;
        std::optional<AtomicCommand> tool;
        try {
            tool.emplace(text, CommandOrigin::expert_tool, kToolTimeout);
        } catch (const std::invalid_argument&) {
            r.rejected_tools.push_back(text::single_line(text) + ": not_single_line");
            continue;
        }
        if (auto rejection = validate_tool_command(*tool)) {
            r.rejected_tools.push_back(text + ": " + to_string(*rejection));
            continue;
        }
        ExecutionRecord ev = tools(*tool);
        r.evidence.push_back(Evidence{*tool, ev});
        r.fired_rules.push_back(tool_rules[i]->id);
    }

    auto prompt_rules = matching(rules, record, preliminary, std::nullopt);
    if (prompt_rules.size() > kMaxRulesInPrompt) prompt_rules.resize(kMaxRulesInPrompt);
    std::vector<ChatTurn> messages = {{Role::system, kExpertSystemPrompt},
                                      {Role::user, render_expert_prompt(record, r.evidence, prompt_rules, preliminary)}};
    ModelVerdict mv;
    bool parsed = false;
    Completion first = model.complete(messages);
    try {
        mv = parse_expert_reply(first.reply.content);
        parsed = true;
    } catch (const ModelFormatError& e) {
        messages.push_back(first.reply);
        messages.push_back({Role::user, std::string("Your reply could not be parsed (") + e.what() +
                                            "). Answer again with exactly one ```json block."});
        Completion second = model.complete(messages);
        try {
            mv = parse_expert_reply(second.reply.content);
            parsed = true;
        } catch (const ModelFormatError&) {
        }
    }
    if (!parsed) {
        mv = ModelVerdict{};
        mv.verdict = Verdict::failure;
        mv.error_type = ErrorType::unknown;
        mv.description = "expert reply unparseable; exit code " + std::to_string(record.exit_code);
    }

    r.verdict = mv.verdict;
    r.error_type = mv.error_type;
    r.description = mv.description;
    if (record.timed_out) {
        r.verdict = Verdict::failure;
        r.error_type = ErrorType::timeout;
    }
    if (exit_ok && !risks.empty() && r.verdict == Verdict::success) r.verdict = Verdict::potential_risk;
    if (r.verdict == Verdict::success) r.error_type = ErrorType::unknown;

    if (r.verdict == Verdict::failure && parsed) {
        std::vector<std::vector<std::string>> repair_caps;
        auto repair_rules = matching(rules, record, r.error_type, RuleCategory::repair_suggestion, &repair_caps);
        std::vector<std::pair<std::string, std::string>> candidates;  // text, origin
        for (std::size_t i = 0; i < repair_rules.size(); ++i)
            candidates.emplace_back(expand_template(repair_rules[i]->effect, repair_caps[i], cmd), repair_rules[i]->id);
        for (const auto& m : mv.repair_commands) candidates.emplace_back(m, "model");
        std::set<std::string> seen;
        for (const auto& [text, origin] : candidates) {
            if (!seen.insert(text::trim(text)).second) continue;
            try {
                r.repair_commands.emplace_back(text, CommandOrigin::expert_repair, record.command.timeout());
            } catch (const std::invalid_argument&) {
                continue;
            }
            r.repair_origins.push_back(origin);
            if (origin != "model" &&
                std::find(r.fired_rules.begin(), r.fired_rules.end(), origin) == r.fired_rules.end())
                r.fired_rules.push_back(origin);
        }
    }

    std::vector<std::string> suggestions;
    if (exit_ok) {
        for (std::size_t i = 0; i < risks.size(); ++i) {
            suggestions.push_back(expand_template(risks[i]->effect, risk_caps[i], cmd));
            r.fired_rules.push_back(risks[i]->id);
        }
    }
    for (const auto& s : mv.risk_suggestions) suggestions.push_back(s);
    r.risk_suggestions = dedupe(suggestions);

    finalize(r, record);
    return r;
}

DiagnosticReport static_diagnose(const ExecutionRecord& record) {
    DiagnosticReport r;
    r.command = record.command;
    const bool ok = record.exit_code == 0 && !record.timed_out;
    r.verdict = ok ? Verdict::success : Verdict::failure;
    r.error_type = record.timed_out ? ErrorType::timeout : ErrorType::unknown;
    r.description = "exit code " + std::to_string(record.exit_code);
    finalize(r, record);
    return r;
}

}  // namespace evoconfig
