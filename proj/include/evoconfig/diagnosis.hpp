#pragma once

// Expert diagnosis: three-state verdicts, evidence tools, structured
// reports, and the in-session self-evolving rule store.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/command_model.hpp"
#include "evoconfig/llm.hpp"
#include "evoconfig/sandbox.hpp"

namespace evoconfig {

inline constexpr std::size_t kDescriptionLimit = 400;
inline constexpr std::size_t kSummaryLimit = 160;
inline constexpr std::size_t kMaxToolsPerDiagnosis = 3;
inline constexpr std::size_t kMaxRulesInPrompt = 5;
inline constexpr std::size_t kDefaultRuleCap = 32;
inline constexpr int kReportSchemaVersion = 1;

enum class Verdict { success, failure, potential_risk };
enum class ErrorType {
    dependency_conflict,
    missing_dependency,
    toolchain_mismatch,
    missing_file,
    permission,
    network,
    timeout,
    syntax_or_usage,
    unknown
};
enum class RuleCategory { repair_suggestion, tool_creation, risk_assessment };
enum class ExitMatch { any, zero, nonzero };
enum class Feedback { repair_succeeded, repair_failed, risk_confirmed, risk_unfounded, none };

std::string to_string(Verdict v);
std::string to_string(ErrorType e);
std::string to_string(RuleCategory c);
std::string to_string(ExitMatch m);
std::string to_string(Feedback f);
Verdict verdict_from_string(const std::string& s);
ErrorType error_type_from_string(const std::string& s);
RuleCategory rule_category_from_string(const std::string& s);
ExitMatch exit_match_from_string(const std::string& s);
const std::vector<std::string>& error_type_names();

// ---------------------------------------------------------------------------
// rules

struct Trigger {
    std::string command_regex;  // searched in the command text; empty matches all
    ExitMatch exit = ExitMatch::any;
    std::string output_regex;   // searched line by line in stdout+stderr; empty matches all
    std::optional<ErrorType> error_type;

    bool operator==(const Trigger&) const = default;
};

struct Rule {
    std::string id;
    RuleCategory category = RuleCategory::repair_suggestion;
    Trigger trigger;
    std::string effect;  // template: {1}..{9} output captures, {cmd} command text
    double priority = 0.5;
    long long created = 0;  // creation sequence, for eviction ties

    bool operator==(const Rule&) const = default;
};

class RuleInvalid : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct RuleSet {
    std::vector<Rule> rules;
    std::size_t cap = kDefaultRuleCap;
    long long revision = 0;
    long long next_sequence = 0;
    int learned = 0;

    const Rule* find(const std::string& id) const;
    nlohmann::json to_json() const;
    /// Validates regexes, priorities and id uniqueness; throws RuleInvalid.
    static RuleSet from_json(const nlohmann::json& j);
    static RuleSet load(const std::filesystem::path& path);

    bool operator==(const RuleSet&) const = default;
};

struct RuleMatch {
    bool matched = false;
    std::vector<std::string> captures;  // captures[0] is the whole matching line
};

/// `error_type` is the classification the trigger is checked against; rules
/// with an error_type condition never match when it is nullopt.
RuleMatch match_rule(const Rule& rule, const ExecutionRecord& record, std::optional<ErrorType> error_type);
std::string expand_template(const std::string& tmpl, const std::vector<std::string>& captures,
                            const std::string& command);

// ---------------------------------------------------------------------------
// reports

struct Evidence {
    AtomicCommand tool{"true", CommandOrigin::expert_tool};
    ExecutionRecord record;

    bool operator==(const Evidence&) const = default;
};

struct DiagnosticReport {
    AtomicCommand command{"true"};
    Verdict verdict = Verdict::success;
    ErrorType error_type = ErrorType::unknown;
    std::string description;
    std::vector<AtomicCommand> repair_commands;
    std::vector<std::string> risk_suggestions;
    std::vector<Evidence> evidence;
    std::string summary;
    // extensions
    int exit_code = 0;
    std::string signature;
    std::vector<std::string> fired_rules;
    std::vector<std::string> repair_origins;  // per repair: rule id or "model"
    std::vector<std::string> rejected_tools;

    bool operator==(const DiagnosticReport&) const = default;
};

nlohmann::json to_json(const DiagnosticReport& r);
DiagnosticReport report_from_json(const nlohmann::json& j);

/// One line: verdict, error type unless success, repair and risk counts.
std::string summarize_for_context(const DiagnosticReport& report);

/// Keyword classification of a failed record (used before the model answers
/// and by the offline model).
ErrorType classify_failure_text(const ExecutionRecord& record);
/// The most informative error line of the output, or "".
std::string key_error_line(const ExecutionRecord& record);

// ---------------------------------------------------------------------------
// diagnosis pipeline

class ModelFormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct ModelVerdict {
    Verdict verdict = Verdict::failure;
    ErrorType error_type = ErrorType::unknown;
    std::string description;
    std::vector<std::string> repair_commands;
    std::vector<std::string> risk_suggestions;
};

/// Extracts the ```json block of an expert reply; throws ModelFormatError.
ModelVerdict parse_expert_reply(const std::string& reply);
std::string render_expert_reply(const ModelVerdict& v);

extern const char* const kExpertSystemPrompt;
std::string render_expert_prompt(const ExecutionRecord& record, const std::vector<Evidence>& evidence,
                                 const std::vector<const Rule*>& rules, ErrorType preliminary);

using ToolExecutor = std::function<ExecutionRecord(const AtomicCommand&)>;

DiagnosticReport diagnose(const ExecutionRecord& record, const RuleSet& rules, const ToolExecutor& tools,
                          LlmSession& model);

/// Ablation stand-in: verdict from the exit code only, no tools, no model.
DiagnosticReport static_diagnose(const ExecutionRecord& record);

/// Applies one feedback signal. `repair_index` narrows repair feedback to
/// the rule behind that repair; without it every repair-sourcing rule counts.
RuleSet evolve_rules(const RuleSet& rules, const DiagnosticReport& report, Feedback feedback,
                     std::optional<std::size_t> repair_index = std::nullopt);

}  // namespace evoconfig
