#pragma once

// Main agent: bounded interactive configuration loop with strict context
// management, in-round repair injection and snapshot rollback.

#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/command_model.hpp"
#include "evoconfig/diagnosis.hpp"
#include "evoconfig/llm.hpp"
#include "evoconfig/sandbox.hpp"

namespace evoconfig {

struct SessionConfig {
    int t_max = 100;
    double wall_clock_budget = 7200.0;  // seconds, backend clock
    long long context_token_budget = 8000;
    double per_command_timeout = kDefaultCommandTimeout;
    bool use_prior = true;
    bool ablate_diagnosis = false;
};

inline constexpr long long kMinContextBudget = 1000;

/// Throws std::invalid_argument naming the offending field.
void validate(const SessionConfig& config);
nlohmann::json to_json(const SessionConfig& c);

struct TrajectoryEntry {
    int round = 0;
    ActionSet action;
    std::vector<ExecutionRecord> records;   // executed, in order (main commands and repairs)
    std::vector<DiagnosticReport> reports;  // one per record
    std::vector<AtomicCommand> skipped;     // not executed after a failure aborted the round
    std::optional<SnapshotId> snapshot;     // taken after this round
    std::optional<SnapshotId> rollback_to;  // rollback performed at the end of this round
    bool rolled_back = false;
    bool success = false;
    bool malformed = false;  // no parseable action after the retry

    bool operator==(const TrajectoryEntry&) const = default;
};

nlohmann::json to_json(const TrajectoryEntry& e);
TrajectoryEntry entry_from_json(const nlohmann::json& j);

enum class SessionStatus { solved, budget_exhausted, time_exhausted, aborted };
std::string to_string(SessionStatus s);
SessionStatus session_status_from_string(const std::string& s);

struct SessionOutcome {
    SessionStatus status = SessionStatus::aborted;
    int rounds_used = 0;
    std::vector<TrajectoryEntry> trajectory;
    UsageLedger usage;
    RuleSet final_ruleset;
    double elapsed = 0.0;
    std::string error;  // set when aborted
    std::string source;
};

nlohmann::json outcome_summary_json(const SessionOutcome& o);

// ---------------------------------------------------------------------------
// context

extern const char* const kAgentSystemPrompt;
inline constexpr const char* kPriorHeader = "## Repository prior";
inline constexpr const char* kNoPrior = "(no repository prior available)";
inline constexpr const char* kHistoryHeader = "## History";
inline constexpr const char* kReportsHeader = "## Latest round reports";
inline constexpr const char* kInstructionHeader = "## Instruction";

/// Context for the next model call. `latest_reports` belong to the last
/// trajectory entry; only they carry descriptions, everything older is
/// reduced to command texts and summary lines.
std::vector<ChatTurn> build_context(const std::vector<TrajectoryEntry>& trajectory, const std::string& prior_prompt,
                                    const std::vector<DiagnosticReport>& latest_reports, const SessionConfig& config);
std::vector<ChatTurn> build_context(const std::vector<TrajectoryEntry>& trajectory, const std::string& prior_prompt,
                                    const SessionConfig& config);

// ---------------------------------------------------------------------------
// policy

enum class DecisionKind { proceed, inject_repairs, rollback };
std::string to_string(DecisionKind k);

struct PolicyDecision {
    DecisionKind kind = DecisionKind::proceed;
    std::vector<AtomicCommand> repairs;
    std::optional<SnapshotId> target;
};

/// `trajectory` holds the rounds before the current one.
PolicyDecision apply_policy(const std::vector<DiagnosticReport>& reports,
                            const std::vector<TrajectoryEntry>& trajectory);

// ---------------------------------------------------------------------------
// session

class TrajectoryLog {
public:
    /// Lines go to `out`, which must outlive the log; flushed per line.
    explicit TrajectoryLog(std::ostream& out) : out_(&out) {}
    void header(const std::string& source, const SessionConfig& config, const std::string& prior_prompt,
                const RuleSet& seed);
    void round(const TrajectoryEntry& entry, const std::vector<int>& rolled_back_rounds, const UsageLedger& usage,
               double elapsed, long long rules_revision);
    void outcome(const SessionOutcome& outcome);

private:
    void write(const nlohmann::json& line);
    std::ostream* out_;
};

struct ParsedLog {
    nlohmann::json header;
    std::vector<TrajectoryEntry> trajectory;  // rollback marks applied
    std::optional<SessionStatus> status;
    nlohmann::json outcome;
};

/// Throws std::runtime_error on malformed lines.
ParsedLog parse_trajectory_log(std::istream& in);

SessionOutcome run_session(Backend& backend, LlmSession& model, const RuleSet& seed_rules,
                           const SessionConfig& config, TrajectoryLog* log = nullptr);

}  // namespace evoconfig
