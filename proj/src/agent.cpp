#include "evoconfig/agent.hpp"

#include <algorithm>
#include <regex>
#include <stdexcept>

#include "evoconfig/repo_prior.hpp"
#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

const char* const kAgentSystemPrompt =
    "You are the configuration agent of a build-environment configuration system.\n"
    "Goal: make the repository's test suite launch with pytest inside the sandbox. Test outcomes do not matter; "
    "only that the tests can be collected and started.\n"
    "Each turn, reason briefly, then give the shell commands for this round inside one ``` fenced block, one "
    "command per line. Commands run in order in /workspace; a failing command aborts the rest of the round.\n"
    "A diagnosis expert analyses every command and may run repairs itself; you only see its summaries.\n"
    "When you believe the environment is ready, reply with the single line TERMINATE.";

void validate(const SessionConfig& c) {
    if (c.t_max < 1) throw std::invalid_argument("t_max must be >= 1");
    if (!(c.wall_clock_budget > 0)) throw std::invalid_argument("wall_clock_budget must be positive");
    if (c.context_token_budget < kMinContextBudget)
        throw std::invalid_argument("context_token_budget must be >= " + std::to_string(kMinContextBudget));
    if (!(c.per_command_timeout > 0)) throw std::invalid_argument("per_command_timeout must be positive");
}

json to_json(const SessionConfig& c) {
    return {{"t_max", c.t_max},
            {"wall_clock_budget", c.wall_clock_budget},
            {"context_token_budget", c.context_token_budget},
            {"per_command_timeout", c.per_command_timeout},
            {"use_prior", c.use_prior},
            {"ablate_diagnosis", c.ablate_diagnosis}};
}

std::string to_string(SessionStatus s) {
    switch (s) {
        case SessionStatus::solved: return "solved";
        case SessionStatus::budget_exhausted: return "budget_exhausted";
        case SessionStatus::time_exhausted: return "time_exhausted";
        case SessionStatus::aborted: return "aborted";
    }
    return "aborted";
}

SessionStatus session_status_from_string(const std::string& s) {
    for (auto st : {SessionStatus::solved, SessionStatus::budget_exhausted, SessionStatus::time_exhausted,
                    SessionStatus::aborted})
        if (to_string(st) == s) return st;
    throw std::invalid_argument("unknown session status: " + s);
}

std::string to_string(DecisionKind k) {
    switch (k) {
        case DecisionKind::proceed: return "continue";
        case DecisionKind::inject_repairs: return "inject_repairs";
        case DecisionKind::rollback: return "rollback";
    }
    return "continue";
}

// ---------------------------------------------------------------------------
// serialization

namespace {

json snapshot_json(const std::optional<SnapshotId>& s) {
    if (!s) return nullptr;
    return {{"id", s->id}, {"round", s->round}};
}

std::optional<SnapshotId> snapshot_from(const json& j) {
    if (j.is_null()) return std::nullopt;
    return SnapshotId{j.at("id").get<std::string>(), j.at("round").get<int>()};
}

json command_json(const AtomicCommand& c) {
    return {{"text", c.text()}, {"origin", to_string(c.origin())}, {"timeout", c.timeout()}};
}

AtomicCommand command_from(const json& j) {
    return AtomicCommand(j.at("text").get<std::string>(), command_origin_from_string(j.value("origin", "main_agent")),
                         j.value("timeout", kDefaultCommandTimeout));
}

}  // namespace

json to_json(const TrajectoryEntry& e) {
    json cmds = json::array();
    for (const auto& c : e.action.commands) cmds.push_back(command_json(c));
    json records = json::array();
    for (const auto& r : e.records) records.push_back(to_json(r));
    json reports = json::array();
    for (const auto& r : e.reports) reports.push_back(to_json(r));
    json skipped = json::array();
    for (const auto& c : e.skipped) skipped.push_back(command_json(c));
    return {{"round", e.round},
            {"action",
             {{"thought", e.action.thought}, {"commands", cmds}, {"terminate", e.action.terminate}}},
            {"records", records},
            {"reports", reports},
            {"skipped", skipped},
            {"snapshot", snapshot_json(e.snapshot)},
            {"rollback_to", snapshot_json(e.rollback_to)},
            {"rolled_back", e.rolled_back},
            {"success", e.success},
            {"malformed", e.malformed}};
}

TrajectoryEntry entry_from_json(const json& j) {
    TrajectoryEntry e;
    e.round = j.at("round").get<int>();
    const json& a = j.at("action");
    e.action.round = e.round;
    e.action.thought = a.value("thought", "");
    e.action.terminate = a.value("terminate", false);
    for (const auto& c : a.at("commands")) e.action.commands.push_back(command_from(c));
    for (const auto& r : j.at("records")) e.records.push_back(record_from_json(r));
    for (const auto& r : j.at("reports")) e.reports.push_back(report_from_json(r));
    for (const auto& c : j.value("skipped", json::array())) e.skipped.push_back(command_from(c));
    e.snapshot = snapshot_from(j.value("snapshot", json()));
    e.rollback_to = snapshot_from(j.value("rollback_to", json()));
    e.rolled_back = j.value("rolled_back", false);
    e.success = j.value("success", false);
    e.malformed = j.value("malformed", false);
    return e;
}

json outcome_summary_json(const SessionOutcome& o) {
    return {{"source", o.source},
            {"status", to_string(o.status)},
            {"rounds_used", o.rounds_used},
            {"usage", to_json(o.usage)},
            {"elapsed", o.elapsed},
            {"error", o.error},
            {"rules_revision", o.final_ruleset.revision},
            {"rules_count", o.final_ruleset.rules.size()}};
}

// ---------------------------------------------------------------------------
// context

namespace {

std::vector<std::string> failed_commands(const TrajectoryEntry& e) {
    std::vector<std::string> out;
    for (std::size_t i = 0; i < e.records.size() && i < e.reports.size(); ++i)
        if (e.reports[i].verdict == Verdict::failure && e.records[i].command.origin() == CommandOrigin::main_agent)
            out.push_back("`" + e.records[i].command.text() + "`");
    return out;
}

// Older rounds are reduced to command texts and verdict summaries.
std::vector<std::string> history_lines(const std::vector<TrajectoryEntry>& trajectory) {
    std::vector<std::string> lines;
    for (const auto& e : trajectory) {
        const std::string tag = "round " + std::to_string(e.round);
        const auto failed = failed_commands(e);
        if (e.rolled_back) {
            lines.push_back(text::clip(tag + " [rolled back]" + (failed.empty() ? "" : " failed at " + text::join(failed, ", ")), 240));
            continue;
        }
        for (std::size_t i = 0; i < e.records.size() && i < e.reports.size(); ++i)
            if (e.reports[i].verdict != Verdict::failure) lines.push_back(tag + " [ok] $ " + e.records[i].command.text());
        std::string result;
        if (e.malformed) {
            result = "no action";
        } else if (e.success) {
            result = "ok";
        } else {
            std::vector<std::string> sums;
            for (const auto& r : e.reports)
                if (r.verdict == Verdict::failure) sums.push_back(r.summary);
            result = "failed";
            if (!failed.empty()) result += " at " + text::join(failed, ", ");
            if (!sums.empty()) result += "; " + text::join(sums, " ; ");
        }
        lines.push_back(text::clip(tag + " result: " + result, 240));
    }
    return lines;
}

std::string render_reports(const TrajectoryEntry* entry, const std::vector<DiagnosticReport>& reports) {
    std::string out = kReportsHeader;
    if (entry) {
        out += " (round " + std::to_string(entry->round) + (entry->rolled_back ? ", rolled back" : "") + ")";
    }
    out += "\n";
    for (const auto& r : reports) {
        out += "- [" + to_string(r.command.origin()) + "] `" + r.command.text() + "` -> " + to_string(r.verdict);
        if (r.verdict != Verdict::success) out += " (" + to_string(r.error_type) + ")";
        out += "\n  description: " + r.description + "\n";
        if (!r.repair_commands.empty()) {
            std::vector<std::string> reps;
            for (const auto& c : r.repair_commands) reps.push_back("`" + c.text() + "`");
            out += "  repairs: " + text::join(reps, "; ") + "\n";
        }
        for (const auto& s : r.risk_suggestions) out += "  risk: " + text::single_line(s) + "\n";
        for (const auto& e : r.evidence)
            out += "  evidence: `" + e.tool.text() + "` (exit " + std::to_string(e.record.exit_code) + ")\n";
    }
    if (entry) {
        for (const auto& c : entry->skipped) out += "- skipped: `" + c.text() + "`\n";
        if (entry->rollback_to)
            out += "- environment rolled back to the snapshot of round " + std::to_string(entry->rollback_to->round) + "\n";
        if (entry->malformed) out += "- no parseable command block was returned\n";
    }
    return out;
}

}  // namespace

std::vector<ChatTurn> build_context(const std::vector<TrajectoryEntry>& trajectory, const std::string& prior_prompt,
                                    const std::vector<DiagnosticReport>& latest_reports, const SessionConfig& config) {
    const int next_round = trajectory.empty() ? 1 : trajectory.back().round + 1;
    std::string prior = std::string(kPriorHeader) + "\n" + (prior_prompt.empty() ? kNoPrior : prior_prompt);
    std::vector<std::string> history = history_lines(trajectory);
    std::string reports;
    if (!trajectory.empty() || !latest_reports.empty())
        reports = render_reports(trajectory.empty() ? nullptr : &trajectory.back(), latest_reports);
    const std::string instruction = std::string(kInstructionHeader) + "\nRound " + std::to_string(next_round) +
                                    " of at most " + std::to_string(config.t_max) +
                                    ". Give this round's commands in one ``` fenced block, or reply TERMINATE.";

    auto assemble = [&] {
        std::vector<ChatTurn> turns = {{Role::system, kAgentSystemPrompt}, {Role::user, prior}};
        if (!history.empty()) turns.push_back({Role::user, std::string(kHistoryHeader) + "\n" + text::join(history, "\n")});
        if (!reports.empty()) turns.push_back({Role::user, reports});
        turns.push_back({Role::user, instruction});
        return turns;
    };
    const long long budget = config.context_token_budget;
    auto turns = assemble();
    std::size_t drop = 0;
    while (estimate_tokens(turns) > budget && drop < history.size()) {
        // oldest compressed-history lines go first
        std::size_t step = std::max<std::size_t>(1, (history.size() - drop) / 8);
        history.erase(history.begin(), history.begin() + std::min(step, history.size()));
        turns = assemble();
    }
    auto shrink = [&](std::string& s) {
        long long over = estimate_tokens(turns) - budget;
        if (over <= 0) return;
        std::size_t cut = static_cast<std::size_t>(over) * 4 + 16;
        s = s.size() > cut ? text::clip(s, s.size() - cut) : std::string();
        turns = assemble();
    };
    for (int i = 0; i < 4 && estimate_tokens(turns) > budget && !reports.empty(); ++i) shrink(reports);
    for (int i = 0; i < 4 && estimate_tokens(turns) > budget; ++i) shrink(prior);
    return turns;
}

std::vector<ChatTurn> build_context(const std::vector<TrajectoryEntry>& trajectory, const std::string& prior_prompt,
                                    const SessionConfig& config) {
    static const std::vector<DiagnosticReport> none;
    return build_context(trajectory, prior_prompt, trajectory.empty() ? none : trajectory.back().reports, config);
}

// ---------------------------------------------------------------------------
// policy

PolicyDecision apply_policy(const std::vector<DiagnosticReport>& reports,
                            const std::vector<TrajectoryEntry>& trajectory) {
    PolicyDecision d;
    auto failed = std::find_if(reports.begin(), reports.end(),
                               [](const DiagnosticReport& r) { return r.verdict == Verdict::failure; });
    if (failed == reports.end()) return d;
    if (!failed->repair_commands.empty()) {
        d.kind = DecisionKind::inject_repairs;
        for (const auto& c : failed->repair_commands) d.repairs.push_back(c.with_origin(CommandOrigin::expert_repair));
        return d;
    }
    std::optional<SnapshotId> target;
    for (auto it = trajectory.rbegin(); it != trajectory.rend(); ++it) {
        if (it->snapshot && !it->rolled_back) {
            target = it->snapshot;
            break;
        }
    }
    if (!target) return d;
    // loop guard: never roll back to the same snapshot twice in a row
    if (!trajectory.empty() && trajectory.back().rollback_to && *trajectory.back().rollback_to == *target) return d;
    d.kind = DecisionKind::rollback;
    d.target = target;
    return d;
}

// ---------------------------------------------------------------------------
// trajectory log

void TrajectoryLog::write(const json& line) {
    (*out_) << line.dump() << "\n";
    out_->flush();
}

void TrajectoryLog::header(const std::string& source, const SessionConfig& config, const std::string& prior_prompt,
                           const RuleSet& seed) {
    write({{"type", "session"},
           {"version", 1},
           {"source", source},
           {"config", to_json(config)},
           {"prior", prior_prompt},
           {"seed_rules", seed.rules.size()},
           {"seed_revision", seed.revision}});
}

void TrajectoryLog::round(const TrajectoryEntry& entry, const std::vector<int>& rolled_back_rounds,
                          const UsageLedger& usage, double elapsed, long long rules_revision) {
    json line = to_json(entry);
    line["type"] = "round";
    line["rolled_back_rounds"] = rolled_back_rounds;
    line["usage"] = to_json(usage);
    line["elapsed"] = elapsed;
    line["rules_revision"] = rules_revision;
    write(line);
}

void TrajectoryLog::outcome(const SessionOutcome& outcome) {
    json line = outcome_summary_json(outcome);
    line["type"] = "outcome";
    line["final_rules"] = outcome.final_ruleset.to_json();
    write(line);
}

ParsedLog parse_trajectory_log(std::istream& in) {
    ParsedLog parsed;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (text::trim(line).empty()) continue;
        try {
            json j = json::parse(line);
            const std::string type = j.at("type").get<std::string>();
            if (type == "session") {
                parsed.header = j;
            } else if (type == "round") {
                TrajectoryEntry e = entry_from_json(j);
                for (int r : j.value("rolled_back_rounds", std::vector<int>{}))
                    for (auto& prev : parsed.trajectory)
                        if (prev.round == r) prev.rolled_back = true;
                bool self = false;
                for (int r : j.value("rolled_back_rounds", std::vector<int>{})) self |= r == e.round;
                e.rolled_back = e.rolled_back || self;
                parsed.trajectory.push_back(std::move(e));
            } else if (type == "outcome") {
                parsed.outcome = j;
                parsed.status = session_status_from_string(j.at("status").get<std::string>());
            }
        } catch (const std::exception& e) {
            throw std::runtime_error("trajectory log line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return parsed;
}

// ---------------------------------------------------------------------------
// session loop

namespace {

std::vector<std::string> backticked(const std::string& s) {
    std::vector<std::string> out;
    static const std::regex re("`([^`]+)`");
    for (std::sregex_iterator it(s.begin(), s.end(), re), end; it != end; ++it) out.push_back((*it)[1].str());
    return out;
}

const char* const kRetryPrompt =
    "Your previous reply contained no ``` fenced command block. Reply again with the commands for this round "
    "inside one fenced block, or with the single line TERMINATE.";

class Session {
public:
    Session(Backend& backend, LlmSession& model, const RuleSet& seed, const SessionConfig& config, TrajectoryLog* log)
        : backend_(backend), model_(model), rules_(seed), config_(config), log_(log) {}

    SessionOutcome run() {
        SessionOutcome out;
        out.source = backend_.source_name();
        try {
            validate(config_);
            state_ = backend_.init_environment();
            if (config_.use_prior) prior_ = render_prior_prompt(extract_prior(backend_.repo_tree()));
            if (log_) log_->header(out.source, config_, prior_, rules_);
            out.status = loop();
        } catch (const BackendUnavailable&) {
            throw;  // an environment problem, not a session outcome
        } catch (const std::exception& e) {
            out.status = SessionStatus::aborted;
            out.error = e.what();
        }
        out.rounds_used = static_cast<int>(trajectory_.size());
        out.trajectory = trajectory_;
        out.usage = model_.report_usage();
        out.final_ruleset = rules_;
        out.elapsed = backend_.elapsed_seconds();
        if (log_) log_->outcome(out);
        return out;
    }

private:
    bool out_of_time() const { return backend_.elapsed_seconds() >= config_.wall_clock_budget; }

    SessionStatus loop() {
        for (int round = 1; round <= config_.t_max; ++round) {
            if (out_of_time()) return SessionStatus::time_exhausted;
            bool time_up = run_round(round);
            if (backend_.check_solved(state_)) return SessionStatus::solved;
            if (time_up) return SessionStatus::time_exhausted;
        }
        return SessionStatus::budget_exhausted;
    }

    std::optional<ActionSet> ask(int round) {
        auto context = build_context(trajectory_, prior_, config_);
        Completion reply = model_.complete(context);
        try {
            return parse_action(reply.reply.content, round, config_.per_command_timeout);
        } catch (const MalformedAction&) {
            context.push_back(reply.reply);
            context.push_back({Role::user, kRetryPrompt});
            Completion again = model_.complete(context);
            try {
                return parse_action(again.reply.content, round, config_.per_command_timeout);
            } catch (const MalformedAction&) {
                return std::nullopt;
            }
        }
    }

    DiagnosticReport diagnose_record(const ExecutionRecord& rec) {
        if (config_.ablate_diagnosis) return static_diagnose(rec);
        ToolExecutor tools = [this](const AtomicCommand& tool) { return backend_.execute(state_, tool).second; };
        return diagnose(rec, rules_, tools, model_);
    }

    void evolve(const DiagnosticReport& report, Feedback feedback, std::optional<std::size_t> index = std::nullopt) {
        if (config_.ablate_diagnosis) return;
        rules_ = evolve_rules(rules_, report, feedback, index);
    }

    // Returns true when the time budget ran out inside the round.
    bool run_round(int round) {
        TrajectoryEntry entry;
        entry.round = round;
        state_.round = round;
        bool time_up = false;

        auto action = ask(round);
        if (!action) {
            entry.malformed = true;
            entry.action.round = round;
        } else {
            entry.action = *action;
        }

        bool main_failed = false, repaired = false, last_repair_failed = false;
        std::optional<PolicyDecision> decision;
        const auto& cmds = entry.action.commands;
        for (std::size_t i = 0; i < cmds.size(); ++i) {
            if (out_of_time()) {
                time_up = true;
                entry.skipped.assign(cmds.begin() + static_cast<std::ptrdiff_t>(i), cmds.end());
                break;
            }
            auto [next, rec] = backend_.execute(state_, cmds[i]);
            state_ = next;
            DiagnosticReport report = diagnose_record(rec);
            entry.records.push_back(rec);
            entry.reports.push_back(report);
            if (report.verdict != Verdict::failure) continue;

            main_failed = true;
            decision = apply_policy({report}, trajectory_);
            if (decision->kind == DecisionKind::inject_repairs) {
                repaired = true;
                for (std::size_t k = 0; k < decision->repairs.size(); ++k) {
                    if (out_of_time()) {
                        time_up = true;
                        entry.skipped.insert(entry.skipped.end(), decision->repairs.begin() + static_cast<std::ptrdiff_t>(k),
                                             decision->repairs.end());
                        break;
                    }
                    auto [after, rrec] = backend_.execute(state_, decision->repairs[k]);
                    state_ = after;
                    DiagnosticReport rrep = diagnose_record(rrec);
                    entry.records.push_back(rrec);
                    entry.reports.push_back(rrep);
                    last_repair_failed = rrep.verdict == Verdict::failure;
                    evolve(report, last_repair_failed ? Feedback::repair_failed : Feedback::repair_succeeded, k);
                }
            }
            entry.skipped.insert(entry.skipped.end(), cmds.begin() + static_cast<std::ptrdiff_t>(i) + 1, cmds.end());
            break;
        }

        judge_risks(entry);

        entry.success = !entry.malformed && !time_up && (!main_failed || (repaired && !last_repair_failed));
        std::vector<int> rolled;
        if (decision && decision->kind == DecisionKind::rollback) {
            state_ = backend_.restore(*decision->target);
            state_.round = round;
            entry.rollback_to = decision->target;
            for (auto& prev : trajectory_) {
                if (prev.round > decision->target->round && !prev.rolled_back) {
                    prev.rolled_back = true;
                    rolled.push_back(prev.round);
                }
            }
            entry.rolled_back = true;
            rolled.push_back(round);
        }
        if (entry.success) entry.snapshot = backend_.snapshot(state_);
        trajectory_.push_back(entry);
        if (log_) log_->round(entry, rolled, model_.report_usage(), backend_.elapsed_seconds(), rules_.revision);
        return time_up;
    }

    // Risk reports of the previous round are confirmed when this round adopted
    // a quoted command or failed, unfounded when it was clean without them.
    void judge_risks(const TrajectoryEntry& current) {
        if (trajectory_.empty()) return;
        bool had_failure = false;
        for (const auto& r : current.reports)
            if (r.verdict == Verdict::failure && r.command.origin() == CommandOrigin::main_agent) had_failure = true;
        for (const auto& risk : trajectory_.back().reports) {
            if (risk.verdict != Verdict::potential_risk) continue;
            bool adopted = false;
            for (const auto& s : risk.risk_suggestions)
                for (const auto& quoted : backticked(s))
                    for (std::size_t i = 0; i < current.records.size(); ++i)
                        if (current.records[i].command.text() == quoted && current.reports[i].verdict != Verdict::failure)
                            adopted = true;
            evolve(risk, adopted || had_failure ? Feedback::risk_confirmed : Feedback::risk_unfounded);
        }
    }

    Backend& backend_;
    LlmSession& model_;
    RuleSet rules_;
    SessionConfig config_;
    TrajectoryLog* log_;
    EnvironmentState state_;
    std::string prior_;
    std::vector<TrajectoryEntry> trajectory_;
};

}  // namespace

SessionOutcome run_session(Backend& backend, LlmSession& model, const RuleSet& seed_rules,
                           const SessionConfig& config, TrajectoryLog* log) {
    return Session(backend, model, seed_rules, config, log).run();
}

}  // namespace evoconfig
