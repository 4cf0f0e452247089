#pragma once

// Outcome metrics (DGSR, EBSR), process metrics over annotated faults,
// failure categories, and batch runs over a scenario corpus.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/agent.hpp"
#include "evoconfig/dockerfile.hpp"
#include "evoconfig/repo_prior.hpp"
#include "evoconfig/sim_scenario.hpp"

namespace evoconfig {

class EmptySet : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};
class CorpusEmpty : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class FailureCategory {
    hardware_insufficiency,
    config_files_missing,
    dependency_install_timeout,
    unit_tests_missing,
    runtest_timeout,
    other
};
std::string to_string(FailureCategory c);
FailureCategory failure_category_from_string(const std::string& s);
/// Row label as printed in the failure table.
std::string display_name(FailureCategory c);
const std::vector<FailureCategory>& all_failure_categories();

struct OutcomeRecord {
    std::string repo_id;
    bool dockerfile_built = false;
    bool environment_built = false;  // implies dockerfile_built
    std::optional<FailureCategory> failure_category;
};

/// Throws EmptySet on an empty list and std::invalid_argument when a record
/// claims an environment without a Dockerfile.
double dgsr(const std::vector<OutcomeRecord>& records);
double ebsr(const std::vector<OutcomeRecord>& records);

/// Percentage with one decimal ("88.1").
std::string format_percent(double rate);

struct ProcessJudgment {
    ErrorType predicted = ErrorType::unknown;  // unknown = abstained
    ErrorType gold = ErrorType::unknown;
    bool description_correct = false;
    bool fix_correct = false;
};

struct ProcessMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double description_acc = 0.0;
    double fix_acc = 0.0;
    std::size_t judged = 0;
};

/// Micro-averaged over error-type predictions. Throws EmptySet.
ProcessMetrics process_metrics(const std::vector<ProcessJudgment>& judgments);
/// 2PR/(P+R), 0 when P+R is 0.
double f1_score(double precision, double recall);

/// One judgment per annotation: the first failure report whose command and
/// record output match it, or an abstention when none does.
std::vector<ProcessJudgment> judge_session(const std::vector<TrajectoryEntry>& trajectory,
                                           const std::vector<sim::Annotation>& annotations);

/// Precedence: resource limit, missing config, missing tests, install
/// timeout, test-launch timeout, other. `prior` describes the repository.
FailureCategory categorize_failure(const SessionOutcome& outcome, const PriorSummary& prior);
FailureCategory categorize_failure(const SessionOutcome& outcome, const sim::Scenario& scenario);

struct BreakdownRow {
    FailureCategory category;
    std::size_t count = 0;
    double percent = 0.0;
};
/// Rows in table order with percentages of the total; the counts sum to it.
std::vector<BreakdownRow> failure_breakdown(const std::vector<FailureCategory>& failures);

// ---------------------------------------------------------------------------
// corpus runs

enum class ProviderMode { replay, policy, record, live };
std::string to_string(ProviderMode m);
ProviderMode provider_mode_from_string(const std::string& s);

struct CorpusOptions {
    SessionConfig session;
    ProviderMode mode = ProviderMode::replay;
    std::string tag;  // only scenarios carrying it; empty = all
    int workers = 1;
    RuleSet seed_rules;
    DockerfileConfig dockerfile;
    PriceTable prices;
    std::optional<std::filesystem::path> out_dir;
    /// Used in live mode, one provider per scenario.
    std::function<std::shared_ptr<Provider>()> live_provider;
};

/// "full", "no-prior", "ablate-diagnosis" or "no-prior+ablate-diagnosis".
std::string variant_name(const SessionConfig& session);
/// "transcript.json", "transcript.no-prior.json", ...
std::string transcript_file_name(const SessionConfig& session);

struct ScenarioResult {
    std::string name;
    std::string load_error;  // non-empty: scenario or transcript could not be used
    std::string expected_status;
    SessionOutcome outcome;
    OutcomeRecord record;
    std::vector<ProcessJudgment> judgments;
    std::string dockerfile;  // rendered, solved sessions only
    nlohmann::json provenance;
    BuildResult build;
    std::string trajectory_log;

    bool as_expected() const;
};

struct CorpusReport {
    std::string variant = "full";
    std::vector<ScenarioResult> results;  // sorted by name
    std::optional<double> dgsr;
    std::optional<double> ebsr;
    std::optional<ProcessMetrics> process;
    std::vector<BreakdownRow> failures;
    UsageLedger usage;
    std::size_t solved = 0;
    std::size_t load_errors = 0;
    double mean_rounds_solved = 0.0;

    /// Recomputes the aggregate fields from `results`.
    void aggregate();
    nlohmann::json to_json() const;
    /// Plain-text table.
    std::string render_table() const;
};

/// Scenario directories are `<corpus>/<name>/scenario.json` with transcripts
/// next to them. Per-scenario problems are recorded, never thrown; an empty
/// selection throws CorpusEmpty.
CorpusReport run_corpus(const std::filesystem::path& corpus_dir, const CorpusOptions& options);

/// Runs one scenario directory (used by run_corpus and the CLI).
ScenarioResult run_scenario(const std::filesystem::path& scenario_dir, const CorpusOptions& options);

/// Writes report.json, report.txt and per-scenario artifacts.
void write_corpus_outputs(const CorpusReport& report, const std::filesystem::path& out_dir);

}  // namespace evoconfig
