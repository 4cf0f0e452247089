#include "evoconfig/eval.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <regex>
#include <sstream>
#include <thread>

#include "evoconfig/heuristic_provider.hpp"
#include "evoconfig/sim_backend.hpp"
#include "evoconfig/text.hpp"
#include "evoconfig/transcript.hpp"

namespace evoconfig {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(FailureCategory c) {
    switch (c) {
        case FailureCategory::hardware_insufficiency: return "hardware_insufficiency";
        case FailureCategory::config_files_missing: return "config_files_missing";
        case FailureCategory::dependency_install_timeout: return "dependency_install_timeout";
        case FailureCategory::unit_tests_missing: return "unit_tests_missing";
        case FailureCategory::runtest_timeout: return "runtest_timeout";
        case FailureCategory::other: return "other";
    }
    return "other";
}

std::string display_name(FailureCategory c) {
    switch (c) {
        case FailureCategory::hardware_insufficiency: return "Hardware Insufficiency";
        case FailureCategory::config_files_missing: return "Config Files Missing";
        case FailureCategory::dependency_install_timeout: return "Dependency Installation Timeout";
        case FailureCategory::unit_tests_missing: return "Unit Tests Missing";
        case FailureCategory::runtest_timeout: return "Runtest Timeout";
        case FailureCategory::other: return "Other";
    }
    return "Other";
}

const std::vector<FailureCategory>& all_failure_categories() {
    static const std::vector<FailureCategory> all = {
        FailureCategory::hardware_insufficiency, FailureCategory::config_files_missing,
        FailureCategory::dependency_install_timeout, FailureCategory::unit_tests_missing,
        FailureCategory::runtest_timeout, FailureCategory::other};
    return all;
}

FailureCategory failure_category_from_string(const std::string& s) {
    for (auto c : all_failure_categories())
        if (to_string(c) == s) return c;
    throw std::invalid_argument("unknown failure category: " + s);
}

// ---------------------------------------------------------------------------
// outcome metrics

namespace {

void check_records(const std::vector<OutcomeRecord>& records) {
    if (records.empty()) throw EmptySet("no outcome records");
    for (const auto& r : records)
        if (r.environment_built && !r.dockerfile_built)
            throw std::invalid_argument("record " + r.repo_id + " has an environment without a Dockerfile");
}

}  // namespace

double dgsr(const std::vector<OutcomeRecord>& records) {
    check_records(records);
    auto n = std::count_if(records.begin(), records.end(), [](const OutcomeRecord& r) { return r.dockerfile_built; });
    return static_cast<double>(n) / static_cast<double>(records.size());
}

double ebsr(const std::vector<OutcomeRecord>& records) {
    check_records(records);
    auto n = std::count_if(records.begin(), records.end(), [](const OutcomeRecord& r) { return r.environment_built; });
    return static_cast<double>(n) / static_cast<double>(records.size());
}

std::string format_percent(double rate) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.1f", rate * 100.0);
    return buf;
}

double f1_score(double precision, double recall) {
    if (precision + recall <= 0.0) return 0.0;
    return 2.0 * precision * recall / (precision + recall);
}

ProcessMetrics process_metrics(const std::vector<ProcessJudgment>& judgments) {
    if (judgments.empty()) throw EmptySet("no process judgments");
    std::size_t predicted = 0, hits = 0, desc = 0, fix = 0;
    for (const auto& j : judgments) {
        if (j.predicted != ErrorType::unknown) {
            ++predicted;
            if (j.predicted == j.gold) ++hits;
        }
        desc += j.description_correct;
        fix += j.fix_correct;
    }
    const double n = static_cast<double>(judgments.size());
    ProcessMetrics m;
    m.judged = judgments.size();
    m.precision = predicted ? static_cast<double>(hits) / static_cast<double>(predicted) : 0.0;
    m.recall = static_cast<double>(hits) / n;
    m.f1 = f1_score(m.precision, m.recall);
    m.description_acc = static_cast<double>(desc) / n;
    m.fix_acc = static_cast<double>(fix) / n;
    return m;
}

std::vector<ProcessJudgment> judge_session(const std::vector<TrajectoryEntry>& trajectory,
                                           const std::vector<sim::Annotation>& annotations) {
    std::vector<ProcessJudgment> out;
    for (const auto& a : annotations) {
        ProcessJudgment j;
        j.gold = error_type_from_string(a.error_type);
        const std::regex cmd_re(a.command_pattern), out_re(a.output_pattern);
        const DiagnosticReport* hit = nullptr;
        for (const auto& e : trajectory) {
            for (std::size_t i = 0; i < e.records.size() && i < e.reports.size() && !hit; ++i) {
                if (e.reports[i].verdict == Verdict::failure &&
                    std::regex_search(e.records[i].command.text(), cmd_re) &&
                    std::regex_search(e.records[i].combined_output(), out_re))
                    hit = &e.reports[i];
            }
            if (hit) break;
        }
        if (hit) {
            j.predicted = hit->error_type;
            j.description_correct = std::all_of(a.keywords.begin(), a.keywords.end(), [&](const std::string& k) {
                return text::icontains(hit->description, k);
            });
            if (a.fix_pattern.empty()) {
                j.fix_correct = hit->repair_commands.empty();
            } else {
                const std::regex fix_re(a.fix_pattern);
                j.fix_correct = std::any_of(hit->repair_commands.begin(), hit->repair_commands.end(),
                                            [&](const AtomicCommand& c) { return std::regex_search(c.text(), fix_re); });
            }
        }
        out.push_back(j);
    }
    return out;
}

// ---------------------------------------------------------------------------
// failure categories

FailureCategory categorize_failure(const SessionOutcome& outcome, const PriorSummary& prior) {
    static const std::regex resource(R"((^|\n)Killed|MemoryError|Out of memory|Cannot allocate memory)");
    const ExecutionRecord* last_timeout = nullptr;
    for (const auto& e : outcome.trajectory) {
        for (const auto& r : e.records) {
            if (r.exit_code == 137 || std::regex_search(r.combined_output(), resource))
                return FailureCategory::hardware_insufficiency;
            if (r.timed_out) last_timeout = &r;
        }
    }
    if (prior.dependency.manager == DependencyManager::unknown) return FailureCategory::config_files_missing;
    if (!prior.tests.tests_present) return FailureCategory::unit_tests_missing;
    if (last_timeout) {
        const std::string& c = last_timeout->command.text();
        if (c.find("pytest") != std::string::npos || c.find("unittest") != std::string::npos)
            return FailureCategory::runtest_timeout;
        if (c.find("install") != std::string::npos) return FailureCategory::dependency_install_timeout;
    }
    return FailureCategory::other;
}

FailureCategory categorize_failure(const SessionOutcome& outcome, const sim::Scenario& scenario) {
    return categorize_failure(outcome, extract_prior(RepoTree::from_files(scenario.virtual_fs)));
}

std::vector<BreakdownRow> failure_breakdown(const std::vector<FailureCategory>& failures) {
    std::vector<BreakdownRow> rows;
    for (auto c : all_failure_categories()) {
        BreakdownRow row{c, static_cast<std::size_t>(std::count(failures.begin(), failures.end(), c)), 0.0};
        if (!failures.empty())
            row.percent = 100.0 * static_cast<double>(row.count) / static_cast<double>(failures.size());
        rows.push_back(row);
    }
    return rows;
}

// ---------------------------------------------------------------------------
// corpus runs

std::string to_string(ProviderMode m) {
    switch (m) {
        case ProviderMode::replay: return "replay";
        case ProviderMode::policy: return "policy";
        case ProviderMode::record: return "record";
        case ProviderMode::live: return "live";
    }
    return "replay";
}

ProviderMode provider_mode_from_string(const std::string& s) {
    for (auto m : {ProviderMode::replay, ProviderMode::policy, ProviderMode::record, ProviderMode::live})
        if (to_string(m) == s) return m;
    throw std::invalid_argument("unknown provider mode: " + s);
}

std::string variant_name(const SessionConfig& session) {
    if (!session.use_prior && session.ablate_diagnosis) return "no-prior+ablate-diagnosis";
    if (!session.use_prior) return "no-prior";
    if (session.ablate_diagnosis) return "ablate-diagnosis";
    return "full";
}

std::string transcript_file_name(const SessionConfig& session) {
    std::string name = "transcript";
    if (!session.use_prior) name += ".no-prior";
    if (session.ablate_diagnosis) name += ".ablate-diagnosis";
    return name + ".json";
}

bool ScenarioResult::as_expected() const {
    if (!load_error.empty()) return false;
    return expected_status.empty() || expected_status == to_string(outcome.status);
}

ScenarioResult run_scenario(const fs::path& dir, const CorpusOptions& options) {
    ScenarioResult res;
    res.name = dir.filename().string();
    res.record.repo_id = res.name;
    sim::Scenario scenario;
    try {
        scenario = sim::load_scenario(dir / "scenario.json");
    } catch (const std::exception& e) {
        res.load_error = e.what();
        return res;
    }
    res.expected_status = scenario.expected_status;

    SessionConfig config = options.session;
    if (scenario.t_max) config.t_max = *scenario.t_max;
    if (scenario.time_budget) config.wall_clock_budget = *scenario.time_budget;

    const fs::path transcript_path = dir / transcript_file_name(options.session);
    std::shared_ptr<Provider> provider;
    std::shared_ptr<RecordingProvider> recorder;
    try {
        switch (options.mode) {
            case ProviderMode::replay:
                provider = std::make_shared<ReplayProvider>(Transcript::load(transcript_path));
                break;
            case ProviderMode::policy: provider = std::make_shared<PolicyProvider>(); break;
            case ProviderMode::record:
                recorder = std::make_shared<RecordingProvider>(std::make_shared<PolicyProvider>());
                provider = recorder;
                break;
            case ProviderMode::live:
                if (!options.live_provider) throw std::invalid_argument("live mode without a provider");
                provider = options.live_provider();
                break;
        }
    } catch (const std::exception& e) {
        res.load_error = e.what();
        return res;
    }

    LlmSession model(provider, options.prices);
    sim::SimBackend backend(scenario);
    std::ostringstream log_text;
    TrajectoryLog log(log_text);
    res.outcome = run_session(backend, model, options.seed_rules, config, &log);
    res.trajectory_log = log_text.str();
    if (recorder) recorder->transcript().save(transcript_path);

    if (res.outcome.status == SessionStatus::solved) {
        DockerfileArtifact artifact = consolidate(res.outcome, options.dockerfile);
        res.dockerfile = artifact.rendered;
        res.provenance = provenance_json(artifact);
        res.build = verify_build(artifact, backend, config.per_command_timeout);
        res.record.dockerfile_built = res.build.built;
        res.record.environment_built = res.build.built && res.build.solved;
    } else {
        res.record.failure_category = categorize_failure(res.outcome, scenario);
    }
    res.judgments = judge_session(res.outcome.trajectory, scenario.annotations);
    backend.close();
    return res;
}

CorpusReport run_corpus(const fs::path& corpus_dir, const CorpusOptions& options) {
    std::vector<fs::path> dirs;
    if (fs::is_directory(corpus_dir)) {
        for (const auto& e : fs::directory_iterator(corpus_dir))
            if (e.is_directory() && fs::exists(e.path() / "scenario.json")) dirs.push_back(e.path());
    }
    std::sort(dirs.begin(), dirs.end());
    if (!options.tag.empty()) {
        std::vector<fs::path> kept;
        for (const auto& d : dirs) {
            try {
                if (sim::load_scenario(d / "scenario.json").has_tag(options.tag)) kept.push_back(d);
            } catch (const std::exception&) {
                kept.push_back(d);  // reported as a load error
            }
        }
        dirs = kept;
    }
    if (dirs.empty()) throw CorpusEmpty("no scenarios in " + corpus_dir.string());

    CorpusReport report;
    report.variant = variant_name(options.session);
    report.results.resize(dirs.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < dirs.size(); i = next++) {
            try {
                report.results[i] = run_scenario(dirs[i], options);
            } catch (const std::exception& e) {
                report.results[i].name = dirs[i].filename().string();
                report.results[i].load_error = e.what();
            }
        }
    };
    const int workers = std::max(1, std::min<int>(options.workers, static_cast<int>(dirs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::sort(report.results.begin(), report.results.end(),
              [](const ScenarioResult& a, const ScenarioResult& b) { return a.name < b.name; });
    report.aggregate();
    if (options.out_dir) write_corpus_outputs(report, *options.out_dir);
    return report;
}

void CorpusReport::aggregate() {
    std::vector<OutcomeRecord> records;
    std::vector<ProcessJudgment> judgments;
    std::vector<FailureCategory> failed;
    usage = {};
    solved = load_errors = 0;
    double rounds = 0.0;
    // Summed in name order so floating totals do not depend on result order.
    std::vector<const ScenarioResult*> ordered;
    for (const auto& r : results) ordered.push_back(&r);
    std::stable_sort(ordered.begin(), ordered.end(),
                     [](const ScenarioResult* a, const ScenarioResult* b) { return a->name < b->name; });
    for (const ScenarioResult* rp : ordered) {
        const ScenarioResult& r = *rp;
        if (!r.load_error.empty()) {
            ++load_errors;
            continue;
        }
        records.push_back(r.record);
        judgments.insert(judgments.end(), r.judgments.begin(), r.judgments.end());
        usage = usage + r.outcome.usage;
        if (r.outcome.status == SessionStatus::solved) {
            ++solved;
            rounds += r.outcome.rounds_used;
        } else if (r.record.failure_category) {
            failed.push_back(*r.record.failure_category);
        }
    }
    dgsr.reset();
    ebsr.reset();
    process.reset();
    if (!records.empty()) {
        dgsr = evoconfig::dgsr(records);
        ebsr = evoconfig::ebsr(records);
    }
    if (!judgments.empty()) process = process_metrics(judgments);
    failures = failure_breakdown(failed);
    mean_rounds_solved = solved ? rounds / static_cast<double>(solved) : 0.0;
}

json CorpusReport::to_json() const {
    json entries = json::array();
    for (const auto& r : results) {
        json e = {{"name", r.name}};
        if (!r.load_error.empty()) {
            e["load_error"] = r.load_error;
            entries.push_back(e);
            continue;
        }
        e["status"] = to_string(r.outcome.status);
        e["expected_status"] = r.expected_status;
        e["as_expected"] = r.as_expected();
        e["rounds"] = r.outcome.rounds_used;
        e["elapsed"] = r.outcome.elapsed;
        e["usage"] = evoconfig::to_json(r.outcome.usage);
        e["dockerfile_built"] = r.record.dockerfile_built;
        e["environment_built"] = r.record.environment_built;
        e["failure_category"] = r.record.failure_category ? json(to_string(*r.record.failure_category)) : json();
        e["error"] = r.outcome.error;
        e["rules_revision"] = r.outcome.final_ruleset.revision;
        json judged = json::array();
        for (const auto& j : r.judgments)
            judged.push_back({{"predicted", to_string(j.predicted)},
                              {"gold", to_string(j.gold)},
                              {"description_correct", j.description_correct},
                              {"fix_correct", j.fix_correct}});
        e["judgments"] = judged;
        if (r.outcome.status == SessionStatus::solved) e["build_failed_step"] = r.build.failed_step;
        entries.push_back(e);
    }
    json j = {{"variant", variant},
              {"scenarios", results.size()},
              {"solved", solved},
              {"load_errors", load_errors},
              {"mean_rounds_solved", mean_rounds_solved},
              {"usage", evoconfig::to_json(usage)},
              {"dgsr", dgsr ? json(*dgsr) : json()},
              {"ebsr", ebsr ? json(*ebsr) : json()},
              {"entries", entries}};
    if (process) {
        j["process"] = {{"precision", process->precision},
                        {"recall", process->recall},
                        {"f1", process->f1},
                        {"description_acc", process->description_acc},
                        {"fix_acc", process->fix_acc},
                        {"judged", process->judged}};
    } else {
        j["process"] = nullptr;
    }
    json rows = json::array();
    for (const auto& row : failures)
        rows.push_back({{"category", to_string(row.category)}, {"count", row.count}, {"percent", row.percent}});
    j["failures"] = rows;
    return j;
}

std::string CorpusReport::render_table() const {
    std::string out = "variant: " + variant + "\n\n";
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%-34s %-17s %-17s %6s %5s %5s  %s\n", "scenario", "expected", "status", "rounds",
                  "dock", "env", "category");
    out += buf;
    for (const auto& r : results) {
        if (!r.load_error.empty()) {
            out += text::clip(r.name, 34) + "  LOAD ERROR: " + text::single_line(r.load_error) + "\n";
            continue;
        }
        std::snprintf(buf, sizeof(buf), "%-34s %-17s %-17s %6d %5s %5s  %s\n", text::clip(r.name, 34).c_str(),
                      r.expected_status.empty() ? "-" : r.expected_status.c_str(),
                      to_string(r.outcome.status).c_str(), r.outcome.rounds_used,
                      r.record.dockerfile_built ? "yes" : "no", r.record.environment_built ? "yes" : "no",
                      r.record.failure_category ? to_string(*r.record.failure_category).c_str() : "-");
        out += buf;
    }
    out += "\n";
    std::snprintf(buf, sizeof(buf), "Solved %zu/%zu   DGSR %s%%   EBSR %s%%   mean rounds (solved) %.2f\n", solved,
                  results.size() - load_errors, dgsr ? format_percent(*dgsr).c_str() : "-",
                  ebsr ? format_percent(*ebsr).c_str() : "-", mean_rounds_solved);
    out += buf;
    if (process) {
        std::snprintf(buf, sizeof(buf), "Process  P %s  R %s  F1 %s  Desc %s  Fix %s  (n=%zu)\n",
                      format_percent(process->precision).c_str(), format_percent(process->recall).c_str(),
                      format_percent(process->f1).c_str(), format_percent(process->description_acc).c_str(),
                      format_percent(process->fix_acc).c_str(), process->judged);
        out += buf;
    }
    out += "\nFailure category                   # Case (%)\n";
    for (const auto& row : failures) {
        std::snprintf(buf, sizeof(buf), "%-34s %3zu (%.1f%%)\n", display_name(row.category).c_str(), row.count,
                      row.percent);
        out += buf;
    }
    std::snprintf(buf, sizeof(buf), "\nTokens %lld   Calls %lld   Cost $%.4f\n", usage.total_tokens(), usage.calls,
                  usage.cost);
    out += buf;
    return out;
}

void write_corpus_outputs(const CorpusReport& report, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    std::ofstream(out_dir / "report.json") << report.to_json().dump(2) << "\n";
    std::ofstream(out_dir / "report.txt") << report.render_table();
    for (const auto& r : report.results) {
        if (!r.load_error.empty()) continue;
        const fs::path d = out_dir / r.name;
        fs::create_directories(d);
        std::ofstream(d / "trajectory.jsonl") << r.trajectory_log;
        json outcome = outcome_summary_json(r.outcome);
        outcome["final_rules"] = r.outcome.final_ruleset.to_json();
        std::ofstream(d / "outcome.json") << outcome.dump(2) << "\n";
        if (!r.dockerfile.empty()) {
            std::ofstream(d / "Dockerfile") << r.dockerfile;
            std::ofstream(d / "provenance.json") << r.provenance.dump(2) << "\n";
        }
    }
}

}  // namespace evoconfig
