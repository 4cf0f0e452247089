#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "evoconfig/eval.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::Gen;
using evoconfig::testing::TempDir;
namespace fs = std::filesystem;

namespace {

std::vector<OutcomeRecord> records(int built, int solved, int total) {
    std::vector<OutcomeRecord> out(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        out[static_cast<std::size_t>(i)].repo_id = "r" + std::to_string(i);
        out[static_cast<std::size_t>(i)].dockerfile_built = i < built;
        out[static_cast<std::size_t>(i)].environment_built = i < solved;
    }
    return out;
}

CorpusOptions replay_options() {
    CorpusOptions o;
    o.seed_rules = RuleSet::load(default_seed_rules_path());
    return o;
}

const CorpusReport& full_report() {
    static const CorpusReport r = run_corpus(evoconfig::testing::corpus_dir(), replay_options());
    return r;
}

std::string read_file(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

SessionOutcome outcome_with(std::vector<ExecutionRecord> recs) {
    SessionOutcome o;
    o.status = SessionStatus::budget_exhausted;
    TrajectoryEntry e;
    e.round = 1;
    e.records = std::move(recs);
    o.trajectory.push_back(e);
    return o;
}

ExecutionRecord rec(const std::string& cmd, int code, const std::string& err = "", bool timed_out = false) {
    ExecutionRecord r;
    r.command = AtomicCommand(cmd);
    r.exit_code = code;
    r.stderr_text = err;
    r.timed_out = timed_out;
    return r;
}

PriorSummary prior(DependencyManager m, bool tests) {
    PriorSummary p;
    p.dependency.manager = m;
    p.tests.tests_present = tests;
    return p;
}

}  // namespace

TEST(Metrics, PublishedAnchors) {
    EXPECT_EQ(format_percent(ebsr(records(420, 370, 420))), "88.1");
    EXPECT_EQ(format_percent(ebsr(records(324, 253, 324))), "78.1");
    EXPECT_NEAR(f1_score(52.3, 77.9), 62.6, 0.05);
    EXPECT_DOUBLE_EQ(dgsr(records(420, 370, 420)), 1.0);
}

TEST(Metrics, RejectsEmptyAndInconsistentRecords) {
    EXPECT_THROW(dgsr({}), EmptySet);
    EXPECT_THROW(ebsr({}), EmptySet);
    EXPECT_THROW(process_metrics({}), EmptySet);
    auto bad = records(0, 1, 2);
    EXPECT_THROW(ebsr(bad), std::invalid_argument);
    EXPECT_DOUBLE_EQ(f1_score(0, 0), 0.0);
}

TEST(Metrics, EnvironmentRateNeverExceedsDockerfileRate) {
    Gen g(4);
    for (int i = 0; i < 500; ++i) {
        int total = g.uniform(1, 50);
        int built = g.uniform(0, total);
        int solved = g.uniform(0, built);
        auto rs = records(built, solved, total);
        EXPECT_LE(ebsr(rs), dgsr(rs));
        EXPECT_DOUBLE_EQ(ebsr(rs), static_cast<double>(solved) / total);
    }
}

TEST(Metrics, ProcessMetricsAgainstCounts) {
    // 4 predictions (3 right), 1 abstention, 5 gold
    std::vector<ProcessJudgment> js = {
        {ErrorType::network, ErrorType::network, true, true},
        {ErrorType::timeout, ErrorType::timeout, true, false},
        {ErrorType::dependency_conflict, ErrorType::dependency_conflict, false, false},
        {ErrorType::network, ErrorType::timeout, false, false},
        {ErrorType::unknown, ErrorType::missing_dependency, false, false},
    };
    auto m = process_metrics(js);
    EXPECT_DOUBLE_EQ(m.precision, 0.75);
    EXPECT_DOUBLE_EQ(m.recall, 0.6);
    EXPECT_NEAR(m.f1, 2 * 0.75 * 0.6 / 1.35, 1e-12);
    EXPECT_DOUBLE_EQ(m.description_acc, 0.4);
    EXPECT_DOUBLE_EQ(m.fix_acc, 0.2);
    EXPECT_EQ(m.judged, 5u);
}

TEST(Metrics, FailureTableAnchors) {
    std::vector<FailureCategory> f;
    auto add = [&](FailureCategory c, int n) { f.insert(f.end(), static_cast<std::size_t>(n), c); };
    add(FailureCategory::hardware_insufficiency, 23);
    add(FailureCategory::config_files_missing, 20);
    add(FailureCategory::dependency_install_timeout, 10);
    add(FailureCategory::unit_tests_missing, 5);
    add(FailureCategory::runtest_timeout, 13);
    auto rows = failure_breakdown(f);
    const std::vector<double> expected = {32.4, 28.2, 14.1, 7.0, 18.3, 0.0};
    ASSERT_EQ(rows.size(), expected.size());
    std::size_t sum = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i].category, all_failure_categories()[i]);
        EXPECT_NEAR(rows[i].percent, expected[i], 0.05) << display_name(rows[i].category);
        sum += rows[i].count;
    }
    EXPECT_EQ(sum, 71u);
    for (auto c : all_failure_categories()) EXPECT_EQ(failure_category_from_string(to_string(c)), c);
}

TEST(Metrics, CategoryPrecedence) {
    const auto ok_prior = prior(DependencyManager::pip_requirements, true);
    EXPECT_EQ(categorize_failure(outcome_with({rec("python -m pytest", 137, "Killed")}),
                                 prior(DependencyManager::unknown, false)),
              FailureCategory::hardware_insufficiency);
    EXPECT_EQ(categorize_failure(outcome_with({rec("pip install x", 1, "MemoryError")}), ok_prior),
              FailureCategory::hardware_insufficiency);
    EXPECT_EQ(categorize_failure(outcome_with({rec("pip install x", 124, "", true)}),
                                 prior(DependencyManager::unknown, true)),
              FailureCategory::config_files_missing);
    EXPECT_EQ(categorize_failure(outcome_with({rec("python -m pytest", 124, "", true)}),
                                 prior(DependencyManager::setuptools, false)),
              FailureCategory::unit_tests_missing);
    EXPECT_EQ(categorize_failure(outcome_with({rec("pip install -r requirements.txt", 124, "", true)}), ok_prior),
              FailureCategory::dependency_install_timeout);
    EXPECT_EQ(categorize_failure(outcome_with({rec("python -m pytest -x", 124, "", true)}), ok_prior),
              FailureCategory::runtest_timeout);
    EXPECT_EQ(categorize_failure(outcome_with({rec("pip install x", 1, "nope")}), ok_prior), FailureCategory::other);
}

TEST(Metrics, JudgeSessionMatchesAnnotations) {
    TrajectoryEntry e;
    e.round = 1;
    e.records = {rec("pip install -r requirements.txt", 1, "tabkit 2.0.0 depends on numpy>=2.0")};
    DiagnosticReport r;
    r.command = e.records[0].command;
    r.verdict = Verdict::failure;
    r.error_type = ErrorType::dependency_conflict;
    r.description = "tabkit 2.0.0 needs NumPy 2";
    r.repair_commands = {AtomicCommand("sed -i 's/tabkit==2.0.0/tabkit==1.5.0/' requirements.txt")};
    e.reports = {r};
    sim::Annotation a{"pip install -r", "depends on numpy", "dependency_conflict", {"tabkit", "numpy"}, "tabkit==1.5.0"};
    sim::Annotation missed{"pytest", "No module", "missing_dependency", {}, ""};
    auto js = judge_session({e}, {a, missed});
    ASSERT_EQ(js.size(), 2u);
    EXPECT_EQ(js[0].predicted, ErrorType::dependency_conflict);
    EXPECT_TRUE(js[0].description_correct);
    EXPECT_TRUE(js[0].fix_correct);
    EXPECT_EQ(js[1].predicted, ErrorType::unknown);
    EXPECT_EQ(js[1].gold, ErrorType::missing_dependency);
    EXPECT_FALSE(js[1].description_correct);
}

TEST(Corpus, ReportMatchesGolden) {
    const auto& r = full_report();
    EXPECT_EQ(r.render_table(), read_file(fs::path(EVOCONFIG_TEST_GOLDEN_DIR) / "corpus_report.txt"));
    EXPECT_EQ(r.solved, 16u);
    EXPECT_EQ(r.results.size(), 20u);
    for (const auto& res : r.results) EXPECT_TRUE(res.as_expected()) << res.name;
}

TEST(Corpus, AggregationIgnoresResultOrder) {
    auto base = full_report();
    const auto expected = base.to_json();
    Gen g(12);
    for (int i = 0; i < 10; ++i) {
        auto shuffled = base;
        std::shuffle(shuffled.results.begin(), shuffled.results.end(), g.engine());
        shuffled.aggregate();
        auto j = shuffled.to_json();
        j.erase("entries");
        auto e = expected;
        e.erase("entries");
        EXPECT_EQ(j, e);
    }
}

TEST(Corpus, OneBrokenScenarioIsIsolated) {
    TempDir dir("corpus");
    fs::copy(evoconfig::testing::corpus_dir(), dir.path() / "c", fs::copy_options::recursive);
    std::ofstream(dir.path() / "c" / "s03-clean-setuptools-src" / "scenario.json") << "{ this is not json";
    auto r = run_corpus(dir.path() / "c", replay_options());
    EXPECT_EQ(r.results.size(), 20u);
    EXPECT_EQ(r.load_errors, 1u);
    EXPECT_EQ(r.solved, 15u);
    ASSERT_TRUE(r.dgsr.has_value());
    EXPECT_DOUBLE_EQ(*r.dgsr, 15.0 / 19.0);
    EXPECT_NE(r.render_table().find("LOAD ERROR"), std::string::npos);

    fs::remove(dir.path() / "c" / "s04-clean-pep517-flat" / "transcript.json");
    auto r2 = run_corpus(dir.path() / "c", replay_options());
    EXPECT_EQ(r2.load_errors, 2u);
}

TEST(Corpus, EmptySelectionThrows) {
    TempDir dir("empty");
    EXPECT_THROW(run_corpus(dir.path(), replay_options()), CorpusEmpty);
    auto o = replay_options();
    o.tag = "no-such-tag";
    EXPECT_THROW(run_corpus(evoconfig::testing::corpus_dir(), o), CorpusEmpty);
}

TEST(Corpus, ParallelWorkersGiveTheSameReport) {
    auto o = replay_options();
    o.workers = 4;
    EXPECT_EQ(run_corpus(evoconfig::testing::corpus_dir(), o).to_json(), full_report().to_json());
}

TEST(Corpus, OutputsAreWritten) {
    TempDir dir("out");
    write_corpus_outputs(full_report(), dir.path());
    EXPECT_TRUE(fs::exists(dir.path() / "report.json"));
    EXPECT_EQ(read_file(dir.path() / "report.txt"), full_report().render_table());
    auto j = nlohmann::json::parse(read_file(dir.path() / "report.json"));
    for (const char* key : {"dgsr", "ebsr", "entries", "failures", "load_errors", "mean_rounds_solved", "process",
                            "scenarios", "solved", "usage", "variant"})
        EXPECT_TRUE(j.contains(key)) << key;
    EXPECT_TRUE(fs::exists(dir.path() / "s01-clean-requirements-flat"));
}

TEST(Corpus, VariantNames) {
    SessionConfig s;
    EXPECT_EQ(variant_name(s), "full");
    EXPECT_EQ(transcript_file_name(s), "transcript.json");
    s.use_prior = false;
    EXPECT_EQ(variant_name(s), "no-prior");
    EXPECT_EQ(transcript_file_name(s), "transcript.no-prior.json");
    s.ablate_diagnosis = true;
    EXPECT_EQ(variant_name(s), "no-prior+ablate-diagnosis");
}
