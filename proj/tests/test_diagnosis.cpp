#include <gtest/gtest.h>

#include "evoconfig/diagnosis.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::Gen;
using evoconfig::testing::ScriptedProvider;
using nlohmann::json;

namespace {

ExecutionRecord failed(const std::string& cmd, const std::string& err, int code = 1) {
    ExecutionRecord r;
    r.command = AtomicCommand(cmd);
    r.exit_code = code;
    r.stderr_text = err;
    return r;
}

ExecutionRecord ok(const std::string& cmd, const std::string& out = "") {
    ExecutionRecord r;
    r.command = AtomicCommand(cmd);
    r.stdout_text = out;
    return r;
}

std::string reply(Verdict v, ErrorType e, std::vector<std::string> repairs = {}, std::vector<std::string> risks = {}) {
    ModelVerdict m;
    m.verdict = v;
    m.error_type = e;
    m.description = "model says " + to_string(e);
    m.repair_commands = std::move(repairs);
    m.risk_suggestions = std::move(risks);
    return render_expert_reply(m);
}

RuleSet seed() { return RuleSet::load(default_seed_rules_path()); }

// Tool executor that records what it was asked to run.
struct ToolLog {
    std::vector<std::string> ran;
    ToolExecutor fn() {
        return [this](const AtomicCommand& c) {
            ran.push_back(c.text());
            ExecutionRecord r;
            r.command = c;
            r.stdout_text = "evidence for " + c.text();
            return r;
        };
    }
};

Rule make_rule(const std::string& id, RuleCategory cat, double priority, long long created) {
    Rule r;
    r.id = id;
    r.category = cat;
    r.effect = "echo " + id;
    r.priority = priority;
    r.created = created;
    return r;
}

}  // namespace

TEST(Rules, SeedSetLoadsAndRoundTrips) {
    auto rs = seed();
    EXPECT_GE(rs.rules.size(), 10u);
    EXPECT_LE(rs.rules.size(), rs.cap);
    EXPECT_EQ(RuleSet::from_json(rs.to_json()), rs);
    for (const auto& r : rs.rules) {
        EXPECT_GE(r.priority, 0.0);
        EXPECT_LE(r.priority, 1.0);
    }
}

TEST(Rules, ValidationRejectsBadSets) {
    auto bad = [](const char* text) { return RuleSet::from_json(json::parse(text)); };
    EXPECT_THROW(bad(R"({"rules": [{"id": "a", "category": "nope", "trigger": {}, "effect": "x"}]})"), RuleInvalid);
    EXPECT_THROW(bad(R"({"rules": [{"id": "a", "category": "tool_creation", "trigger": {"output": "("}, "effect": "x"}]})"),
                 RuleInvalid);
    EXPECT_THROW(
        bad(R"({"rules": [{"id": "a", "category": "tool_creation", "trigger": {}, "effect": "x", "priority": 1.5}]})"),
        RuleInvalid);
    EXPECT_THROW(bad(R"({"rules": [{"id": "a", "category": "tool_creation", "trigger": {}, "effect": "x"},
                                   {"id": "a", "category": "tool_creation", "trigger": {}, "effect": "y"}]})"),
                 RuleInvalid);
    EXPECT_THROW(bad(R"({"cap": 1, "rules": [{"id": "a", "category": "tool_creation", "trigger": {}, "effect": "x"},
                                   {"id": "b", "category": "tool_creation", "trigger": {}, "effect": "y"}]})"),
                 RuleInvalid);
    EXPECT_THROW(RuleSet::load("/nonexistent/rules.json"), RuleInvalid);
}

TEST(Rules, MatchAndExpand) {
    auto rs = seed();
    const Rule* r = rs.find("missing-module-install");
    ASSERT_NE(r, nullptr);
    auto rec = failed("python -m pytest --collect-only -q", "E   ModuleNotFoundError: No module named 'yaml'");
    auto m = match_rule(*r, rec, ErrorType::missing_dependency);
    ASSERT_TRUE(m.matched);
    EXPECT_EQ(expand_template(r->effect, m.captures, rec.command.text()), "pip install yaml");
    // the error_type condition gates the rule
    EXPECT_FALSE(match_rule(*r, rec, std::nullopt).matched);
    EXPECT_FALSE(match_rule(*r, rec, ErrorType::network).matched);
    // exit condition
    EXPECT_FALSE(match_rule(*r, ok("python -m pytest", "No module named 'yaml'"), ErrorType::missing_dependency).matched);

    EXPECT_EQ(expand_template("{cmd} --user {2}{9}", {"line", "a", "b"}, "pip install x"), "pip install x --user b");
    EXPECT_EQ(expand_template("{x} {", {}, "c"), "{x} {");
}

TEST(Diagnosis, SuccessShortCircuitsWithoutModel) {
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::string>{});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(ok("pip install -r requirements.txt", "Successfully installed a-1.0"), seed(), tools.fn(), model);
    EXPECT_EQ(r.verdict, Verdict::success);
    EXPECT_TRUE(provider->seen.empty());
    EXPECT_TRUE(tools.ran.empty());
    EXPECT_LE(r.description.size(), kDescriptionLimit);
}

TEST(Diagnosis, ConflictRunsToolsThenMergesRepairs) {
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::string>{
        reply(Verdict::failure, ErrorType::dependency_conflict,
              {"sed -i 's/tabkit==2.0.0/tabkit==1.5.0/' requirements.txt", "pip install -r requirements.txt"})});
    LlmSession model(provider);
    ToolLog tools;
    auto rec = failed("pip install -r requirements.txt",
                      "ERROR: Cannot install numpy==1.26.4 and tabkit==2.0.0 because these package versions have "
                      "conflicting dependencies.\n\nThe conflict is caused by:\n    The user requested numpy==1.26.4\n"
                      "    tabkit 2.0.0 depends on numpy>=2.0\n\nERROR: ResolutionImpossible");
    auto r = diagnose(rec, seed(), tools.fn(), model);
    EXPECT_EQ(tools.ran, (std::vector<std::string>{"pip index versions tabkit", "pip freeze"}));
    ASSERT_EQ(r.evidence.size(), 2u);
    EXPECT_EQ(r.evidence[0].tool.origin(), CommandOrigin::expert_tool);
    EXPECT_EQ(r.verdict, Verdict::failure);
    EXPECT_EQ(r.error_type, ErrorType::dependency_conflict);
    ASSERT_EQ(r.repair_commands.size(), 2u);
    EXPECT_EQ(r.repair_origins, (std::vector<std::string>{"model", "model"}));
    for (const auto& c : r.repair_commands) EXPECT_EQ(c.origin(), CommandOrigin::expert_repair);
    // the evidence reached the model
    ASSERT_EQ(provider->seen.size(), 1u);
    EXPECT_NE(provider->seen[0][1].content.find("evidence for pip index versions tabkit"), std::string::npos);
    EXPECT_EQ(r.signature.rfind("dependency_conflict:", 0), 0u);
}

TEST(Diagnosis, MutatingToolRulesAreRejectedAndCapped) {
    RuleSet rs;
    for (int i = 0; i < 6; ++i) {
        Rule r = make_rule("t" + std::to_string(i), RuleCategory::tool_creation, 0.9 - 0.1 * i, i);
        r.effect = i == 0 ? "rm -rf build" : "cat file" + std::to_string(i);
        rs.rules.push_back(r);
    }
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::string>{reply(Verdict::failure, ErrorType::unknown)});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(failed("make", "boom"), rs, tools.fn(), model);
    EXPECT_EQ(tools.ran, (std::vector<std::string>{"cat file1", "cat file2", "cat file3"}));
    ASSERT_EQ(r.rejected_tools.size(), 1u);
    EXPECT_NE(r.rejected_tools[0].find("rm -rf build"), std::string::npos);
}

TEST(Diagnosis, RetriesOnceOnUnparseableReply) {
    auto provider = std::make_shared<ScriptedProvider>(
        std::vector<std::string>{"I think it is broken", reply(Verdict::failure, ErrorType::network)});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(failed("curl x", "Connection reset"), RuleSet{}, tools.fn(), model);
    EXPECT_EQ(provider->seen.size(), 2u);
    EXPECT_EQ(r.error_type, ErrorType::network);

    auto junk = std::make_shared<ScriptedProvider>(std::vector<std::string>{"no", "still no"});
    LlmSession m2(junk);
    auto r2 = diagnose(failed("curl x", "Connection reset"), RuleSet{}, tools.fn(), m2);
    EXPECT_EQ(r2.verdict, Verdict::failure);
    EXPECT_EQ(r2.error_type, ErrorType::unknown);
    EXPECT_TRUE(r2.repair_commands.empty());
    EXPECT_EQ(m2.report_usage().calls, 2);
}

TEST(Diagnosis, TimeoutIsAlwaysAFailure) {
    auto provider =
        std::make_shared<ScriptedProvider>(std::vector<std::string>{reply(Verdict::success, ErrorType::unknown)});
    LlmSession model(provider);
    ToolLog tools;
    auto rec = failed("pip install slow", "", 124);
    rec.timed_out = true;
    auto r = diagnose(rec, seed(), tools.fn(), model);
    EXPECT_EQ(r.verdict, Verdict::failure);
    EXPECT_EQ(r.error_type, ErrorType::timeout);
}

TEST(Diagnosis, RiskRulesTurnSuccessIntoPotentialRisk) {
    auto provider =
        std::make_shared<ScriptedProvider>(std::vector<std::string>{reply(Verdict::success, ErrorType::unknown)});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(ok("pip install -e .", "WARNING: Failed to build optional extension 'fastmod._speed'\n"
                                             "Successfully installed fastmod-1.0"),
                      seed(), tools.fn(), model);
    EXPECT_EQ(r.verdict, Verdict::potential_risk);
    ASSERT_EQ(r.risk_suggestions.size(), 1u);
    EXPECT_NE(r.risk_suggestions[0].find("fastmod._speed"), std::string::npos);
    EXPECT_NE(r.risk_suggestions[0].find("pip install -e . --force-reinstall"), std::string::npos);
    EXPECT_NE(std::find(r.fired_rules.begin(), r.fired_rules.end(), "optional-extension-skipped"), r.fired_rules.end());
}

TEST(Diagnosis, RuleRepairsComeFirstAndDeduplicate) {
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::string>{
        reply(Verdict::failure, ErrorType::missing_dependency, {"pip install yaml", "pip install pyyaml"})});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(failed("python -m pytest", "ModuleNotFoundError: No module named 'yaml'"), seed(), tools.fn(),
                      model);
    ASSERT_EQ(r.repair_commands.size(), 2u);
    EXPECT_EQ(r.repair_commands[0].text(), "pip install yaml");
    EXPECT_EQ(r.repair_origins[0], "missing-module-install");
    EXPECT_EQ(r.repair_commands[1].text(), "pip install pyyaml");
    EXPECT_EQ(r.repair_origins[1], "model");
}

TEST(Diagnosis, ReportJsonRoundTripAndSummary) {
    auto provider = std::make_shared<ScriptedProvider>(
        std::vector<std::string>{reply(Verdict::failure, ErrorType::missing_dependency, {"pip install pyyaml"})});
    LlmSession model(provider);
    ToolLog tools;
    auto r = diagnose(failed("python -m pytest", "ModuleNotFoundError: No module named 'yaml'"), seed(), tools.fn(),
                      model);
    EXPECT_EQ(report_from_json(to_json(r)), r);
    auto line = summarize_for_context(r);
    EXPECT_LE(line.size(), kSummaryLimit);
    EXPECT_EQ(line.find('\n'), std::string::npos);
    EXPECT_NE(line.find("failure"), std::string::npos);
}

TEST(Diagnosis, StaticDiagnoseUsesExitCodeOnly) {
    EXPECT_EQ(static_diagnose(ok("ls")).verdict, Verdict::success);
    auto r = static_diagnose(failed("pip install x", "No module named 'x'"));
    EXPECT_EQ(r.verdict, Verdict::failure);
    EXPECT_EQ(r.error_type, ErrorType::unknown);
    EXPECT_TRUE(r.repair_commands.empty());
    EXPECT_TRUE(r.evidence.empty());
}

TEST(Diagnosis, ClassifyFailureText) {
    EXPECT_EQ(classify_failure_text(failed("pip install -r r.txt", "ERROR: ResolutionImpossible")),
              ErrorType::dependency_conflict);
    EXPECT_EQ(classify_failure_text(failed("python -m pytest", "No module named 'yaml'")), ErrorType::missing_dependency);
    EXPECT_EQ(classify_failure_text(failed("pip install x", "error: command 'gcc' failed: No such file or directory")),
              ErrorType::toolchain_mismatch);
    EXPECT_EQ(classify_failure_text(failed("pip install x", "ReadTimeoutError: Read timed out.")), ErrorType::network);
    auto t = failed("pip install x", "", 124);
    t.timed_out = true;
    EXPECT_EQ(classify_failure_text(t), ErrorType::timeout);
}

TEST(Evolution, RepairFeedbackMovesOriginRule) {
    auto rs = seed();
    DiagnosticReport rep;
    rep.command = AtomicCommand("python -m pytest");
    rep.verdict = Verdict::failure;
    rep.repair_commands = {AtomicCommand("pip install yaml", CommandOrigin::expert_repair)};
    rep.repair_origins = {"missing-module-install"};
    const double p0 = rs.find("missing-module-install")->priority;

    auto up = evolve_rules(rs, rep, Feedback::repair_succeeded, 0);
    EXPECT_NEAR(up.find("missing-module-install")->priority, p0 + 0.1, 1e-12);
    EXPECT_EQ(up.revision, rs.revision + 1);

    auto down = evolve_rules(rs, rep, Feedback::repair_failed, 0);
    EXPECT_NEAR(down.find("missing-module-install")->priority, p0 - 0.2, 1e-12);

    auto same = evolve_rules(rs, rep, Feedback::none);
    EXPECT_EQ(same, rs);
}

TEST(Evolution, SuccessfulModelRepairSynthesizesOneRule) {
    auto rs = seed();
    DiagnosticReport rep;
    rep.command = AtomicCommand("pip install -r requirements.txt");
    rep.verdict = Verdict::failure;
    rep.error_type = ErrorType::network;
    rep.signature = "network: ReadTimeoutError: Read timed out.";
    rep.repair_commands = {AtomicCommand("pip install -r requirements.txt --retries 9", CommandOrigin::expert_repair)};
    rep.repair_origins = {"model"};
    auto grown = evolve_rules(rs, rep, Feedback::repair_succeeded, 0);
    ASSERT_EQ(grown.rules.size(), rs.rules.size() + 1);
    const Rule& learned = grown.rules.back();
    EXPECT_EQ(learned.id, "learned-1");
    EXPECT_EQ(learned.effect, "{cmd} --retries 9");
    EXPECT_EQ(learned.category, RuleCategory::repair_suggestion);
    EXPECT_DOUBLE_EQ(learned.priority, 0.5);
    // the learned rule fires on the same failure
    auto rec = failed("pip install -r requirements.txt", "ReadTimeoutError: Read timed out.");
    auto m = match_rule(learned, rec, ErrorType::network);
    ASSERT_TRUE(m.matched);
    EXPECT_EQ(expand_template(learned.effect, m.captures, "pip install -r requirements.txt"),
              "pip install -r requirements.txt --retries 9");
    // the identical lesson is not learned twice
    auto again = evolve_rules(grown, rep, Feedback::repair_succeeded, 0);
    EXPECT_EQ(again.rules, grown.rules);
    EXPECT_EQ(again.revision, grown.revision);
    // a plain retry teaches nothing
    rep.repair_commands = {AtomicCommand("pip install -r requirements.txt", CommandOrigin::expert_repair)};
    EXPECT_EQ(evolve_rules(rs, rep, Feedback::repair_succeeded, 0), rs);
}

TEST(Evolution, RiskFeedbackOnlyTouchesRiskRules) {
    auto rs = seed();
    DiagnosticReport rep;
    rep.verdict = Verdict::potential_risk;
    rep.fired_rules = {"optional-extension-skipped", "missing-module-install"};
    const double risk0 = rs.find("optional-extension-skipped")->priority;
    const double rep0 = rs.find("missing-module-install")->priority;
    auto c = evolve_rules(rs, rep, Feedback::risk_confirmed);
    EXPECT_NEAR(c.find("optional-extension-skipped")->priority, risk0 + 0.1, 1e-12);
    EXPECT_DOUBLE_EQ(c.find("missing-module-install")->priority, rep0);
    auto u = evolve_rules(rs, rep, Feedback::risk_unfounded);
    EXPECT_NEAR(u.find("optional-extension-skipped")->priority, risk0 - 0.1, 1e-12);
}

TEST(Evolution, EvictionDropsLowestPriorityThenOldest) {
    RuleSet rs;
    rs.cap = 3;
    rs.rules = {make_rule("a", RuleCategory::repair_suggestion, 0.5, 0),
                make_rule("b", RuleCategory::repair_suggestion, 0.2, 1),
                make_rule("c", RuleCategory::repair_suggestion, 0.2, 2)};
    rs.next_sequence = 3;
    DiagnosticReport rep;
    rep.command = AtomicCommand("pip install x");
    rep.signature = "network: Connection reset";
    rep.error_type = ErrorType::network;
    rep.repair_commands = {AtomicCommand("pip install x --retries 3")};
    rep.repair_origins = {"model"};
    auto out = evolve_rules(rs, rep, Feedback::repair_succeeded, 0);
    ASSERT_EQ(out.rules.size(), 3u);
    std::vector<std::string> ids;
    for (const auto& r : out.rules) ids.push_back(r.id);
    EXPECT_EQ(ids, (std::vector<std::string>{"a", "c", "learned-1"}));
    EXPECT_EQ(out.revision, 1);

    // When the new rule is itself the weakest and newest-tied loser, nothing changes.
    for (auto& r : rs.rules) r.priority = 0.9;
    rs.cap = 3;
    auto full = evolve_rules(rs, rep, Feedback::repair_succeeded, 0);
    EXPECT_EQ(full.rules, rs.rules);
    EXPECT_EQ(full.revision, rs.revision);
}

TEST(Evolution, RandomFeedbackKeepsLaws) {
    Gen g(8);
    auto rs = seed();
    rs.cap = 16;
    const std::vector<Feedback> fbs = {Feedback::repair_succeeded, Feedback::repair_failed, Feedback::risk_confirmed,
                                       Feedback::risk_unfounded, Feedback::none};
    for (int step = 0; step < 500; ++step) {
        DiagnosticReport rep;
        rep.command = AtomicCommand("pip install " + g.word());
        rep.error_type = ErrorType::network;
        rep.signature = "network: err " + g.word();
        int n = g.uniform(0, 3);
        for (int i = 0; i < n; ++i) {
            bool from_rule = g.chance(0.5) && !rs.rules.empty();
            rep.repair_commands.emplace_back("pip install x --opt" + g.word());
            rep.repair_origins.push_back(from_rule ? g.pick(rs.rules).id : "model");
        }
        for (const auto& r : rs.rules)
            if (g.chance(0.2)) rep.fired_rules.push_back(r.id);
        auto next = evolve_rules(rs, rep, g.pick(fbs));
        for (const auto& r : next.rules) {
            ASSERT_GE(r.priority, 0.0);
            ASSERT_LE(r.priority, 1.0);
        }
        ASSERT_LE(next.rules.size(), next.cap);
        ASSERT_EQ(next.revision, rs.revision + (next.rules != rs.rules ? 1 : 0));
        rs = next;
    }
}
