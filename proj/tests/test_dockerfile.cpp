#include <gtest/gtest.h>

#include "evoconfig/dockerfile.hpp"
#include "evoconfig/heuristic_provider.hpp"
#include "evoconfig/sim_backend.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::ScriptedProvider;
using nlohmann::json;

namespace {

sim::Scenario tiny() {
    return sim::parse_scenario(json::parse(R"({
        "name": "tiny", "builtins": true,
        "virtual_fs": {"requirements.txt": "numpy==1.26.4\n", "pkg/__init__.py": "", "tests/test_a.py": "import pkg\n"},
        "registry": {"packages": {
            "numpy": {"releases": ["1.26.4", "2.0.0"]},
            "pytest": {"releases": ["8.0.0"], "modules": ["pytest", "_pytest"]}}},
        "project": {"distribution": "pkg", "module": "pkg", "test_imports": ["pkg", "numpy"], "test_count": 3},
        "solved_predicate": ["tests_launch"]
    })"));
}

std::string block(const std::string& cmds) { return "```bash\n" + cmds + "\n```"; }

SessionOutcome scripted(sim::SimBackend& backend, std::vector<std::string> replies) {
    LlmSession model(std::make_shared<ScriptedProvider>(std::move(replies)));
    SessionConfig c;
    c.ablate_diagnosis = true;
    return run_session(backend, model, RuleSet{}, c);
}

}  // namespace

TEST(Dockerfile, RollbackReadOnlyAndFailedStepsAreExcluded) {
    sim::SimBackend backend(tiny());
    auto out = scripted(backend, {block("ls\npip install pytest==9.9"), block("pip install -r requirements.txt"),
                                  block("pip uninstall -y numpy\nfrobnicate"), block("cat requirements.txt\npip install pytest")});
    ASSERT_EQ(out.status, SessionStatus::solved);
    auto a = consolidate(out);
    // round 1 fails before any snapshot exists; round 3 is rolled back to the snapshot of round 2
    ASSERT_TRUE(out.trajectory[2].rolled_back);
    EXPECT_EQ(a.run_steps, (std::vector<std::string>{"pip install -r requirements.txt", "pip install pytest"}));
    ASSERT_EQ(a.provenance.size(), 2u);
    EXPECT_EQ(a.provenance[0], (StepProvenance{2, 0, CommandOrigin::main_agent}));
    EXPECT_EQ(a.provenance[1], (StepProvenance{4, 1, CommandOrigin::main_agent}));
    EXPECT_EQ(a.rendered, "FROM " + std::string(kDefaultBaseImage) +
                              "\nWORKDIR /workspace\nCOPY . /workspace\nRUN pip install -r requirements.txt\n"
                              "RUN pip install pytest\nCMD python -m pytest\n");
    auto prov = provenance_json(a);
    ASSERT_EQ(prov.at("steps").size(), 2u);
    EXPECT_EQ(prov["steps"][1]["round"], 4);

    sim::SimBackend fresh(tiny());
    auto b = verify_build(a, fresh);
    EXPECT_TRUE(b.built);
    EXPECT_TRUE(b.solved);
    EXPECT_EQ(b.failed_step, -1);
}

TEST(Dockerfile, UnsolvedSessionsAreRejected) {
    sim::SimBackend backend(tiny());
    auto out = scripted(backend, {block("ls")});
    EXPECT_NE(out.status, SessionStatus::solved);
    EXPECT_THROW(consolidate(out), NotSolved);
    EXPECT_NO_THROW(consolidate_trajectory(out.trajectory));
}

TEST(Dockerfile, VerifyReportsTheFailingStep) {
    DockerfileArtifact a;
    a.base_image = "python:3.10";
    a.workdir = "/w";
    a.test_entry = kDefaultTestEntry;
    a.run_steps = {"pip install -r requirements.txt", "pip install nosuchpkg", "pip install pytest"};
    sim::SimBackend backend(tiny());
    auto b = verify_build(a, backend);
    EXPECT_FALSE(b.built);
    EXPECT_FALSE(b.solved);
    EXPECT_EQ(b.failed_step, 1);
    EXPECT_NE(b.log.find("step 1 failed"), std::string::npos);

    a.run_steps = {"pip install -r requirements.txt"};
    sim::SimBackend again(tiny());
    b = verify_build(a, again);
    EXPECT_TRUE(b.built);
    EXPECT_FALSE(b.solved);  // pytest is missing, so the test launch fails
}

TEST(Dockerfile, RepairsAreKeptWithTheirOrigin) {
    auto backend = sim::SimBackend::from_file(evoconfig::testing::scenario_dir("s05-missing-dep-requests") / "scenario.json");
    LlmSession model(std::make_shared<PolicyProvider>());
    auto out = run_session(*backend, model, RuleSet::load(default_seed_rules_path()), SessionConfig{});
    ASSERT_EQ(out.status, SessionStatus::solved);
    auto a = consolidate(out);
    bool has_repair = false;
    for (const auto& p : a.provenance) has_repair |= p.origin == CommandOrigin::expert_repair;
    EXPECT_TRUE(has_repair) << a.rendered;
    for (const auto& s : a.run_steps) EXPECT_NE(classify_command_text(s), CommandClass::read_only) << s;
    auto fresh = sim::SimBackend::from_file(evoconfig::testing::scenario_dir("s05-missing-dep-requests") / "scenario.json");
    auto b = verify_build(a, *fresh);
    EXPECT_TRUE(b.built && b.solved) << b.log;
}
