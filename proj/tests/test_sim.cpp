#include <gtest/gtest.h>

#include "evoconfig/sim_backend.hpp"
#include "support.hpp"

using namespace evoconfig;
using namespace evoconfig::sim;
using nlohmann::json;

namespace {

Scenario tiny() {
    return parse_scenario(json::parse(R"({
        "name": "tiny", "builtins": true,
        "virtual_fs": {"requirements.txt": "numpy==1.26.4\n", "pkg/__init__.py": "", "tests/test_a.py": "import pkg\n"},
        "registry": {"packages": {
            "numpy": {"releases": ["1.26.4", "2.0.0"]},
            "pytest": {"releases": ["8.0.0"], "modules": ["pytest", "_pytest"]},
            "slow": {"releases": {"1.0": {"wheel": false, "build_seconds": 900}}}}},
        "project": {"distribution": "pkg", "module": "pkg", "test_imports": ["pkg", "numpy"], "test_count": 3},
        "solved_predicate": ["tests_launch"]
    })"));
}

ExecutionRecord run(SimBackend& b, EnvironmentState& s, const std::string& cmd, double timeout = 600) {
    auto [next, rec] = b.execute(s, AtomicCommand(cmd, CommandOrigin::main_agent, timeout));
    s = next;
    return rec;
}

}  // namespace

TEST(Sim, ScenarioValidation) {
    EXPECT_THROW(parse_scenario(json::parse(R"({"solved_predicate": ["tests_launch"]})")), ScenarioInvalid);
    EXPECT_THROW(parse_scenario(json::parse(R"({"name": "x"})")), ScenarioInvalid);
    EXPECT_THROW(parse_scenario(json::parse(R"({"name": "x", "solved_predicate": ["bogus"]})")), ScenarioInvalid);
    EXPECT_THROW(parse_scenario(json::parse(R"({"name": "x", "solved_predicate": ["tests_launch"],
        "behaviors": [{"match": "("}]})")),
                 ScenarioInvalid);
    EXPECT_THROW(load_scenario("/nonexistent/scenario.json"), ScenarioInvalid);
    EXPECT_NO_THROW(validate_atom("not:installed:numpy"));
}

TEST(Sim, InstallAndLaunchTests) {
    SimBackend b(tiny());
    auto s = b.init_environment();
    EXPECT_FALSE(b.check_solved(s));
    auto r = run(b, s, "python -m pytest --collect-only -q");
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.stderr_text.find("No module named pytest"), std::string::npos);

    r = run(b, s, "pip install -r requirements.txt");
    EXPECT_EQ(r.exit_code, 0) << r.stderr_text;
    EXPECT_EQ(b.state_of(s).installed.at("numpy"), "1.26.4");
    run(b, s, "pip install pytest");
    r = run(b, s, "python -m pytest --collect-only -q");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.stdout_text.find("3 tests collected"), std::string::npos);
    EXPECT_TRUE(b.check_solved(s));
}

TEST(Sim, UnknownCommandsAndFiles) {
    SimBackend b(tiny());
    auto s = b.init_environment();
    auto r = run(b, s, "frobnicate --all");
    EXPECT_EQ(r.exit_code, 127);
    r = run(b, s, "cat missing.txt");
    EXPECT_NE(r.exit_code, 0);
    r = run(b, s, "cat requirements.txt");
    EXPECT_EQ(r.stdout_text, "numpy==1.26.4\n");
    r = run(b, s, "sed -i 's/1.26.4/2.0.0/' requirements.txt");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_EQ(b.state_of(s).fs.at("requirements.txt"), "numpy==2.0.0\n");
    r = run(b, s, "ls && cat requirements.txt");
    EXPECT_NE(r.stdout_text.find("numpy==2.0.0"), std::string::npos);
}

TEST(Sim, TimeoutLeavesStateAndAdvancesClock) {
    SimBackend b(tiny());
    auto s = b.init_environment();
    const SimState before = b.state_of(s);
    auto r = run(b, s, "pip install slow", 600);
    EXPECT_TRUE(r.timed_out);
    EXPECT_EQ(r.exit_code, kTimeoutExitCode);
    EXPECT_EQ(b.state_of(s), before);
    EXPECT_DOUBLE_EQ(b.elapsed_seconds(), 600.0);
}

TEST(Sim, PureTransition) {
    const Scenario scn = tiny();
    const SimState s0 = initial_state(scn);
    auto a = simulate(scn, s0, "pip install -r requirements.txt");
    auto b = simulate(scn, s0, "pip install -r requirements.txt");
    EXPECT_EQ(a.state, b.state);
    EXPECT_EQ(a.stdout_text, b.stdout_text);
    EXPECT_EQ(initial_state(scn), s0);
}

TEST(Sim, SnapshotRestoreAndClose) {
    SimBackend b(tiny());
    auto s = b.init_environment();
    run(b, s, "pip install -r requirements.txt");
    auto snap = b.snapshot(s);
    run(b, s, "pip uninstall -y numpy");
    EXPECT_FALSE(b.state_of(s).installed.count("numpy"));
    auto back = b.restore(snap);
    EXPECT_EQ(b.state_of(back).installed.at("numpy"), "1.26.4");
    // the restored copy is independent of the snapshot
    run(b, back, "pip uninstall -y numpy");
    EXPECT_EQ(b.state_of(b.restore(snap)).installed.at("numpy"), "1.26.4");
    EXPECT_THROW(b.restore(SnapshotId{"snap-999", 1}), SnapshotExpired);
    b.close();
    EXPECT_THROW(b.execute(s, AtomicCommand("ls")), SessionClosed);
    EXPECT_THROW(b.restore(snap), SnapshotExpired);
}

TEST(Sim, BehaviorsFireWithPreconditionsAndLimits) {
    auto scn = parse_scenario(json::parse(R"({
        "name": "beh", "builtins": true,
        "registry": {"packages": {"a": {"releases": ["1.0"]}}},
        "behaviors": [{"match": "^pip install a$", "when": ["not:fact:warm"], "exit_code": 2, "stderr": "Read timed out.",
                       "effects": {"set_facts": ["warm"]}, "max_fires": 1}],
        "solved_predicate": ["installed:a"]})"));
    SimBackend b(scn);
    auto s = b.init_environment();
    auto r = run(b, s, "pip install a");
    EXPECT_EQ(r.exit_code, 2);
    r = run(b, s, "pip install a");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_TRUE(b.check_solved(s));
}

TEST(Sim, IndexVersionsListsRequirements) {
    SimBackend b(SimBackend::from_file(evoconfig::testing::scenario_dir("s09-conflict-numpy") / "scenario.json")->scenario());
    auto s = b.init_environment();
    auto r = run(b, s, "pip index versions tabkit");
    EXPECT_EQ(r.exit_code, 0);
    EXPECT_NE(r.stdout_text.find("Available versions: 2.0.0, 1.5.0"), std::string::npos) << r.stdout_text;
    EXPECT_NE(r.stdout_text.find("1.5.0 requires: numpy>=1.20"), std::string::npos);
}

TEST(Sim, RepoTreeMirrorsVirtualFs) {
    SimBackend b(tiny());
    auto tree = b.repo_tree();
    EXPECT_TRUE(tree.has_file("requirements.txt"));
    EXPECT_TRUE(tree.has_dir("pkg"));
    EXPECT_EQ(b.source_name(), "tiny");
}
