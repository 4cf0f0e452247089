#pragma once

// Deterministic simulated environment. A SimState is a plain value and
// `simulate` is a pure transition function over (scenario, state, command).

#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "evoconfig/sandbox.hpp"
#include "evoconfig/sim_scenario.hpp"

namespace evoconfig::sim {

inline constexpr const char* kProjectVersion = "0.1.0";

struct SimState {
    std::map<std::string, std::string> installed;
    std::set<std::string> facts;
    std::map<std::string, std::string> fs;
    std::vector<int> fires;  // per behavior

    bool operator==(const SimState&) const = default;
};

SimState initial_state(const Scenario& scenario);

struct StepResult {
    SimState state;
    int exit_code = 0;
    std::string stdout_text;
    std::string stderr_text;
    double duration = 0.0;
};

/// One command against one state. No timeout handling; the backend applies it.
StepResult simulate(const Scenario& scenario, const SimState& state, const std::string& command);

bool module_importable(const Scenario& scenario, const SimState& state, const std::string& module);
bool tests_launch(const Scenario& scenario, const SimState& state);
bool eval_atom(const Scenario& scenario, const SimState& state, const std::string& atom);
bool eval_predicate(const Scenario& scenario, const SimState& state, const std::vector<std::string>& atoms);

class SimBackend : public Backend {
public:
    explicit SimBackend(Scenario scenario, std::size_t capture_cap = kCaptureCap);
    /// Throws ScenarioInvalid.
    static std::unique_ptr<SimBackend> from_file(const std::filesystem::path& path);

    BackendKind kind() const override { return BackendKind::simulated; }
    EnvironmentState init_environment() override;
    std::pair<EnvironmentState, ExecutionRecord> execute(const EnvironmentState& state,
                                                         const AtomicCommand& cmd) override;
    SnapshotId snapshot(const EnvironmentState& state) override;
    EnvironmentState restore(const SnapshotId& id) override;
    bool check_solved(const EnvironmentState& state) override;
    void close() override;
    double elapsed_seconds() const override { return clock_; }
    RepoTree repo_tree() const override;
    std::string source_name() const override { return scenario_.name; }

    const Scenario& scenario() const { return scenario_; }
    const SimState& state_of(const EnvironmentState& state) const;

private:
    SimState& lookup(const EnvironmentState& state);

    Scenario scenario_;
    std::size_t cap_;
    std::map<std::string, SimState> envs_;
    std::map<std::string, SimState> snapshots_;
    int next_env_ = 0;
    int next_snapshot_ = 0;
    double clock_ = 0.0;
    bool closed_ = false;
};

}  // namespace evoconfig::sim
