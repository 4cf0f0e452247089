#pragma once

// Consolidation of a solved session into a Dockerfile, plus replay
// verification of the result.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/agent.hpp"
#include "evoconfig/container_backend.hpp"

namespace evoconfig {

inline constexpr const char* kDefaultTestEntry = "python -m pytest";

struct DockerfileConfig {
    std::string base_image = kDefaultBaseImage;
    std::string workdir = "/workspace";
    std::string test_entry = kDefaultTestEntry;
    double step_timeout = kDefaultCommandTimeout;
};

struct StepProvenance {
    int round = 0;
    std::size_t record_index = 0;  // position in the round's records
    CommandOrigin origin = CommandOrigin::main_agent;

    bool operator==(const StepProvenance&) const = default;
};

struct DockerfileArtifact {
    std::string base_image;
    std::string workdir;
    std::vector<std::string> run_steps;
    std::vector<StepProvenance> provenance;  // parallel to run_steps
    std::string test_entry;
    std::string rendered;
};

class NotSolved : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Steps are the non-failed, non-read-only main commands and repairs of every
/// round that was not rolled back, in execution order. Throws NotSolved.
DockerfileArtifact consolidate(const SessionOutcome& outcome, const DockerfileConfig& config = {});
/// Same, without the status check.
DockerfileArtifact consolidate_trajectory(const std::vector<TrajectoryEntry>& trajectory,
                                          const DockerfileConfig& config = {});

std::string render_dockerfile(const DockerfileArtifact& a);
nlohmann::json provenance_json(const DockerfileArtifact& a);

struct BuildResult {
    bool built = false;
    bool solved = false;
    std::string log;
    int failed_step = -1;  // 0-based, -1 when every step passed
};

/// Simulator (or any session backend): replays the steps from a fresh E_0.
/// Container backend: docker build of the rendered file, then a test launch.
BuildResult verify_build(const DockerfileArtifact& artifact, Backend& backend,
                         double step_timeout = kDefaultCommandTimeout);

}  // namespace evoconfig
