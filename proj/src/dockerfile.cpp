#include "evoconfig/dockerfile.hpp"

#include <fstream>
#include <unistd.h>

namespace evoconfig {

using nlohmann::json;

DockerfileArtifact consolidate_trajectory(const std::vector<TrajectoryEntry>& trajectory,
                                          const DockerfileConfig& config) {
    DockerfileArtifact a;
    a.base_image = config.base_image;
    a.workdir = config.workdir;
    a.test_entry = config.test_entry;
    for (const auto& e : trajectory) {
        if (e.rolled_back) continue;
        for (std::size_t i = 0; i < e.records.size() && i < e.reports.size(); ++i) {
            const auto& cmd = e.records[i].command;
            if (e.reports[i].verdict == Verdict::failure) continue;
            if (cmd.origin() != CommandOrigin::main_agent && cmd.origin() != CommandOrigin::expert_repair) continue;
            if (classify_command(cmd) == CommandClass::read_only) continue;
            a.run_steps.push_back(cmd.text());
            a.provenance.push_back({e.round, i, cmd.origin()});
        }
    }
    a.rendered = render_dockerfile(a);
    return a;
}

DockerfileArtifact consolidate(const SessionOutcome& outcome, const DockerfileConfig& config) {
    if (outcome.status != SessionStatus::solved)
        throw NotSolved("session for " + outcome.source + " ended " + to_string(outcome.status));
    return consolidate_trajectory(outcome.trajectory, config);
}

std::string render_dockerfile(const DockerfileArtifact& a) {
    std::string out = "FROM " + a.base_image + "\n";
    out += "WORKDIR " + a.workdir + "\n";
    out += "COPY . " + a.workdir + "\n";
    for (const auto& s : a.run_steps) out += "RUN " + s + "\n";
    out += "CMD " + a.test_entry + "\n";
    return out;
}

json provenance_json(const DockerfileArtifact& a) {
    json steps = json::array();
    for (std::size_t i = 0; i < a.run_steps.size(); ++i) {
        const auto& p = a.provenance.at(i);
        steps.push_back({{"step", i},
                         {"command", a.run_steps[i]},
                         {"round", p.round},
                         {"record_index", p.record_index},
                         {"origin", to_string(p.origin)}});
    }
    return {{"base_image", a.base_image}, {"workdir", a.workdir}, {"test_entry", a.test_entry}, {"steps", steps}};
}

namespace {

BuildResult verify_in_container(const DockerfileArtifact& artifact, ContainerBackend& backend, double step_timeout) {
    BuildResult r;
    auto dir = std::filesystem::temp_directory_path() / ("evoconfig-build-" + std::to_string(::getpid()));
    std::filesystem::create_directories(dir);
    auto path = dir / "Dockerfile";
    std::ofstream(path) << artifact.rendered;
    const std::string tag = "evoconfig-verify:" + std::to_string(::getpid());
    double budget = step_timeout * static_cast<double>(artifact.run_steps.size() + 1);
    ProcessResult build = backend.build_image(path, tag, budget);
    r.log = build.stdout_text + build.stderr_text;
    r.built = build.exit_code == 0 && !build.timed_out;
    if (r.built) {
        ProcessResult test = backend.run_image(tag, kDefaultTestCommand, step_timeout);
        r.log += test.stdout_text + test.stderr_text;
        r.solved = !test.timed_out && (test.exit_code == 0 || test.exit_code == 1);
    }
    std::filesystem::remove_all(dir);
    return r;
}

}  // namespace

BuildResult verify_build(const DockerfileArtifact& artifact, Backend& backend, double step_timeout) {
    if (auto* container = dynamic_cast<ContainerBackend*>(&backend))
        return verify_in_container(artifact, *container, step_timeout);

    BuildResult r;
    EnvironmentState state = backend.init_environment();
    for (std::size_t i = 0; i < artifact.run_steps.size(); ++i) {
        AtomicCommand cmd(artifact.run_steps[i], CommandOrigin::dockerfile_replay, step_timeout);
        auto [next, rec] = backend.execute(state, cmd);
        state = next;
        r.log += "step " + std::to_string(i) + ": " + cmd.text() + " -> exit " + std::to_string(rec.exit_code) + "\n";
        if (rec.exit_code != 0) {
            r.failed_step = static_cast<int>(i);
            r.log += "step " + std::to_string(i) + " failed\n" + rec.combined_output();
            return r;
        }
    }
    r.built = true;
    r.solved = backend.check_solved(state);
    r.log += std::string("test launch: ") + (r.solved ? "ok" : "failed") + "\n";
    return r;
}

}  // namespace evoconfig
