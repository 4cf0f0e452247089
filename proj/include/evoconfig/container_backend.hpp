#pragma once

// Thin adapter over the docker CLI: create (run), exec, snapshot (commit),
// destroy (rm). Never used by the test suite against a real daemon.

#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "evoconfig/process.hpp"
#include "evoconfig/sandbox.hpp"

namespace evoconfig {

inline constexpr const char* kDefaultBaseImage = "python:3.11.9-slim";
inline constexpr const char* kDefaultTestCommand = "python -m pytest --collect-only -q";

struct ContainerConfig {
    std::string docker = "docker";
    std::string base_image = kDefaultBaseImage;
    std::string workdir = "/workspace";
    std::string test_command = kDefaultTestCommand;
    double setup_timeout = 300.0;
};

class ContainerBackend : public Backend {
public:
    ContainerBackend(std::filesystem::path repo, ContainerConfig config,
                     std::shared_ptr<ProcessRunner> runner = std::make_shared<PosixProcessRunner>());
    ~ContainerBackend() override;

    BackendKind kind() const override { return BackendKind::container; }
    EnvironmentState init_environment() override;
    std::pair<EnvironmentState, ExecutionRecord> execute(const EnvironmentState& state,
                                                         const AtomicCommand& cmd) override;
    SnapshotId snapshot(const EnvironmentState& state) override;
    EnvironmentState restore(const SnapshotId& id) override;
    bool check_solved(const EnvironmentState& state) override;
    void close() override;
    double elapsed_seconds() const override { return elapsed_; }
    RepoTree repo_tree() const override;
    std::string source_name() const override { return repo_.filename().string(); }

    /// `docker build` of a Dockerfile against the repository; used by verify_build.
    ProcessResult build_image(const std::filesystem::path& dockerfile, const std::string& tag, double timeout_s);
    /// Runs `command` in a throwaway container of `tag`.
    ProcessResult run_image(const std::string& tag, const std::string& command, double timeout_s);

private:
    ProcessResult docker(std::vector<std::string> args, double timeout_s);
    void require_open(const std::string& handle) const;
    std::string start_container(const std::string& image);

    std::filesystem::path repo_;
    ContainerConfig config_;
    std::shared_ptr<ProcessRunner> runner_;
    std::vector<std::string> containers_;
    std::vector<std::string> images_;
    std::map<std::string, int> snapshot_rounds_;
    double elapsed_ = 0.0;
    bool closed_ = false;
    bool checked_ = false;
    int counter_ = 0;
};

}  // namespace evoconfig
