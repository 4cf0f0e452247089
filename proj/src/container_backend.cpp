#include "evoconfig/container_backend.hpp"

#include <algorithm>
#include <unistd.h>

#include "evoconfig/text.hpp"

namespace evoconfig {

ContainerBackend::ContainerBackend(std::filesystem::path repo, ContainerConfig config,
                                   std::shared_ptr<ProcessRunner> runner)
    : repo_(std::move(repo)), config_(std::move(config)), runner_(std::move(runner)) {}

ContainerBackend::~ContainerBackend() {
    try {
        close();
    } catch (...) {
    }
}

ProcessResult ContainerBackend::docker(std::vector<std::string> args, double timeout_s) {
    args.insert(args.begin(), config_.docker);
    ProcessResult r = runner_->run(args, timeout_s);
    if (r.spawn_failed) throw BackendUnavailable("container runtime '" + config_.docker + "' is not available");
    elapsed_ += r.duration;
    return r;
}

void ContainerBackend::require_open(const std::string& handle) const {
    if (closed_) throw SessionClosed("container session is closed");
    if (std::find(containers_.begin(), containers_.end(), handle) == containers_.end())
        throw SessionClosed("unknown container " + handle);
}

std::string ContainerBackend::start_container(const std::string& image) {
    std::string name = "evoconfig-" + std::to_string(::getpid()) + "-" + std::to_string(++counter_);
    auto r = docker({"run", "-d", "--name", name, "-w", config_.workdir, image, "sleep", "infinity"},
                    config_.setup_timeout);
    if (r.exit_code != 0) throw BackendUnavailable("docker run failed: " + text::clip(r.stderr_text, 400));
    containers_.push_back(name);
    return name;
}

EnvironmentState ContainerBackend::init_environment() {
    if (closed_) throw SessionClosed("container session is closed");
    if (!checked_) {
        auto v = docker({"version", "--format", "{{.Server.Version}}"}, 30.0);
        if (v.exit_code != 0) throw BackendUnavailable("docker daemon unreachable: " + text::clip(v.stderr_text, 400));
        checked_ = true;
    }
    if (!std::filesystem::is_directory(repo_))
        throw BackendUnavailable("repository path is not a directory: " + repo_.string());
    std::string name = start_container(config_.base_image);
    auto cp = docker({"cp", (repo_ / ".").string(), name + ":" + config_.workdir}, config_.setup_timeout);
    if (cp.exit_code != 0) throw BackendUnavailable("docker cp failed: " + text::clip(cp.stderr_text, 400));
    return EnvironmentState{name, 0, BackendKind::container};
}

std::pair<EnvironmentState, ExecutionRecord> ContainerBackend::execute(const EnvironmentState& state,
                                                                       const AtomicCommand& cmd) {
    require_open(state.handle);
    auto r = docker({"exec", "-w", config_.workdir, state.handle, "sh", "-c", cmd.text()}, cmd.timeout());
    if (r.timed_out) {
        // the exec client is gone; stop whatever it left running inside
        runner_->run({config_.docker, "exec", state.handle, "sh", "-c", "kill -9 -1 2>/dev/null || true"}, 10.0);
    }
    return {state, make_record(cmd, r.exit_code, r.stdout_text, r.stderr_text, r.duration, r.timed_out)};
}

SnapshotId ContainerBackend::snapshot(const EnvironmentState& state) {
    require_open(state.handle);
    std::string image = "evoconfig-snapshot:" + state.handle + "-" + std::to_string(++counter_);
    auto r = docker({"commit", state.handle, image}, config_.setup_timeout);
    if (r.exit_code != 0) throw BackendUnavailable("docker commit failed: " + text::clip(r.stderr_text, 400));
    images_.push_back(image);
    snapshot_rounds_[image] = state.round;
    return SnapshotId{image, state.round};
}

EnvironmentState ContainerBackend::restore(const SnapshotId& id) {
    if (closed_ || !snapshot_rounds_.count(id.id)) throw SnapshotExpired("snapshot " + id.id + " is not available");
    std::string name = start_container(id.id);
    return EnvironmentState{name, id.round, BackendKind::container};
}

bool ContainerBackend::check_solved(const EnvironmentState& state) {
    require_open(state.handle);
    auto r = docker({"exec", "-w", config_.workdir, state.handle, "sh", "-c", config_.test_command}, 600.0);
    // pytest: 0 all passed, 1 some failed; both mean the tests launched
    return !r.timed_out && (r.exit_code == 0 || r.exit_code == 1);
}

void ContainerBackend::close() {
    if (closed_) return;
    closed_ = true;
    for (const auto& c : containers_) runner_->run({config_.docker, "rm", "-f", c}, 60.0);
    for (const auto& i : images_) runner_->run({config_.docker, "rmi", "-f", i}, 60.0);
    containers_.clear();
    images_.clear();
    snapshot_rounds_.clear();
}

RepoTree ContainerBackend::repo_tree() const { return RepoTree::from_directory(repo_); }

ProcessResult ContainerBackend::build_image(const std::filesystem::path& dockerfile, const std::string& tag,
                                            double timeout_s) {
    return docker({"build", "-t", tag, "-f", dockerfile.string(), repo_.string()}, timeout_s);
}

ProcessResult ContainerBackend::run_image(const std::string& tag, const std::string& command, double timeout_s) {
    return docker({"run", "--rm", "-w", config_.workdir, tag, "sh", "-c", command}, timeout_s);
}

}  // namespace evoconfig
