#pragma once

// Child-process execution with a deadline, used by the container adapter.

#include <string>
#include <vector>

namespace evoconfig {

struct ProcessResult {
    int exit_code = 0;
    std::string stdout_text;
    std::string stderr_text;
    double duration = 0.0;
    bool timed_out = false;
    bool spawn_failed = false;  // executable missing or not runnable
};

class ProcessRunner {
public:
    virtual ~ProcessRunner() = default;
    virtual ProcessResult run(const std::vector<std::string>& argv, double timeout_s) = 0;
};

/// fork/exec in its own process group. On deadline the group receives
/// SIGTERM, then SIGKILL after `grace_s`; control returns within
/// timeout + grace even if the child ignores signals.
class PosixProcessRunner : public ProcessRunner {
public:
    explicit PosixProcessRunner(double grace_s = 5.0) : grace_(grace_s) {}
    ProcessResult run(const std::vector<std::string>& argv, double timeout_s) override;

private:
    double grace_;
};

}  // namespace evoconfig
