#pragma once

// Execution substrate: one interface, two backends (simulated and container).

#include <cstddef>
#include <stdexcept>
#include <string>
#include <utility>

#include <nlohmann/json.hpp>

#include "evoconfig/command_model.hpp"
#include "evoconfig/repo_prior.hpp"

namespace evoconfig {

inline constexpr int kTimeoutExitCode = 124;
inline constexpr std::size_t kCaptureCap = 32 * 1024;

enum class BackendKind { container, simulated };
std::string to_string(BackendKind k);

struct EnvironmentState {
    std::string handle;
    int round = 0;
    BackendKind backend = BackendKind::simulated;

    bool operator==(const EnvironmentState&) const = default;
};

struct ExecutionRecord {
    AtomicCommand command{"true"};
    int exit_code = 0;
    std::string stdout_text;
    bool stdout_truncated = false;
    std::string stderr_text;
    bool stderr_truncated = false;
    double duration = 0.0;
    bool timed_out = false;

    /// stdout followed by stderr, as the expert reads them.
    std::string combined_output() const;

    bool operator==(const ExecutionRecord&) const = default;
};

/// Applies the capture cap to both streams, keeping the tail.
ExecutionRecord make_record(const AtomicCommand& cmd, int exit_code, const std::string& out,
                            const std::string& err, double duration, bool timed_out,
                            std::size_t cap = kCaptureCap);

nlohmann::json to_json(const ExecutionRecord& r);
ExecutionRecord record_from_json(const nlohmann::json& j);

struct SnapshotId {
    std::string id;
    int round = 0;

    bool operator==(const SnapshotId&) const = default;
};

class BackendUnavailable : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class ScenarioInvalid : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class SessionClosed : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class SnapshotExpired : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A backend owns the source it was constructed from; init_environment may be
/// called repeatedly, each call yielding an independent fresh E_0.
class Backend {
public:
    virtual ~Backend() = default;

    virtual BackendKind kind() const = 0;
    virtual EnvironmentState init_environment() = 0;
    virtual std::pair<EnvironmentState, ExecutionRecord> execute(const EnvironmentState& state,
                                                                 const AtomicCommand& cmd) = 0;
    virtual SnapshotId snapshot(const EnvironmentState& state) = 0;
    virtual EnvironmentState restore(const SnapshotId& id) = 0;
    virtual bool check_solved(const EnvironmentState& state) = 0;
    /// Releases every environment; later calls throw SessionClosed and
    /// restores throw SnapshotExpired.
    virtual void close() = 0;

    /// Seconds consumed so far by executed commands (virtual for the simulator).
    virtual double elapsed_seconds() const = 0;
    /// Repository snapshot for prior extraction.
    virtual RepoTree repo_tree() const = 0;
    virtual std::string source_name() const = 0;
};

}  // namespace evoconfig
