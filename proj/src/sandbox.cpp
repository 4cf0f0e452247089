#include "evoconfig/sandbox.hpp"

#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

std::string to_string(BackendKind k) { return k == BackendKind::container ? "container" : "simulated"; }

std::string ExecutionRecord::combined_output() const {
    if (stderr_text.empty()) return stdout_text;
    if (stdout_text.empty()) return stderr_text;
    return stdout_text + (stdout_text.back() == '\n' ? "" : "\n") + stderr_text;
}

ExecutionRecord make_record(const AtomicCommand& cmd, int exit_code, const std::string& out,
                            const std::string& err, double duration, bool timed_out, std::size_t cap) {
    ExecutionRecord r;
    r.command = cmd;
    r.exit_code = timed_out ? kTimeoutExitCode : exit_code;
    r.stdout_text = text::keep_tail(out, cap, r.stdout_truncated);
    r.stderr_text = text::keep_tail(err, cap, r.stderr_truncated);
    r.duration = duration;
    r.timed_out = timed_out;
    return r;
}

json to_json(const ExecutionRecord& r) {
    return {{"command", r.command.text()},
            {"origin", to_string(r.command.origin())},
            {"timeout", r.command.timeout()},
            {"exit_code", r.exit_code},
            {"stdout", r.stdout_text},
            {"stdout_truncated", r.stdout_truncated},
            {"stderr", r.stderr_text},
            {"stderr_truncated", r.stderr_truncated},
            {"duration", r.duration},
            {"timed_out", r.timed_out}};
}

ExecutionRecord record_from_json(const json& j) {
    ExecutionRecord r;
    r.command = AtomicCommand(j.at("command").get<std::string>(),
                              command_origin_from_string(j.value("origin", "main_agent")),
                              j.value("timeout", kDefaultCommandTimeout));
    r.exit_code = j.at("exit_code").get<int>();
    r.stdout_text = j.value("stdout", "");
    r.stdout_truncated = j.value("stdout_truncated", false);
    r.stderr_text = j.value("stderr", "");
    r.stderr_truncated = j.value("stderr_truncated", false);
    r.duration = j.value("duration", 0.0);
    r.timed_out = j.value("timed_out", false);
    return r;
}

}  // namespace evoconfig
