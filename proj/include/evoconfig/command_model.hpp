#pragma once

// Atomic commands, per-round action sets, and the read-only/mutating
// classification that gates the expert's diagnostic tools.

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace evoconfig {

inline constexpr double kDefaultCommandTimeout = 600.0;
inline constexpr std::string_view kTerminator = "TERMINATE";

enum class CommandOrigin { main_agent, expert_repair, expert_tool, dockerfile_replay };

std::string to_string(CommandOrigin o);
CommandOrigin command_origin_from_string(const std::string& s);

/// A single-line shell command. Construction enforces the invariants:
/// non-empty after trimming, no newline characters, positive timeout.
class AtomicCommand {
public:
    AtomicCommand(std::string text, CommandOrigin origin = CommandOrigin::main_agent,
                  double timeout_s = kDefaultCommandTimeout);

    const std::string& text() const { return text_; }
    CommandOrigin origin() const { return origin_; }
    double timeout() const { return timeout_; }

    AtomicCommand with_origin(CommandOrigin o) const { return AtomicCommand(text_, o, timeout_); }

    bool operator==(const AtomicCommand&) const = default;

private:
    std::string text_;
    CommandOrigin origin_;
    double timeout_;
};

struct ActionSet {
    int round = 1;
    std::vector<AtomicCommand> commands;
    std::string thought;
    bool terminate = false;

    bool operator==(const ActionSet&) const = default;
};

class MalformedAction : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Parses a model reply into an action set.
///
/// Commands come from ``` fenced blocks, one per line. Blank lines and lines
/// starting with '#' are dropped; trailing-backslash continuations are joined.
/// Text outside fences becomes the thought. A reply with no fence is valid
/// only when a line equals the terminator token; otherwise MalformedAction.
ActionSet parse_action(std::string_view model_output, int round,
                       double timeout_s = kDefaultCommandTimeout);

/// Inverse of parse_action for the canonical form.
std::string render_action(const ActionSet& action);

enum class CommandClass { read_only, mutating, ambiguous };
std::string to_string(CommandClass c);

CommandClass classify_command(const AtomicCommand& cmd);
CommandClass classify_command_text(std::string_view text);

enum class ToolRejection { not_single_line, mutating_effect, ambiguous_effect, chained_mutation };
std::string to_string(ToolRejection r);

/// nullopt means accepted.
std::optional<ToolRejection> validate_tool_command(const AtomicCommand& cmd);
std::optional<ToolRejection> validate_tool_text(std::string_view text);

}  // namespace evoconfig
