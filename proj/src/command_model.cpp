#include "evoconfig/command_model.hpp"

#include <algorithm>
#include <set>

#include "evoconfig/text.hpp"

namespace evoconfig {

std::string to_string(CommandOrigin o) {
    switch (o) {
        case CommandOrigin::main_agent: return "main_agent";
        case CommandOrigin::expert_repair: return "expert_repair";
        case CommandOrigin::expert_tool: return "expert_tool";
        case CommandOrigin::dockerfile_replay: return "dockerfile_replay";
    }
    return "main_agent";
}

CommandOrigin command_origin_from_string(const std::string& s) {
    if (s == "expert_repair") return CommandOrigin::expert_repair;
    if (s == "expert_tool") return CommandOrigin::expert_tool;
    if (s == "dockerfile_replay") return CommandOrigin::dockerfile_replay;
    if (s == "main_agent") return CommandOrigin::main_agent;
    throw std::invalid_argument("unknown command origin: " + s);
}

AtomicCommand::AtomicCommand(std::string text, CommandOrigin origin, double timeout_s)
    : text_(text::trim(text)), origin_(origin), timeout_(timeout_s) {
    if (text_.empty()) throw std::invalid_argument("atomic command is empty");
    if (text_.find_first_of("\r\n") != std::string::npos)
        throw std::invalid_argument("atomic command contains a newline: " + text::clip(text_, 80));
    if (!(timeout_ > 0)) throw std::invalid_argument("atomic command timeout must be positive");
}

// ---------------------------------------------------------------------------
// parsing

namespace {

bool is_fence(std::string_view line) {
    auto t = text::trim(line);
    return t.rfind("```", 0) == 0;
}

}  // namespace

ActionSet parse_action(std::string_view model_output, int round, double timeout_s) {
    if (round < 1) throw std::invalid_argument("round must be >= 1");
    ActionSet out;
    out.round = round;

    std::vector<std::string> thought_lines;
    bool in_fence = false, saw_fence = false;
    std::string pending;  // backslash continuation accumulator

    auto flush_command = [&](std::string line) {
        line = text::trim(line);
        if (line.empty() || line[0] == '#') return;
        out.commands.emplace_back(line, CommandOrigin::main_agent, timeout_s);
    };

    for (const auto& line : text::split_lines(model_output)) {
        if (is_fence(line)) {
            if (in_fence && !pending.empty()) {
                flush_command(pending);
                pending.clear();
            }
            in_fence = !in_fence;
            saw_fence = true;
            continue;
        }
        if (!in_fence) {
            if (text::trim(line) == kTerminator) {
                out.terminate = true;
            } else {
                thought_lines.push_back(line);
            }
            continue;
        }
        std::string body = line;
        while (!body.empty() && (body.back() == ' ' || body.back() == '\t')) body.pop_back();
        if (!body.empty() && body.back() == '\\') {
            body.pop_back();
            pending += (pending.empty() ? "" : " ") + text::trim(body);
            continue;
        }
        if (!pending.empty()) {
            flush_command(pending + " " + text::trim(body));
            pending.clear();
        } else {
            flush_command(body);
        }
    }
    if (!pending.empty()) flush_command(pending);

    if (!saw_fence && !out.terminate)
        throw MalformedAction("reply contains no fenced command block and no " + std::string(kTerminator) +
                              " line");
    if (out.commands.empty() && !out.terminate)
        throw MalformedAction("the command block is empty and there is no " + std::string(kTerminator) + " line");
    out.thought = text::trim(text::join(thought_lines, "\n"));
    return out;
}

std::string render_action(const ActionSet& action) {
    std::string out;
    if (!action.thought.empty()) out += action.thought + "\n";
    if (!action.commands.empty() || !action.terminate) {
        out += "```bash\n";
        for (const auto& c : action.commands) out += c.text() + "\n";
        out += "```\n";
    }
    if (action.terminate) out += std::string(kTerminator) + "\n";
    return out;
}

// ---------------------------------------------------------------------------
// classification

std::string to_string(CommandClass c) {
    switch (c) {
        case CommandClass::read_only: return "read_only";
        case CommandClass::mutating: return "mutating";
        case CommandClass::ambiguous: return "ambiguous";
    }
    return "ambiguous";
}

std::string to_string(ToolRejection r) {
    switch (r) {
        case ToolRejection::not_single_line: return "not_single_line";
        case ToolRejection::mutating_effect: return "mutating_effect";
        case ToolRejection::ambiguous_effect: return "ambiguous_effect";
        case ToolRejection::chained_mutation: return "chained_mutation";
    }
    return "ambiguous_effect";
}

namespace {

struct Segment {
    std::string text;
    bool chained = false;  // joined to its predecessor by ; && || or &
};

// Splits on unquoted ; && || & and |. Pipes keep chained=false.
std::vector<Segment> split_segments(std::string_view s) {
    std::vector<Segment> out;
    std::string cur;
    bool next_chained = false;
    char quote = 0;
    auto push = [&](bool chained_after) {
        out.push_back({cur, next_chained});
        cur.clear();
        next_chained = chained_after;
    };
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (quote) {
            if (c == quote) quote = 0;
            cur += c;
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            cur += c;
        } else if (c == '\\' && i + 1 < s.size()) {
            cur += c;
            cur += s[++i];
        } else if (c == ';') {
            push(true);
        } else if (c == '&' && i + 1 < s.size() && s[i + 1] == '&') {
            ++i;
            push(true);
        } else if (c == '|' && i + 1 < s.size() && s[i + 1] == '|') {
            ++i;
            push(true);
        } else if (c == '|') {
            push(false);
        } else if (c == '&' && (cur.empty() || cur.back() != '>') &&
                   !(i + 1 < s.size() && s[i + 1] == '>')) {
            push(true);
        } else {
            cur += c;
        }
    }
    out.push_back({cur, next_chained});
    return out;
}

const std::set<std::string>& mutation_tokens() {
    static const std::set<std::string> tokens = {
        "install",  "uninstall", "remove",     "purge",       "rm",       "rmdir",     "mv",
        "cp",       "mkdir",     "touch",      "chmod",       "chown",    "ln",        "tee",
        "dd",       "truncate",  "wget",       "--in-place",  "-delete",  "-exec",     "-execdir",
        "upgrade",   "--upgrade",  "-U",          "add",      "update",    "create",
        "reset",    "checkout",  "clean",      "apply",       "commit",   "pull",      "push",
        "clone",    "develop",   "download",   "wheel",       "build",    "make",      "patch",
        "unlink",   "rsync",     "kill",       "pkill",       "--force-reinstall",     "sync",
        "lock",     "shred",     "mkfs",       "export",      "source",   "eval"};
    return tokens;
}

const std::set<std::string>& read_only_heads() {
    static const std::set<std::string> heads = {
        "cat",   "ls",    "find",   "grep",  "egrep", "fgrep", "rg",     "head",   "tail",  "which",
        "whereis", "type", "env",   "printenv", "echo", "pwd",  "wc",     "file",   "stat",  "du",
        "df",    "uname", "id",     "whoami", "date", "sort",  "uniq",   "cut",    "diff",  "tree",
        "true",  "test",  "nproc",  "free",   "lscpu", "realpath", "dirname", "basename", "md5sum",
        "sha256sum", "ldd", "nvidia-smi", "hostname", "locale"};
    return heads;
}

bool is_devnull_redirect(std::string_view word) {
    static const std::set<std::string_view> ok = {">/dev/null", "2>/dev/null", "&>/dev/null",
                                                  "1>/dev/null", "2>&1", ">&2", "1>&2"};
    return ok.count(word) > 0;
}

// Detects an unquoted write redirection in a raw segment. Descriptor
// duplication (2>&1) and redirection to /dev/null are not writes.
bool has_write_redirect(std::string_view seg) {
    char quote = 0;
    for (std::size_t i = 0; i < seg.size(); ++i) {
        char c = seg[i];
        if (quote) {
            if (c == quote) quote = 0;
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            continue;
        }
        if (c != '>') continue;
        std::size_t e = i + 1;
        if (e < seg.size() && seg[e] == '>') ++e;
        if (e < seg.size() && seg[e] == '&') {
            i = e;
            continue;
        }
        while (e < seg.size() && seg[e] == ' ') ++e;
        std::size_t t = e;
        while (t < seg.size() && !std::isspace(static_cast<unsigned char>(seg[t]))) ++t;
        if (seg.substr(e, t - e) == "/dev/null") {
            i = t;
            continue;
        }
        return true;
    }
    return false;
}

bool python_code_writes(const std::string& code) {
    static const char* patterns[] = {".write(", "os.remove", "os.unlink", "shutil.", "subprocess",
                                     "os.system", "rmtree", "mkdir", "rename", "os.popen",
                                     "'w'", "\"w\"", "'a'", "\"a\"", "'wb'", "\"wb\"", "exec(", "eval(",
                                     "__import__", "pip.main", "ensurepip"};
    for (auto p : patterns)
        if (text::contains(code, p)) return true;
    return false;
}

CommandClass classify_words(std::vector<std::string> words) {
    // Strip wrappers that do not change the effect of the wrapped command.
    while (!words.empty()) {
        const auto& w = words.front();
        if (w == "sudo" || w == "nice" || w == "command" || w == "time") {
            words.erase(words.begin());
        } else if (w == "timeout" && words.size() > 1) {
            words.erase(words.begin(), words.begin() + 2);
        } else if (w.find('=') != std::string::npos && w.front() != '-' &&
                   w.find('=') > 0 && words.size() > 1) {
            words.erase(words.begin());
        } else {
            break;
        }
    }
    if (words.empty()) return CommandClass::ambiguous;

    std::string head = words[0];
    if (auto slash = head.rfind('/'); slash != std::string::npos) head = head.substr(slash + 1);

    // python -c is judged by its code; python -m pip is judged as pip.
    bool python_head = head == "python" || head.rfind("python3", 0) == 0 || head == "python2";
    if (python_head && words.size() >= 3 && words[1] == "-c") {
        return python_code_writes(words[2]) ? CommandClass::mutating : CommandClass::read_only;
    }
    if (python_head && words.size() >= 2 && words[1] == "setup.py") return CommandClass::mutating;
    if (python_head && words.size() >= 3 && words[1] == "-m") {
        std::vector<std::string> rest(words.begin() + 2, words.end());
        if (rest[0] == "pytest") {
            bool collect_only = std::find(rest.begin(), rest.end(), "--collect-only") != rest.end();
            return collect_only ? CommandClass::read_only : CommandClass::ambiguous;
        }
        if (rest[0] == "pip") return classify_words(rest);
        if (rest[0] == "site" || rest[0] == "platform" || rest[0] == "sysconfig")
            return CommandClass::read_only;
    }

    for (const auto& w : words)
        if (mutation_tokens().count(w)) return CommandClass::mutating;
    if ((head == "sed" || head == "perl") && std::any_of(words.begin(), words.end(), [](const std::string& w) {
            return w.rfind("-i", 0) == 0 || w.rfind("-pi", 0) == 0;
        }))
        return CommandClass::mutating;

    if (head == "pytest") {
        bool collect_only = std::find(words.begin(), words.end(), "--collect-only") != words.end();
        return collect_only ? CommandClass::read_only : CommandClass::ambiguous;
    }
    if (read_only_heads().count(head)) {
        if (head == "env" && words.size() > 1) return CommandClass::ambiguous;
        return CommandClass::read_only;
    }
    const std::string second = words.size() > 1 ? words[1] : "";
    if (second == "--version" || second == "-V" || second == "-v" || (second == "version" && words.size() == 2))
        return CommandClass::read_only;
    if (python_head && words.size() == 1) return CommandClass::ambiguous;

    static const std::set<std::string> pip_ro = {"show", "list", "freeze", "check", "index", "config",
                                                 "debug", "inspect", "--version", "search", "help"};
    static const std::set<std::string> conda_ro = {"list", "info", "search", "--version", "env"};
    static const std::set<std::string> poetry_ro = {"show", "check", "--version", "env", "config", "about"};
    static const std::set<std::string> git_ro = {"status", "log", "diff", "show", "branch", "rev-parse",
                                                 "describe", "ls-files", "remote"};
    static const std::set<std::string> apt_ro = {"list", "show", "policy", "search", "depends"};
    if ((head == "pip" || head == "pip3") && pip_ro.count(second)) return CommandClass::read_only;
    if (head == "conda" && conda_ro.count(second)) return CommandClass::read_only;
    if (head == "poetry" && poetry_ro.count(second)) return CommandClass::read_only;
    if (head == "git" && git_ro.count(second)) return CommandClass::read_only;
    if ((head == "apt-cache" || head == "apt") && apt_ro.count(second)) return CommandClass::read_only;
    if (head == "dpkg" && (second == "-l" || second == "-s" || second == "-L")) return CommandClass::read_only;
    return CommandClass::ambiguous;
}

CommandClass classify_segment(const std::string& seg) {
    if (text::contains(seg, "$(") || text::contains(seg, "`") || text::contains(seg, "<(") ||
        text::contains(seg, ">("))
        return CommandClass::ambiguous;
    if (has_write_redirect(seg)) return CommandClass::mutating;
    std::vector<std::string> words;
    for (auto& w : text::shell_words(seg))
        if (!is_devnull_redirect(w)) words.push_back(std::move(w));
    return classify_words(std::move(words));
}

CommandClass combine(CommandClass a, CommandClass b) {
    if (a == CommandClass::mutating || b == CommandClass::mutating) return CommandClass::mutating;
    if (a == CommandClass::ambiguous || b == CommandClass::ambiguous) return CommandClass::ambiguous;
    return CommandClass::read_only;
}

}  // namespace

CommandClass classify_command_text(std::string_view text) {
    if (text::trim(text).empty()) return CommandClass::ambiguous;
    CommandClass out = CommandClass::read_only;
    for (const auto& seg : split_segments(text)) {
        if (text::trim(seg.text).empty()) {
            out = combine(out, CommandClass::ambiguous);
            continue;
        }
        out = combine(out, classify_segment(seg.text));
    }
    return out;
}

CommandClass classify_command(const AtomicCommand& cmd) { return classify_command_text(cmd.text()); }

std::optional<ToolRejection> validate_tool_text(std::string_view text) {
    if (text.find_first_of("\r\n") != std::string_view::npos || text::contains(text, "<<"))
        return ToolRejection::not_single_line;
    if (text::trim(text).empty()) return ToolRejection::ambiguous_effect;

    const auto segments = split_segments(text);
    const bool chained = std::any_of(segments.begin(), segments.end(), [](const Segment& s) { return s.chained; });
    CommandClass overall = CommandClass::read_only;
    for (const auto& seg : segments) {
        CommandClass c = text::trim(seg.text).empty() ? CommandClass::ambiguous : classify_segment(seg.text);
        if (c == CommandClass::mutating && chained) return ToolRejection::chained_mutation;
        overall = combine(overall, c);
    }
    if (overall == CommandClass::mutating) return ToolRejection::mutating_effect;
    if (overall == CommandClass::ambiguous) return ToolRejection::ambiguous_effect;
    return std::nullopt;
}

std::optional<ToolRejection> validate_tool_command(const AtomicCommand& cmd) {
    return validate_tool_text(cmd.text());
}

}  // namespace evoconfig
