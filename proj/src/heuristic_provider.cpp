#include "evoconfig/heuristic_provider.hpp"

#include <algorithm>
#include <map>
#include <optional>
#include <regex>
#include <set>

#include "evoconfig/agent.hpp"
#include "evoconfig/diagnosis.hpp"
#include "evoconfig/package_index.hpp"
#include "evoconfig/repo_prior.hpp"
#include "evoconfig/text.hpp"

namespace evoconfig {

namespace {

constexpr const char* kExploreCommand = "find . -maxdepth 3 -type f -not -path './.git/*'";

// Splits "## Header" sections; text before the first header is dropped.
std::map<std::string, std::string> sections(const std::string& body) {
    std::map<std::string, std::string> out;
    std::string current;
    for (const auto& line : text::split_lines(body)) {
        if (line.rfind("## ", 0) == 0) {
            current = line.substr(3);
            out[current];
            continue;
        }
        if (!current.empty()) out[current] += line + "\n";
    }
    return out;
}

std::string strip_flags(const std::string& cmd) {
    std::vector<std::string> kept;
    for (const auto& w : text::split(cmd, ' '))
        if (!w.empty() && w.rfind("--", 0) != 0) kept.push_back(w);
    return text::join(kept, " ");
}

std::vector<std::string> backticked(const std::string& s) {
    std::vector<std::string> out;
    static const std::regex re("`([^`]+)`");
    for (std::sregex_iterator it(s.begin(), s.end(), re), end; it != end; ++it) out.push_back((*it)[1].str());
    return out;
}

// ---------------------------------------------------------------------------
// main-agent role

struct Plan {
    bool known = false;
    DependencyManager manager = DependencyManager::unknown;
    std::string requirements_file;
    bool has_metadata = false;  // setup.py / setup.cfg / pyproject.toml present
    bool needs_install = false;
    PackageLayout layout = PackageLayout::unknown;
};

Plan plan_from_prior(const PriorSummary& p) {
    Plan plan;
    plan.known = true;
    plan.manager = p.dependency.manager;
    for (const auto& e : p.dependency.evidence)
        if (plan.requirements_file.empty() && e.find("requirements") != std::string::npos && e.size() > 4 &&
            e.substr(e.size() - 4) == ".txt")
            plan.requirements_file = e;
    for (const auto& e : p.importability.evidence)
        if (e == "setup.py" || e == "setup.cfg" || e == "pyproject.toml") plan.has_metadata = true;
    plan.needs_install = p.importability.needs_install;
    plan.layout = p.importability.layout;
    return plan;
}

std::vector<std::string> field_list(const std::string& line, const std::string& key) {
    auto pos = line.find(key);
    if (pos == std::string::npos) return {};
    std::string rest = line.substr(pos + key.size());
    std::vector<std::string> out;
    for (auto item : text::split(rest, ',')) {
        item = text::trim(item);
        auto paren = item.find(" (+");
        if (paren != std::string::npos) item = item.substr(0, paren);
        if (!item.empty() && item != "none") out.push_back(item);
    }
    return out;
}

std::string field_word(const std::string& line, const std::string& key) {
    auto pos = line.find(key);
    if (pos == std::string::npos) return "";
    std::string rest = line.substr(pos + key.size());
    auto end = rest.find(';');
    return text::trim(rest.substr(0, end));
}

// Reads the rendered prior block back into a summary.
std::optional<PriorSummary> parse_prior_block(const std::string& block) {
    if (block.find(kNoPrior) != std::string::npos) return std::nullopt;
    PriorSummary s;
    bool seen = false;
    for (const auto& line : text::split_lines(block)) {
        if (line.rfind("dependency: ", 0) == 0) {
            seen = true;
            s.dependency.manager = dependency_manager_from_string(field_word(line, "dependency: "));
            s.dependency.evidence = field_list(line, "evidence: ");
        } else if (line.rfind("importability: ", 0) == 0) {
            s.importability.layout = package_layout_from_string(field_word(line, "importability: "));
            s.importability.needs_install = field_word(line, "install required: ") == "yes";
            s.importability.evidence = field_list(line, "evidence: ");
        }
    }
    if (!seen) return std::nullopt;
    return s;
}

struct ReportView {
    std::string command;
    std::string verdict;
    std::string description;
    std::vector<std::string> risks;
};

struct RoundView {
    int round = 0;
    bool ok = false;
    bool rolled_back = false;
    std::vector<std::string> failed_at;
};

struct AgentView {
    std::optional<PriorSummary> prior;
    std::set<std::string> ok_commands;  // flag-stripped
    std::set<std::string> ok_exact;
    std::vector<RoundView> rounds;
    std::vector<ReportView> reports;
};

AgentView read_context(const std::vector<ChatTurn>& messages) {
    AgentView v;
    static const std::regex ok_line(R"(^round (\d+) \[ok\] \$ (.+)$)");
    static const std::regex result_line(R"(^round (\d+) result: (\S+)(.*)$)");
    static const std::regex rolled_line(R"(^round (\d+) \[rolled back\](.*)$)");
    static const std::regex report_line(R"(^- \[[a-z_]+\] `(.+)` -> ([a-z_]+))");
    for (const auto& turn : messages) {
        if (turn.role != Role::user) continue;
        const std::string& c = turn.content;
        if (c.rfind(kPriorHeader, 0) == 0) {
            v.prior = parse_prior_block(c);
        } else if (c.rfind(kHistoryHeader, 0) == 0) {
            for (const auto& line : text::split_lines(c)) {
                std::smatch m;
                if (std::regex_match(line, m, ok_line)) {
                    v.ok_commands.insert(strip_flags(m[2].str()));
                    v.ok_exact.insert(m[2].str());
                } else if (std::regex_match(line, m, result_line)) {
                    RoundView r;
                    r.round = std::stoi(m[1].str());
                    r.ok = m[2].str() == "ok";
                    r.failed_at = backticked(m[3].str());
                    v.rounds.push_back(r);
                } else if (std::regex_match(line, m, rolled_line)) {
                    RoundView r;
                    r.round = std::stoi(m[1].str());
                    r.rolled_back = true;
                    r.failed_at = backticked(m[2].str());
                    v.rounds.push_back(r);
                }
            }
        } else if (c.rfind(kReportsHeader, 0) == 0) {
            for (const auto& line : text::split_lines(c)) {
                std::smatch m;
                if (std::regex_search(line, m, report_line)) {
                    v.reports.push_back({m[1].str(), m[2].str(), "", {}});
                } else if (!v.reports.empty() && line.rfind("  description: ", 0) == 0) {
                    v.reports.back().description = line.substr(15);
                } else if (!v.reports.empty() && line.rfind("  risk: ", 0) == 0) {
                    v.reports.back().risks.push_back(line.substr(8));
                }
            }
        }
    }
    return v;
}

// Without a prior the agent explores first and reads the expert's listing digest.
std::optional<PriorSummary> prior_from_listing(const AgentView& v) {
    for (const auto& r : v.reports) {
        if (r.command != kExploreCommand) continue;
        auto pos = r.description.find("project files: ");
        std::map<std::string, std::string> files;
        if (pos != std::string::npos) {
            for (auto item : text::split(r.description.substr(pos + 15), ',')) {
                item = text::trim(item);
                if (item.empty() || item.find("...") != std::string::npos) continue;
                files[item] = "";
            }
        }
        return extract_prior(RepoTree::from_files(files));
    }
    return std::nullopt;
}

bool failed_step(const AgentView& v, const std::string& step) {
    for (const auto& r : v.rounds)
        for (const auto& f : r.failed_at)
            if (strip_flags(f) == strip_flags(step)) return true;
    return false;
}

bool rolled_back_at(const AgentView& v, const std::string& step) {
    for (const auto& r : v.rounds)
        if (r.rolled_back)
            for (const auto& f : r.failed_at)
                if (strip_flags(f) == strip_flags(step)) return true;
    return false;
}

int consecutive_failures(const AgentView& v) {
    int k = 0;
    for (auto it = v.rounds.rbegin(); it != v.rounds.rend() && !it->ok; ++it) ++k;
    return k;
}

std::string reply_with(const std::string& thought, const std::vector<std::string>& commands) {
    std::string out = thought + "\n```bash\n";
    for (const auto& c : commands) out += c + "\n";
    return out + "```\n";
}

}  // namespace

std::string policy_agent_reply(const std::vector<ChatTurn>& messages) {
    AgentView view = read_context(messages);
    const bool exploring = !view.prior.has_value();
    std::vector<std::string> commands;
    std::optional<PriorSummary> prior = view.prior;
    if (exploring) {
        commands.push_back(kExploreCommand);
        prior = prior_from_listing(view);
        if (!prior) return reply_with("No repository prior; list the project files first.", commands);
    }
    const Plan plan = plan_from_prior(*prior);
    const std::string install_project = "pip install -e .";
    auto done = [&](const std::string& c) { return view.ok_commands.count(strip_flags(c)) > 0; };

    // Risk notes of the last round quote commands worth adopting.
    for (const auto& r : view.reports)
        for (const auto& note : r.risks)
            for (const auto& c : backticked(note))
                if (!view.ok_exact.count(c) && std::find(commands.begin(), commands.end(), c) == commands.end()) commands.push_back(c);

    std::vector<std::vector<std::string>> phases;
    if (plan.manager == DependencyManager::poetry) {
        phases.push_back({"pip install poetry", "poetry install"});
    } else if (plan.manager == DependencyManager::pip_requirements && !plan.requirements_file.empty()) {
        phases.push_back({"pip install -r " + plan.requirements_file});
        if (plan.needs_install) phases.push_back({install_project});
    } else if (plan.manager == DependencyManager::setuptools || plan.manager == DependencyManager::pep517_generic) {
        phases.push_back({install_project});
    } else if (plan.layout == PackageLayout::src_layout) {
        phases.push_back({install_project});
    }
    phases.push_back({"pip install pytest", "python -m pytest --collect-only -q"});

    const int k = consecutive_failures(view);
    std::string thought;
    std::vector<std::string> step;
    for (std::size_t p = 0; p < phases.size(); ++p) {
        const bool last = p + 1 == phases.size();
        std::vector<std::string> todo;
        for (const auto& c : phases[p]) {
            if (done(c) && !last) continue;
            // a rolled-back project install on a flat checkout is not needed for imports
            if (c == install_project && rolled_back_at(view, c) && plan.layout != PackageLayout::src_layout) continue;
            // requirements replaced by the project metadata after repeated failures
            if (c.rfind("pip install -r ", 0) == 0 && done(install_project) && failed_step(view, c)) continue;
            todo.push_back(c);
        }
        if (todo.empty()) continue;
        step = todo;
        thought = last ? "Dependencies are in place; check that the test suite launches."
                       : "Next configuration step from the repository layout.";
        if (k >= 2 && step.front().rfind("pip install -r ", 0) == 0 && failed_step(view, step.front()) &&
            plan.has_metadata) {
            step.front() = install_project;
            thought = "The requirements file keeps failing; install through the project metadata instead.";
        } else if (k >= 1) {
            thought = "The previous round did not succeed; try the step again.";
        }
        break;
    }
    for (const auto& c : step)
        if (std::find(commands.begin(), commands.end(), c) == commands.end()) commands.push_back(c);
    return reply_with(thought, commands);
}

// ---------------------------------------------------------------------------
// expert role

std::string distribution_for_module(const std::string& module) {
    static const std::map<std::string, std::string> aliases = {
        {"yaml", "pyyaml"},        {"cv2", "opencv-python"}, {"sklearn", "scikit-learn"}, {"PIL", "pillow"},
        {"bs4", "beautifulsoup4"}, {"dateutil", "python-dateutil"}};
    auto it = aliases.find(module);
    if (it != aliases.end()) return it->second;
    return text::replace_all(module, "_", "-");
}

namespace {

struct Pin {
    std::string name;
    std::string spec;  // as written
    std::optional<std::string> exact;
};

struct IndexEvidence {
    std::vector<std::string> versions;                       // newest first
    std::map<std::string, std::vector<std::string>> requires_;  // version -> specs
};

std::map<std::string, IndexEvidence> read_index_evidence(const std::string& evidence) {
    std::map<std::string, IndexEvidence> out;
    static const std::regex head(R"(^### pip index versions (\S+) \(exit 0\)$)");
    static const std::regex req(R"(^\s+(\S+) requires: (.*?)( \(sdist only\))?$)");
    std::string current;
    for (const auto& line : text::split_lines(evidence)) {
        std::smatch m;
        if (line.rfind("### ", 0) == 0) {
            current = std::regex_match(line, m, head) ? sim::normalize_package_name(m[1].str()) : "";
            continue;
        }
        if (current.empty()) continue;
        if (line.rfind("Available versions: ", 0) == 0) {
            for (auto v : text::split(line.substr(20), ',')) out[current].versions.push_back(text::trim(v));
        } else if (std::regex_match(line, m, req)) {
            std::vector<std::string> specs;
            if (m[2].str() != "-")
                for (auto s : text::split(m[2].str(), ';')) specs.push_back(text::trim(s));
            out[current].requires_[m[1].str()] = specs;
        }
    }
    return out;
}

std::string target_file(const std::string& cmd) {
    auto words = text::shell_words(cmd);
    for (std::size_t i = 0; i + 1 < words.size(); ++i)
        if (words[i] == "-r" || words[i] == "--requirement") return words[i + 1];
    return "";
}

// Rewrites `from` to `to` where it was written: in the requirements file, or
// in the command itself.
std::vector<std::string> rewrite_pin(const std::string& cmd, const std::string& from, const std::string& to) {
    const std::string file = target_file(cmd);
    if (!file.empty()) return {"sed -i 's/" + from + "/" + to + "/' " + file, cmd};
    if (cmd.find(from) != std::string::npos) return {text::replace_all(cmd, from, to)};
    return {};
}

ModelVerdict conflict_verdict(const std::string& cmd, const std::string& output, const std::string& evidence) {
    ModelVerdict v;
    v.verdict = Verdict::failure;
    v.error_type = ErrorType::dependency_conflict;
    static const std::regex user_re(R"(^\s+The user requested (\S+)$)");
    static const std::regex dep_re(R"(^\s+(\S+) (\S+) depends on (\S+)$)");
    static const std::regex pair_re(R"(^\s+(\S+) is declared incompatible with (\S+)$)");
    std::map<std::string, Pin> pins;
    struct Dep {
        std::string pkg, version, spec;
    };
    std::vector<Dep> deps;
    std::optional<std::pair<std::string, std::string>> declared;
    static const std::regex header_re(R"(Cannot install (.+) because)");
    auto add_pin = [&](const std::string& spec) {
        try {
            auto r = sim::parse_requirement(spec);
            Pin p{r.name, spec, std::nullopt};
            if (r.clauses.size() == 1 && r.clauses[0].op == "==") p.exact = r.clauses[0].version;
            pins[r.name] = p;
        } catch (const std::invalid_argument&) {
        }
    };
    for (const auto& line : text::split_lines(output)) {
        std::smatch m;
        if (std::regex_search(line, m, header_re)) {
            std::string parties = m[1].str();
            for (auto pos = parties.find(" and "); pos != std::string::npos; pos = parties.find(" and "))
                parties.replace(pos, 5, ", ");
            for (const auto& spec : text::split(parties, ',')) add_pin(text::trim(spec));
        } else if (std::regex_match(line, m, user_re)) {
            add_pin(m[1].str());
        } else if (std::regex_match(line, m, dep_re)) {
            deps.push_back({sim::normalize_package_name(m[1].str()), m[2].str(), m[3].str()});
        } else if (std::regex_match(line, m, pair_re)) {
            declared = std::make_pair(m[1].str(), m[2].str());
        }
    }

    if (declared) {
        // the package the resolver was adding when the clash surfaced
        const std::string drop = declared->first;
        const std::string file = target_file(cmd);
        v.description = drop + " cannot be installed together with " + declared->first + "; drop " + drop;
        if (!file.empty()) v.repair_commands = {"sed -i '/^" + drop + "[=<>~!; ]/d' " + file, cmd};
        return v;
    }

    const auto index = read_index_evidence(evidence);
    auto compatible = [&](const std::vector<std::string>& specs) {
        for (const auto& s : specs) {
            sim::Requirement r;
            try {
                r = sim::parse_requirement(s);
            } catch (const std::invalid_argument&) {
                return false;
            }
            auto pin = pins.find(r.name);
            if (pin != pins.end() && pin->second.exact && !r.satisfied_by(*pin->second.exact)) return false;
        }
        return true;
    };
    for (const auto& d : deps) {
        // a dependency the pins already satisfy is not the culprit
        if (compatible({d.spec})) continue;
        auto pin = pins.find(d.pkg);
        if (pin != pins.end() && pin->second.exact && index.count(d.pkg)) {
            // directly requested: move to the newest release that fits the other pins
            auto ev = index.find(d.pkg);
            for (const auto& ver : ev->second.versions) {
                if (ver == d.version) continue;
                auto reqs = ev->second.requires_.find(ver);
                if (reqs == ev->second.requires_.end() || !compatible(reqs->second)) continue;
                v.repair_commands = rewrite_pin(cmd, pin->second.spec, d.pkg + "==" + ver);
                v.description = d.pkg + " " + d.version + " requires " + d.spec + ", which contradicts the pinned "
                                "versions; " + d.pkg + " " + ver + " is compatible";
                return v;
            }
        }
        // pulled in transitively, or no release of it fits: relax the user's pin to what the dependency needs
        sim::Requirement need;
        try {
            need = sim::parse_requirement(d.spec);
        } catch (const std::invalid_argument&) {
            continue;
        }
        auto user = pins.find(need.name);
        if (user == pins.end()) continue;
        v.repair_commands = rewrite_pin(cmd, user->second.spec, d.spec);
        v.description = d.pkg + " " + d.version + " needs " + d.spec + " but " + user->second.spec +
                        " is pinned; relax the pin";
        return v;
    }
    v.description = "conflicting dependency pins; no compatible release found in the evidence";
    return v;
}

}  // namespace

std::string policy_expert_reply(const std::string& prompt) {
    auto sec = sections(prompt);
    ExecutionRecord rec;
    const std::string cmd = text::trim(sec["Command"]);
    try {
        rec.command = AtomicCommand(cmd.empty() ? "true" : cmd);
    } catch (const std::invalid_argument&) {
    }
    const std::string exit_text = text::trim(sec["Exit code"]);
    try {
        rec.exit_code = std::stoi(exit_text);
    } catch (const std::exception&) {
        rec.exit_code = 1;
    }
    rec.timed_out = exit_text.find("(timed out)") != std::string::npos;
    rec.stdout_text = sec["Stdout"];
    rec.stderr_text = sec["Stderr"];
    const std::string output = rec.combined_output();
    const std::string evidence = sec["Evidence"];

    ModelVerdict v;
    static const std::regex collected(R"(collected (\d+) items?|(\d+) passed|(\d+) failed)");
    std::smatch m;
    const bool is_pytest = cmd.find("pytest") != std::string::npos;
    if (!rec.timed_out && (rec.exit_code == 0 || (is_pytest && rec.exit_code == 1 && std::regex_search(output, m, collected)))) {
        v.verdict = Verdict::success;
        std::string warning;
        for (const auto& line : text::split_lines(output))
            if (warning.empty() && (line.rfind("WARNING", 0) == 0 || line.rfind("DEPRECATION", 0) == 0)) warning = line;
        v.description = warning.empty() ? "command completed" : "completed with a warning: " + text::clip(warning, 200);
        if (is_pytest && rec.exit_code == 1) v.description = "tests launched; some tests fail";
        return render_expert_reply(v);
    }

    v.verdict = Verdict::failure;
    v.error_type = classify_failure_text(rec);
    const std::string key = key_error_line(rec);
    v.description = key.empty() ? "exit code " + std::to_string(rec.exit_code) : key;
    const bool is_pip_install = cmd.rfind("pip install", 0) == 0 || cmd.rfind("pip3 install", 0) == 0 ||
                                cmd.find("-m pip install") != std::string::npos;

    static const std::regex no_module(R"(No module named '?([A-Za-z0-9_]+)'?)");
    static const std::regex not_found(R"(sh: \d+: (\S+): not found)");
    if (rec.timed_out) {
        v.error_type = ErrorType::timeout;
        v.description = "command timed out" + std::string(is_pip_install ? " while building from source" : "");
        if (is_pip_install && cmd.find("--prefer-binary") == std::string::npos)
            v.repair_commands = {cmd + " --prefer-binary"};
    } else if (rec.exit_code == 137 || text::contains(output, "Killed")) {
        v.error_type = ErrorType::unknown;
        v.description = "process was killed, most likely out of memory; the sandbox cannot provide more";
    } else if (is_pytest && rec.exit_code == 5) {
        v.error_type = ErrorType::missing_file;
        v.description = "pytest collected no tests; the repository has no runnable test suite";
    } else if (v.error_type == ErrorType::dependency_conflict) {
        v = conflict_verdict(cmd, output, evidence);
    } else if (std::regex_search(output, m, no_module)) {
        const std::string module = m[1].str();
        std::string dist = module == "pytest" ? "pytest" : distribution_for_module(module);
        v.error_type = ErrorType::missing_dependency;
        v.description = "module " + module + " is not installed (provided by " + dist + ")";
        v.repair_commands = {"pip install " + dist, cmd};
    } else if (std::regex_search(output, m, not_found) && m[1].str() != "gcc") {
        v.error_type = ErrorType::missing_dependency;
        v.description = m[1].str() + " is not installed";
        v.repair_commands = {"pip install " + m[1].str(), cmd};
    } else if (v.error_type == ErrorType::toolchain_mismatch) {
        v.description = "building a native extension needs a C compiler: " + v.description;
        v.repair_commands = {"apt-get install -y build-essential", cmd};
    } else if (v.error_type == ErrorType::network) {
        v.description = "package download timed out: " + v.description;
        if (is_pip_install && cmd.find("--default-timeout") == std::string::npos)
            v.repair_commands = {cmd + " --default-timeout=100"};
    } else if (v.error_type == ErrorType::permission && is_pip_install && cmd.find("--user") == std::string::npos) {
        v.repair_commands = {cmd + " --user"};
    }
    return render_expert_reply(v);
}

Completion PolicyProvider::complete(const std::vector<ChatTurn>& messages) {
    if (messages.empty()) throw ProviderError("empty message list");
    std::string reply;
    if (messages.front().content == kExpertSystemPrompt) {
        // the last user turn holds the prompt; a format retry repeats it earlier
        std::string prompt;
        for (const auto& t : messages)
            if (t.role == Role::user && t.content.rfind("## Command", 0) == 0) prompt = t.content;
        reply = policy_expert_reply(prompt);
    } else {
        reply = policy_agent_reply(messages);
    }
    Completion c;
    c.reply = {Role::assistant, reply};
    c.usage.prompt_tokens = estimate_tokens(messages);
    c.usage.completion_tokens = estimate_tokens(reply);
    return c;
}

}  // namespace evoconfig
