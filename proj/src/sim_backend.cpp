#include "evoconfig/sim_backend.hpp"

#include <algorithm>
#include <cstdio>
#include <regex>
#include <sstream>

#include "evoconfig/text.hpp"

namespace evoconfig::sim {

namespace {

const std::set<std::string> kStdlib = {"os",       "sys",       "json",     "re",      "subprocess", "pathlib",
                                       "typing",   "collections", "math",   "unittest", "importlib", "platform",
                                       "site",     "sysconfig", "setuptools", "pip",   "io",        "itertools",
                                       "functools", "logging",  "shutil",   "tempfile", "argparse",  "dataclasses"};

std::string norm_path(std::string p) {
    p = text::trim(p);
    if (p.rfind("/workspace/", 0) == 0) p = p.substr(11);
    else if (p == "/workspace") p = ".";
    while (p.rfind("./", 0) == 0) p = p.substr(2);
    while (p.size() > 1 && p.back() == '/') p.pop_back();
    return p.empty() ? "." : p;
}

bool fs_has_file(const SimState& st, const std::string& path) { return st.fs.count(norm_path(path)) > 0; }

bool fs_has_dir(const SimState& st, const std::string& path) {
    std::string p = norm_path(path);
    if (p == ".") return true;
    std::string prefix = p + "/";
    auto it = st.fs.lower_bound(prefix);
    return it != st.fs.end() && it->first.rfind(prefix, 0) == 0;
}

struct Out {
    int exit_code = 0;
    std::string out;
    std::string err;
    double duration = 0.1;
};

Out fail(int code, std::string err, double duration = 0.1) { return Out{code, "", std::move(err), duration}; }
Out ok(std::string out = "", double duration = 0.1) { return Out{0, std::move(out), "", duration}; }

std::string top_module(const std::string& dotted) { return dotted.substr(0, dotted.find('.')); }

// ---------------------------------------------------------------------------
// chains: cmd1 && cmd2 || cmd3 ; cmd4 | filter

struct Segment {
    std::string op;  // "", "&&", "||", ";", "|"
    std::string text;
};

std::vector<Segment> split_chain(const std::string& s) {
    std::vector<Segment> out;
    std::string cur, op;
    char quote = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        char c = s[i];
        if (quote) {
            cur += c;
            if (c == quote) quote = 0;
            continue;
        }
        if (c == '\'' || c == '"') {
            quote = c;
            cur += c;
            continue;
        }
        std::string next_op;
        if ((c == '&' || c == '|') && i + 1 < s.size() && s[i + 1] == c) next_op = std::string(2, c);
        else if (c == ';') next_op = ";";
        else if (c == '|' && !(i > 0 && s[i - 1] == '>')) next_op = "|";
        if (next_op.empty()) {
            cur += c;
            continue;
        }
        out.push_back({op, text::trim(cur)});
        cur.clear();
        op = next_op;
        i += next_op.size() - 1;
    }
    out.push_back({op, text::trim(cur)});
    return out;
}

class Machine {
public:
    Machine(const Scenario& scn, SimState st) : scn_(scn), st_(std::move(st)) {}

    StepResult run(const std::string& command) {
        StepResult r;
        if (auto b = try_behaviors(command)) {
            r.exit_code = b->exit_code;
            r.stdout_text = b->out;
            r.stderr_text = b->err;
            r.duration = b->duration;
        } else if (!scn_.builtins) {
            std::string head = text::shell_words(command).empty() ? command : text::shell_words(command)[0];
            r.exit_code = 127;
            r.stderr_text = "sh: 1: " + head + ": not found";
            r.duration = 0.1;
        } else {
            Out o = run_chain(command);
            r.exit_code = o.exit_code;
            r.stdout_text = o.out;
            r.stderr_text = o.err;
            r.duration = o.duration;
        }
        r.state = std::move(st_);
        return r;
    }

private:
    std::optional<Out> try_behaviors(const std::string& command) {
        for (std::size_t i = 0; i < scn_.behaviors.size(); ++i) {
            const Behavior& b = scn_.behaviors[i];
            if (!std::regex_search(command, b.pattern)) continue;
            if (b.max_fires >= 0 && st_.fires[i] >= b.max_fires) continue;
            if (!eval_predicate(scn_, st_, b.when)) continue;
            st_.fires[i] += 1;
            apply(b.effects);
            return Out{b.exit_code, b.stdout_text, b.stderr_text, b.duration};
        }
        return std::nullopt;
    }

    void apply(const Effects& e) {
        for (const auto& [n, v] : e.install) st_.installed[n] = v;
        for (const auto& n : e.uninstall) st_.installed.erase(n);
        for (const auto& f : e.set_facts) st_.facts.insert(f);
        for (const auto& f : e.clear_facts) st_.facts.erase(f);
        for (const auto& [p, c] : e.write) st_.fs[norm_path(p)] = c;
        for (const auto& p : e.remove) st_.fs.erase(norm_path(p));
    }

    Out run_chain(const std::string& command) {
        Out total;
        total.duration = 0.0;
        int last = 0;
        std::string last_out;
        bool first = true;
        for (const auto& seg : split_chain(command)) {
            if (!first) {
                if (seg.op == "&&" && last != 0) continue;
                if (seg.op == "||" && last == 0) continue;
            }
            if (seg.op == "|" && !first) {
                Out f = filter(seg.text, last_out);
                // replace the piped producer's stdout with the filtered text
                total.out = total.out.substr(0, total.out.size() - last_out.size()) + f.out;
                total.err += f.err;
                last_out = f.out;
                last = f.exit_code;
                continue;
            }
            first = false;
            Out o = run_simple(seg.text);
            total.duration += o.duration;
            total.out += o.out;
            if (!total.err.empty() && !o.err.empty() && total.err.back() != '\n') total.err += "\n";
            total.err += o.err;
            last_out = o.out;
            last = o.exit_code;
        }
        total.exit_code = last;
        if (total.duration <= 0) total.duration = 0.1;
        return total;
    }

    Out filter(const std::string& seg, const std::string& input) {
        auto w = text::shell_words(seg);
        if (w.empty()) return ok(input);
        const auto lines = text::split_lines(input);
        std::vector<std::string> kept;
        if (w[0] == "grep") {
            bool icase = false, invert = false;
            std::string pat;
            for (std::size_t i = 1; i < w.size(); ++i) {
                if (w[i] == "-i") icase = true;
                else if (w[i] == "-v") invert = true;
                else if (w[i].rfind("-", 0) == 0) continue;
                else if (pat.empty()) pat = w[i];
            }
            for (const auto& l : lines) {
                bool hit = icase ? text::icontains(l, pat) : text::contains(l, pat);
                if (hit != invert) kept.push_back(l);
            }
            Out o = ok(kept.empty() ? "" : text::join(kept, "\n") + "\n");
            if (kept.empty()) o.exit_code = 1;
            return o;
        }
        if (w[0] == "head" || w[0] == "tail") {
            std::size_t n = 10;
            for (std::size_t i = 1; i + 1 < w.size(); ++i)
                if (w[i] == "-n") n = static_cast<std::size_t>(std::max(0, std::atoi(w[i + 1].c_str())));
            if (w[0] == "head") kept.assign(lines.begin(), lines.begin() + std::min(n, lines.size()));
            else kept.assign(lines.end() - std::min(n, lines.size()), lines.end());
            return ok(kept.empty() ? "" : text::join(kept, "\n") + "\n");
        }
        if (w[0] == "wc" && w.size() > 1 && w[1] == "-l") return ok(std::to_string(lines.size()) + "\n");
        return ok(input);
    }

    // Simple command with optional redirects.
    Out run_simple(const std::string& seg) {
        auto words = text::shell_words(seg);
        bool merge = false, drop_err = false;
        std::string redirect_path;
        bool append = false;
        std::vector<std::string> argv;
        for (std::size_t i = 0; i < words.size(); ++i) {
            const auto& w = words[i];
            if (w == "2>&1") merge = true;
            else if (w == "2>/dev/null") drop_err = true;
            else if ((w == ">" || w == ">>") && i + 1 < words.size()) {
                append = w == ">>";
                redirect_path = words[++i];
            } else if (w.size() > 1 && w[0] == '>' && w[1] != '&') {
                append = w.rfind(">>", 0) == 0;
                redirect_path = w.substr(append ? 2 : 1);
            } else {
                argv.push_back(w);
            }
        }
        if (argv.empty()) return ok();
        Out o = dispatch(argv);
        if (drop_err) o.err.clear();
        if (merge) {
            o.out += o.err;
            o.err.clear();
        }
        if (!redirect_path.empty() && redirect_path != "/dev/null") {
            std::string p = norm_path(redirect_path);
            st_.fs[p] = (append && st_.fs.count(p) ? st_.fs[p] : "") + o.out;
            o.out.clear();
        } else if (redirect_path == "/dev/null") {
            o.out.clear();
        }
        return o;
    }

    Out dispatch(std::vector<std::string> argv) {
        const std::string head = argv[0];
        if (head == "pip" || head == "pip3") return pip({argv.begin() + 1, argv.end()}, head);
        if (head == "python" || head == "python3") {
            if (argv.size() >= 3 && argv[1] == "-m" && (argv[2] == "pip" || argv[2] == "pip3"))
                return pip({argv.begin() + 3, argv.end()}, "python -m pip");
            if (argv.size() >= 3 && argv[1] == "-m" && argv[2] == "pytest")
                return pytest({argv.begin() + 3, argv.end()}, true);
            return python({argv.begin() + 1, argv.end()});
        }
        if (head == "pytest" || head == "py.test") return pytest({argv.begin() + 1, argv.end()}, false);
        if (head == "apt-get" || head == "apt") return apt({argv.begin() + 1, argv.end()});
        if (head == "poetry") return poetry({argv.begin() + 1, argv.end()});
        if (head == "cat") return cat(argv);
        if (head == "head") return head_cmd(argv);
        if (head == "ls") return ls(argv);
        if (head == "find") return find(argv);
        if (head == "which") return which(argv);
        if (head == "echo") return ok(text::join({argv.begin() + 1, argv.end()}, " ") + "\n");
        if (head == "sed") return sed(argv);
        if (head == "grep") return grep(argv);
        if (head == "true" || head == "cd" || head == "export" || head == "pwd")
            return ok(head == "pwd" ? "/workspace\n" : "");
        if (head == "false") return fail(1, "");
        if (head == "touch" || head == "mkdir") {
            if (head == "touch")
                for (std::size_t i = 1; i < argv.size(); ++i)
                    if (argv[i][0] != '-' && !st_.fs.count(norm_path(argv[i]))) st_.fs[norm_path(argv[i])] = "";
            return ok();
        }
        if (head == "rm") {
            for (std::size_t i = 1; i < argv.size(); ++i) {
                if (argv[i][0] == '-') continue;
                std::string p = norm_path(argv[i]);
                st_.fs.erase(p);
                for (auto it = st_.fs.lower_bound(p + "/"); it != st_.fs.end() && it->first.rfind(p + "/", 0) == 0;)
                    it = st_.fs.erase(it);
            }
            return ok();
        }
        if (head == "gcc" || head == "cc" || head == "g++") {
            if (!st_.facts.count("compiler")) return fail(127, "sh: 1: " + head + ": not found");
            return ok("gcc (Debian 12.2.0-14) 12.2.0\n");
        }
        return fail(127, "sh: 1: " + head + ": not found");
    }

    // ---- pip --------------------------------------------------------------

    std::map<std::string, std::string> dist_versions() const { return st_.installed; }

    std::optional<std::string> read_requirements(const std::string& file, std::vector<std::string>& specs,
                                                 bool& project, int depth = 0) {
        std::string p = norm_path(file);
        auto it = st_.fs.find(p);
        if (it == st_.fs.end() || depth > 4)
            return "ERROR: Could not open requirements file: [Errno 2] No such file or directory: '" + file + "'";
        for (auto line : text::split_lines(it->second)) {
            if (auto hash = line.find('#'); hash != std::string::npos) line = line.substr(0, hash);
            line = text::trim(line);
            if (line.empty()) continue;
            if (line == "." || line == "-e ." || line == "-e ./" || line == "./") {
                project = true;
                continue;
            }
            if (line.rfind("-r ", 0) == 0) {
                if (auto err = read_requirements(text::trim(line.substr(3)), specs, project, depth + 1)) return err;
                continue;
            }
            if (line[0] == '-') continue;
            specs.push_back(line);
        }
        return std::nullopt;
    }

    bool project_files_present() const {
        return fs_has_file(st_, "setup.py") || fs_has_file(st_, "pyproject.toml");
    }

    Out pip(std::vector<std::string> args, const std::string& invoked) {
        if (args.empty()) return fail(1, "ERROR: You must give at least one requirement to install");
        const std::string sub = args[0];
        if (sub == "--version" || sub == "-V")
            return ok("pip 24.0 from /usr/local/lib/python3.11/site-packages/pip (python 3.11)\n");
        if (sub == "install") return pip_install({args.begin() + 1, args.end()});
        if (sub == "uninstall") {
            std::string out, err;
            for (std::size_t i = 1; i < args.size(); ++i) {
                if (args[i][0] == '-') continue;
                std::string n = normalize_package_name(args[i]);
                auto it = st_.installed.find(n);
                if (it == st_.installed.end()) {
                    err += "WARNING: Skipping " + args[i] + " as it is not installed.\n";
                    continue;
                }
                out += "Found existing installation: " + n + " " + it->second + "\nUninstalling " + n + "-" +
                       it->second + ":\n  Successfully uninstalled " + n + "-" + it->second + "\n";
                if (scn_.project && n == scn_.project->distribution) st_.facts.erase("project_installed");
                st_.installed.erase(it);
            }
            return Out{0, out, err, 1.0};
        }
        if (sub == "show") {
            std::string out;
            std::vector<std::string> missing;
            for (std::size_t i = 1; i < args.size(); ++i) {
                if (args[i][0] == '-') continue;
                std::string n = normalize_package_name(args[i]);
                auto it = st_.installed.find(n);
                if (it == st_.installed.end()) {
                    missing.push_back(args[i]);
                    continue;
                }
                std::vector<std::string> reqs;
                if (const auto* rel = scn_.registry.release(n, it->second))
                    for (const auto& r : rel->requires_) reqs.push_back(parse_requirement(r).name);
                std::vector<std::string> by;
                for (const auto& [other, v] : st_.installed)
                    if (const auto* rel = scn_.registry.release(other, v))
                        for (const auto& r : rel->requires_)
                            if (parse_requirement(r).name == n) by.push_back(other);
                if (!out.empty()) out += "---\n";
                out += "Name: " + n + "\nVersion: " + it->second +
                       "\nLocation: /usr/local/lib/python3.11/site-packages\nRequires: " + text::join(reqs, ", ") +
                       "\nRequired-by: " + text::join(by, ", ") + "\n";
            }
            if (!missing.empty())
                return Out{1, out, "WARNING: Package(s) not found: " + text::join(missing, ", ") + "\n", 0.5};
            return ok(out, 0.5);
        }
        if (sub == "list" || sub == "freeze") {
            std::string out = sub == "list" ? "Package    Version\n---------- -------\n" : "";
            for (const auto& [n, v] : st_.installed) out += sub == "list" ? n + " " + v + "\n" : n + "==" + v + "\n";
            return ok(out, 0.5);
        }
        if (sub == "check") {
            std::string out;
            for (const auto& [n, v] : st_.installed) {
                const auto* rel = scn_.registry.release(n, v);
                if (!rel) continue;
                for (const auto& spec : rel->requires_) {
                    Requirement r = parse_requirement(spec);
                    auto have = st_.installed.find(r.name);
                    if (have == st_.installed.end())
                        out += n + " " + v + " requires " + r.name + ", which is not installed.\n";
                    else if (!r.satisfied_by(have->second))
                        out += n + " " + v + " has requirement " + r.to_string() + ", but you have " + r.name + " " +
                               have->second + ".\n";
                }
            }
            if (out.empty()) return ok("No broken requirements found.\n", 0.5);
            return Out{1, out, "", 0.5};
        }
        if (sub == "index" && args.size() >= 3 && args[1] == "versions") {
            std::string name = normalize_package_name(args[2]);
            auto versions = scn_.registry.versions(name);
            if (versions.empty())
                return fail(1, "ERROR: No matching distribution found for " + args[2] + "\n", 1.0);
            std::string out = name + " (" + versions.front() + ")\nAvailable versions: " +
                              text::join(versions, ", ") + "\n";
            auto inst = st_.installed.find(name);
            if (inst != st_.installed.end()) out += "  INSTALLED: " + inst->second + "\n";
            for (const auto& v : versions) {
                const auto* rel = scn_.registry.release(name, v);
                out += "  " + v + " requires: " + (rel->requires_.empty() ? "-" : text::join(rel->requires_, "; ")) +
                       (rel->wheel ? "" : " (sdist only)") + "\n";
            }
            return ok(out, 1.0);
        }
        return fail(1, "ERROR: unknown command \"" + sub + "\"\n(invoked as " + invoked + ")");
    }

    Out pip_install(const std::vector<std::string>& args) {
        static const std::set<std::string> takes_value = {"-i", "--index-url", "--extra-index-url", "--timeout",
                                                          "-c", "--constraint", "-t", "--target", "--trusted-host",
                                                          "--default-timeout"};
        std::vector<std::string> specs;
        bool project = false, prefer_binary = false, no_deps = false, force = false;
        for (std::size_t i = 0; i < args.size(); ++i) {
            const auto& a = args[i];
            if (a == "-r" || a == "--requirement") {
                if (i + 1 >= args.size()) return fail(2, "ERROR: -r option requires 1 argument");
                if (auto err = read_requirements(args[++i], specs, project)) return fail(1, *err);
            } else if (a.rfind("-r", 0) == 0 && a.size() > 2 && a[2] != '-') {
                if (auto err = read_requirements(a.substr(2), specs, project)) return fail(1, *err);
            } else if (a == "-e" || a == "--editable") {
                if (i + 1 >= args.size()) return fail(2, "ERROR: -e option requires 1 argument");
                std::string p = norm_path(args[++i]);
                if (p != ".") return fail(1, "ERROR: " + args[i] + " is not a valid editable requirement.");
                project = true;
            } else if (a == "." || a == "./" || a == "/workspace") {
                project = true;
            } else if (a == "--prefer-binary") {
                prefer_binary = true;
            } else if (a == "--no-deps") {
                no_deps = true;
            } else if (a == "--force-reinstall") {
                force = true;
            } else if (takes_value.count(a)) {
                ++i;
            } else if (!a.empty() && a[0] == '-') {
                continue;
            } else {
                specs.push_back(a);
            }
        }
        if (specs.empty() && !project) return fail(1, "ERROR: You must give at least one requirement to install");

        std::vector<Requirement> reqs;
        for (const auto& s : specs) {
            try {
                reqs.push_back(parse_requirement(s));
            } catch (const std::invalid_argument&) {
                return fail(1, "ERROR: Invalid requirement: '" + s + "'");
            }
        }

        PackageIndex index = scn_.registry;
        std::map<std::string, std::string> installed = st_.installed;
        std::string dist;
        if (project) {
            if (!project_files_present())
                return fail(1,
                            "ERROR: file:///workspace does not appear to be a Python project: neither 'setup.py' "
                            "nor 'pyproject.toml' found.",
                            0.5);
            if (scn_.project) {
                dist = scn_.project->distribution;
                PackageInfo info;
                ReleaseInfo rel;
                rel.requires_ = scn_.project->requires_;
                rel.install_seconds = scn_.project->build_seconds;
                info.releases[kProjectVersion] = rel;
                info.modules = {scn_.project->module};
                index.add_package(dist, info);
                installed.erase(dist);
                reqs.push_back(parse_requirement(dist));
            }
        }
        if (force)
            for (const auto& r : reqs) installed.erase(r.name);

        ResolveRequest request;
        request.requested = reqs;
        request.installed = installed;
        request.prefer_binary = prefer_binary;
        request.no_deps = no_deps;
        request.facts = st_.facts;
        ResolveResult res = resolve(index, request);

        std::string collecting;
        for (const auto& r : reqs)
            collecting += (r.name == dist ? "Obtaining file:///workspace\n" : "Collecting " + r.to_string() + "\n");
        for (const auto& b : res.source_builds)
            collecting += "Building wheel for " + b + " (pyproject.toml) ...\n";
        if (!res.ok) return Out{1, collecting, res.error, std::max(res.duration, 1.0)};

        std::string out = collecting;
        std::string warnings;
        std::set<std::string> new_facts;
        if (!dist.empty()) {
            for (const auto& ext : scn_.project->extensions) {
                std::vector<std::string> missing;
                for (const auto& need : ext.needs)
                    if (!st_.facts.count(need)) missing.push_back(need);
                if (missing.empty()) {
                    out += "  building '" + ext.name + "' extension\n";
                    if (!ext.fact.empty()) new_facts.insert(ext.fact);
                    continue;
                }
                std::string detail = missing.front() == "compiler"
                                         ? "error: command 'gcc' failed: No such file or directory"
                                         : "error: required build dependency '" + missing.front() +
                                               "' is not available";
                if (ext.optional) {
                    warnings += "  WARNING: Failed to build optional extension '" + ext.name + "': " + detail +
                                "\n  WARNING: Falling back to the pure-Python implementation of " + ext.name + "\n";
                    continue;
                }
                return Out{1, out + "Building editable for " + dist + " (pyproject.toml) ... error\n",
                           "  error: subprocess-exited-with-error\n\n  x Building editable for " + dist +
                               " (pyproject.toml) did not run successfully.\n  exit code: 1\n  building '" + ext.name +
                               "' extension\n  " + detail + "\n  ERROR: Failed building editable for " + dist +
                               "\nERROR: Could not build wheels for " + dist +
                               ", which is required to install pyproject.toml-based projects",
                           res.duration};
            }
        }

        std::vector<std::string> done;
        for (const auto& [n, v] : res.to_install) {
            st_.installed[n] = v;
            done.push_back(n + "-" + v);
        }
        for (const auto& f : new_facts) st_.facts.insert(f);
        if (!dist.empty()) st_.facts.insert("project_installed");
        for (const auto& r : reqs)
            if (!res.to_install.count(r.name) && st_.installed.count(r.name))
                out += "Requirement already satisfied: " + r.name + " in /usr/local/lib/python3.11/site-packages (" +
                       st_.installed[r.name] + ")\n";
        out += warnings;
        if (!done.empty()) {
            std::vector<std::string> names;
            for (const auto& [n, _] : res.to_install) names.push_back(n);
            out += "Installing collected packages: " + text::join(names, ", ") + "\n";
            out += "Successfully installed " + text::join(done, " ") + "\n";
        }
        std::string err;
        if (!res.broken_after.empty()) {
            err = "ERROR: pip's dependency resolver does not currently take into account all the packages that are "
                  "installed. This behaviour is the source of the following dependency conflicts.\n";
            for (const auto& b : res.broken_after) err += b + "\n";
        }
        return Out{0, out, err, res.duration};
    }

    // ---- python / pytest --------------------------------------------------

    Out python(const std::vector<std::string>& args) {
        if (args.empty()) return ok();
        if (args[0] == "--version" || args[0] == "-V") return ok("Python 3.11.9\n");
        if (args[0] == "-c" && args.size() >= 2) {
            static const std::regex import_re(R"((?:^|[;\s])import\s+([\w\.]+(?:\s*,\s*[\w\.]+)*))");
            static const std::regex from_re(R"((?:^|[;\s])from\s+([\w\.]+)\s+import)");
            const std::string& code = args[1];
            std::vector<std::string> modules;
            for (std::sregex_iterator it(code.begin(), code.end(), import_re), end; it != end; ++it)
                for (auto& m : text::split((*it)[1].str(), ',')) modules.push_back(top_module(text::trim(m)));
            for (std::sregex_iterator it(code.begin(), code.end(), from_re), end; it != end; ++it)
                modules.push_back(top_module((*it)[1].str()));
            for (const auto& m : modules) {
                if (!module_importable(scn_, st_, m))
                    return fail(1, "Traceback (most recent call last):\n  File \"<string>\", line 1, in <module>\n"
                                   "ModuleNotFoundError: No module named '" + m + "'\n");
            }
            return ok("", 0.3);
        }
        if (args[0] == "setup.py") {
            if (!fs_has_file(st_, "setup.py"))
                return fail(2, "python: can't open file '/workspace/setup.py': [Errno 2] No such file or directory");
            if (args.size() >= 2 && (args[1] == "develop" || args[1] == "install")) return pip_install({"."});
            return ok();
        }
        std::string script = norm_path(args[0]);
        if (!st_.fs.count(script))
            return fail(2, "python: can't open file '/workspace/" + script + "': [Errno 2] No such file or directory");
        return ok("", 0.5);
    }

    std::string first_test_file() const {
        for (const auto& [p, _] : st_.fs) {
            auto base = p.substr(p.rfind('/') == std::string::npos ? 0 : p.rfind('/') + 1);
            if (base.rfind("test_", 0) == 0 && base.size() > 3 && base.substr(base.size() - 3) == ".py") return p;
        }
        return "tests/test_basic.py";
    }

    Out pytest(const std::vector<std::string>& args, bool as_module) {
        if (!st_.installed.count("pytest")) {
            if (as_module) return fail(1, "/usr/local/bin/python: No module named pytest");
            return fail(127, "sh: 1: pytest: not found");
        }
        bool collect_only = false;
        for (const auto& a : args)
            if (a == "--collect-only" || a == "--co") collect_only = true;
        const std::string header =
            "============================= test session starts ==============================\n"
            "platform linux -- Python 3.11.9, pytest-" + st_.installed.at("pytest") + "\nrootdir: /workspace\n";
        const auto& p = scn_.project;
        if (!p || p->test_count <= 0) {
            return Out{5, header + "collected 0 items\n\n"
                                   "============================ no tests ran in 0.01s =============================\n",
                       "", 0.5};
        }
        const std::string test_file = first_test_file();
        auto collection_error = [&](const std::string& line) {
            return Out{2,
                       header + "collected 0 items / 1 error\n\n"
                                "==================================== ERRORS ====================================\n"
                                "_____________ ERROR collecting " + test_file + " _____________\n"
                                "ImportError while importing test module '/workspace/" + test_file + "'.\n"
                                "Hint: make sure your test modules/packages have valid Python names.\n" + line +
                           "\n=========================== short test summary info ============================\n"
                           "ERROR " + test_file + "\n"
                           "!!!!!!!!!!!!!!!!!!!! Interrupted: 1 error during collection !!!!!!!!!!!!!!!!!!!!\n",
                       "", 1.0};
        };
        for (const auto& m : p->test_imports) {
            if (!module_importable(scn_, st_, top_module(m)))
                return collection_error("E   ModuleNotFoundError: No module named '" + top_module(m) + "'");
        }
        for (const auto& f : p->test_requires_facts) {
            if (st_.facts.count(f)) continue;
            for (const auto& ext : p->extensions) {
                if (ext.fact != f) continue;
                auto dot = ext.name.rfind('.');
                std::string leaf = dot == std::string::npos ? ext.name : ext.name.substr(dot + 1);
                std::string parent = dot == std::string::npos ? p->module : ext.name.substr(0, dot);
                return collection_error("E   ImportError: cannot import name '" + leaf + "' from '" + parent +
                                        "' (compiled extension " + ext.name + " is not built)");
            }
            return collection_error("E   ImportError: required component '" + f + "' is unavailable");
        }
        const std::string n = std::to_string(p->test_count);
        if (collect_only)
            return Out{0, header + "collected " + n + " items\n\n" + n + " tests collected in 0.12s\n", "", 1.0};
        char secs[32];
        std::snprintf(secs, sizeof(secs), "%.2f", p->test_seconds);
        return Out{0, header + "collected " + n + " items\n\n" + test_file + " " + std::string(p->test_count, '.') +
                          "\n\n============================== " + n + " passed in " + secs + "s ==============================\n",
                   "", p->test_seconds};
    }

    // ---- system tools -------------------------------------------------------

    Out apt(const std::vector<std::string>& args) {
        if (args.empty()) return fail(1, "E: Invalid operation");
        if (args[0] == "update") return ok("Reading package lists... Done\n", 5.0);
        if (args[0] != "install") return fail(100, "E: Invalid operation " + args[0]);
        std::string out = "Reading package lists... Done\nBuilding dependency tree... Done\n";
        bool any = false;
        for (std::size_t i = 1; i < args.size(); ++i) {
            const auto& a = args[i];
            if (a[0] == '-') continue;
            any = true;
            if (a == "build-essential" || a == "gcc" || a == "g++")
                st_.facts.insert("compiler");
            else
                st_.facts.insert("apt:" + a);
            out += "Setting up " + a + " ...\n";
        }
        if (!any) return fail(100, "E: No packages specified");
        return ok(out, 20.0);
    }

    Out poetry(const std::vector<std::string>& args) {
        if (!st_.installed.count("poetry")) return fail(127, "sh: 1: poetry: not found");
        if (args.empty() || args[0] == "--version") return ok("Poetry (version " + st_.installed["poetry"] + ")\n");
        if (args[0] == "config") return ok();
        if (args[0] != "install") return fail(1, "The command \"" + args[0] + "\" does not exist.");
        if (!fs_has_file(st_, "pyproject.toml"))
            return fail(1, "Poetry could not find a pyproject.toml file in /workspace or its parents");
        Out o = pip_install({"."});
        if (o.exit_code == 0) o.out = "Installing dependencies from lock file\n" + o.out;
        return o;
    }

    Out cat(const std::vector<std::string>& argv) {
        Out o = ok();
        for (std::size_t i = 1; i < argv.size(); ++i) {
            auto it = st_.fs.find(norm_path(argv[i]));
            if (it == st_.fs.end()) {
                o.exit_code = 1;
                o.err += "cat: " + argv[i] + ": No such file or directory\n";
            } else {
                o.out += it->second;
                if (!it->second.empty() && it->second.back() != '\n') o.out += "\n";
            }
        }
        return o;
    }

    Out head_cmd(const std::vector<std::string>& argv) {
        std::size_t n = 10;
        std::vector<std::string> files;
        for (std::size_t i = 1; i < argv.size(); ++i) {
            if (argv[i] == "-n" && i + 1 < argv.size()) n = std::max(0, std::atoi(argv[++i].c_str()));
            else if (argv[i][0] != '-') files.push_back(argv[i]);
        }
        Out o = ok();
        for (const auto& f : files) {
            auto it = st_.fs.find(norm_path(f));
            if (it == st_.fs.end()) return fail(1, "head: cannot open '" + f + "' for reading: No such file or directory");
            auto lines = text::split_lines(it->second);
            if (lines.size() > n) lines.resize(n);
            o.out += text::join(lines, "\n") + "\n";
        }
        return o;
    }

    Out ls(const std::vector<std::string>& argv) {
        std::string dir = ".";
        for (std::size_t i = 1; i < argv.size(); ++i)
            if (argv[i][0] != '-') dir = argv[i];
        std::string d = norm_path(dir);
        if (!fs_has_dir(st_, d)) {
            if (fs_has_file(st_, d)) return ok(d + "\n");
            return fail(2, "ls: cannot access '" + dir + "': No such file or directory");
        }
        std::set<std::string> names;
        std::string prefix = d == "." ? "" : d + "/";
        for (const auto& [p, _] : st_.fs) {
            if (p.rfind(prefix, 0) != 0) continue;
            std::string rest = p.substr(prefix.size());
            names.insert(rest.substr(0, rest.find('/')));
        }
        std::string out;
        for (const auto& n : names) out += n + "\n";
        return ok(out);
    }

    Out find(const std::vector<std::string>& argv) {
        std::string root = ".";
        int maxdepth = 1000;
        bool files_only = false, dirs_only = false;
        std::string name_pat, not_path;
        for (std::size_t i = 1; i < argv.size(); ++i) {
            const auto& a = argv[i];
            if (a == "-maxdepth" && i + 1 < argv.size()) maxdepth = std::atoi(argv[++i].c_str());
            else if (a == "-type" && i + 1 < argv.size()) {
                files_only = argv[i + 1] == "f";
                dirs_only = argv[i + 1] == "d";
                ++i;
            } else if ((a == "-name" || a == "-iname") && i + 1 < argv.size()) name_pat = argv[++i];
            else if (a == "-not" && i + 2 < argv.size() && argv[i + 1] == "-path") {
                not_path = argv[i + 2];
                i += 2;
            } else if (a[0] != '-' && i == 1) root = a;
        }
        std::string r = norm_path(root);
        std::string prefix = r == "." ? "" : r + "/";
        auto glob_match = [](const std::string& pat, const std::string& s) {
            std::string re;
            for (char c : pat) {
                if (c == '*') re += ".*";
                else if (c == '?') re += ".";
                else re += text::regex_escape(std::string(1, c));
            }
            return std::regex_match(s, std::regex(re));
        };
        std::set<std::string> hits;
        for (const auto& [p, _] : st_.fs) {
            if (p.rfind(prefix, 0) != 0) continue;
            auto parts = text::split(p.substr(prefix.size()), '/');
            std::string acc = r == "." ? "." : r;
            for (std::size_t k = 0; k < parts.size(); ++k) {
                if (parts[k].empty()) continue;
                acc += "/" + parts[k];
                bool is_file = k + 1 == parts.size() && p.back() != '/';
                if (static_cast<int>(k) + 1 > maxdepth) break;
                if (files_only && !is_file) continue;
                if (dirs_only && is_file) continue;
                if (!name_pat.empty() && !glob_match(name_pat, parts[k])) continue;
                if (!not_path.empty() && glob_match(not_path, acc)) continue;
                hits.insert(acc);
            }
        }
        std::string out;
        for (const auto& h : hits) out += h + "\n";
        return ok(out);
    }

    Out which(const std::vector<std::string>& argv) {
        Out o = ok();
        for (std::size_t i = 1; i < argv.size(); ++i) {
            const auto& a = argv[i];
            bool found = a == "python" || a == "python3" || a == "pip" || a == "pip3" || a == "sh" ||
                         ((a == "gcc" || a == "cc" || a == "g++") && st_.facts.count("compiler")) ||
                         ((a == "pytest" || a == "poetry") && st_.installed.count(a));
            if (found) o.out += "/usr/local/bin/" + a + "\n";
            else o.exit_code = 1;
        }
        return o;
    }

    Out grep(const std::vector<std::string>& argv) {
        bool icase = false;
        std::string pat;
        std::vector<std::string> files;
        for (std::size_t i = 1; i < argv.size(); ++i) {
            if (argv[i] == "-i") icase = true;
            else if (argv[i][0] == '-') continue;
            else if (pat.empty()) pat = argv[i];
            else files.push_back(argv[i]);
        }
        Out o = ok();
        o.exit_code = 1;
        for (const auto& f : files) {
            auto it = st_.fs.find(norm_path(f));
            if (it == st_.fs.end()) {
                o.err += "grep: " + f + ": No such file or directory\n";
                continue;
            }
            for (const auto& l : text::split_lines(it->second)) {
                if (icase ? text::icontains(l, pat) : text::contains(l, pat)) {
                    o.out += (files.size() > 1 ? f + ":" : "") + l + "\n";
                    o.exit_code = 0;
                }
            }
        }
        if (o.exit_code == 1 && !o.err.empty()) o.exit_code = 2;
        return o;
    }

    Out sed(const std::vector<std::string>& argv) {
        bool in_place = false;
        std::string script;
        std::vector<std::string> files;
        for (std::size_t i = 1; i < argv.size(); ++i) {
            if (argv[i] == "-i") in_place = true;
            else if (argv[i] == "-e" && i + 1 < argv.size()) script = argv[++i];
            else if (script.empty() && argv[i][0] != '-') script = argv[i];
            else if (argv[i][0] != '-') files.push_back(argv[i]);
        }
        if (script.empty() || files.empty()) return fail(1, "sed: no input files");
        for (const auto& f : files) {
            auto it = st_.fs.find(norm_path(f));
            if (it == st_.fs.end()) return fail(2, "sed: can't read " + f + ": No such file or directory");
            std::string result;
            try {
                result = sed_apply(script, it->second);
            } catch (const std::exception& e) {
                return fail(1, std::string("sed: -e expression #1: ") + e.what());
            }
            if (in_place) it->second = result;
            else return ok(result);
        }
        return ok();
    }

    static std::string sed_apply(const std::string& script, const std::string& content) {
        auto lines = text::split_lines(content);
        std::vector<std::string> out;
        if (script.size() >= 3 && script[0] == '/' && script.back() == 'd') {
            std::string pat = script.substr(1, script.size() - 3);
            if (script[script.size() - 2] != '/') throw std::runtime_error("unknown command");
            std::regex re(pat);
            for (const auto& l : lines)
                if (!std::regex_search(l, re)) out.push_back(l);
        } else if (script.size() >= 4 && script[0] == 's') {
            char d = script[1];
            auto p1 = script.find(d, 2);
            auto p2 = p1 == std::string::npos ? p1 : script.find(d, p1 + 1);
            if (p2 == std::string::npos) throw std::runtime_error("unterminated `s' command");
            std::string pat = script.substr(2, p1 - 2);
            std::string rep = script.substr(p1 + 1, p2 - p1 - 1);
            bool global = script.find('g', p2 + 1) != std::string::npos;
            std::string fmt;
            for (std::size_t i = 0; i < rep.size(); ++i) {
                if (rep[i] == '&') fmt += "$&";
                else if (rep[i] == '\\' && i + 1 < rep.size() && std::isdigit(static_cast<unsigned char>(rep[i + 1])))
                    fmt += std::string("$") + rep[++i];
                else if (rep[i] == '$') fmt += "$$";
                else fmt += rep[i];
            }
            std::regex re(pat);
            auto flags = global ? std::regex_constants::format_default : std::regex_constants::format_first_only;
            for (const auto& l : lines) out.push_back(std::regex_replace(l, re, fmt, flags));
        } else {
            throw std::runtime_error("unknown command");
        }
        std::string s = text::join(out, "\n");
        if (!out.empty() && !content.empty() && content.back() == '\n') s += "\n";
        return s;
    }

    const Scenario& scn_;
    SimState st_;
};

}  // namespace

SimState initial_state(const Scenario& scenario) {
    SimState s;
    s.installed = scenario.installed;
    s.facts = scenario.facts;
    for (const auto& [p, c] : scenario.virtual_fs) s.fs[norm_path(p)] = c;
    s.fires.assign(scenario.behaviors.size(), 0);
    return s;
}

StepResult simulate(const Scenario& scenario, const SimState& state, const std::string& command) {
    return Machine(scenario, state).run(command);
}

bool module_importable(const Scenario& scenario, const SimState& state, const std::string& module) {
    if (kStdlib.count(module)) return true;
    if (scenario.project && module == scenario.project->module) {
        if (state.installed.count(scenario.project->distribution)) return true;
        // flat layouts import from the working directory
        return scenario.project->layout == "flat" &&
               (fs_has_dir(state, module) || fs_has_file(state, module + ".py"));
    }
    for (const auto& [name, version] : state.installed) {
        for (const auto& m : scenario.registry.modules_of(name))
            if (m == module) return true;
    }
    return false;
}

bool tests_launch(const Scenario& scenario, const SimState& state) {
    if (!state.installed.count("pytest") || !scenario.project || scenario.project->test_count <= 0) return false;
    for (const auto& m : scenario.project->test_imports)
        if (!module_importable(scenario, state, top_module(m))) return false;
    for (const auto& f : scenario.project->test_requires_facts)
        if (!state.facts.count(f)) return false;
    return true;
}

bool eval_atom(const Scenario& scenario, const SimState& state, const std::string& atom) {
    if (atom.rfind("not:", 0) == 0) return !eval_atom(scenario, state, atom.substr(4));
    if (atom == "tests_launch") return tests_launch(scenario, state);
    if (atom.rfind("installed:", 0) == 0) {
        std::string spec = atom.substr(10);
        Requirement r = parse_requirement(spec);
        auto it = state.installed.find(r.name);
        return it != state.installed.end() && r.satisfied_by(it->second);
    }
    if (atom.rfind("fact:", 0) == 0) return state.facts.count(atom.substr(5)) > 0;
    if (atom.rfind("file:", 0) == 0) return fs_has_file(state, atom.substr(5));
    if (atom.rfind("importable:", 0) == 0) return module_importable(scenario, state, atom.substr(11));
    throw ScenarioInvalid("unknown predicate atom: " + atom);
}

bool eval_predicate(const Scenario& scenario, const SimState& state, const std::vector<std::string>& atoms) {
    return std::all_of(atoms.begin(), atoms.end(),
                       [&](const std::string& a) { return eval_atom(scenario, state, a); });
}

// ---------------------------------------------------------------------------
// SimBackend

SimBackend::SimBackend(Scenario scenario, std::size_t capture_cap)
    : scenario_(std::move(scenario)), cap_(capture_cap) {}

std::unique_ptr<SimBackend> SimBackend::from_file(const std::filesystem::path& path) {
    return std::make_unique<SimBackend>(load_scenario(path));
}

EnvironmentState SimBackend::init_environment() {
    if (closed_) throw SessionClosed("simulated session is closed");
    std::string handle = "sim-" + std::to_string(++next_env_);
    envs_[handle] = initial_state(scenario_);
    return EnvironmentState{handle, 0, BackendKind::simulated};
}

SimState& SimBackend::lookup(const EnvironmentState& state) {
    if (closed_) throw SessionClosed("simulated session is closed");
    auto it = envs_.find(state.handle);
    if (it == envs_.end()) throw SessionClosed("unknown environment handle: " + state.handle);
    return it->second;
}

const SimState& SimBackend::state_of(const EnvironmentState& state) const {
    auto it = envs_.find(state.handle);
    if (closed_ || it == envs_.end()) throw SessionClosed("unknown environment handle: " + state.handle);
    return it->second;
}

std::pair<EnvironmentState, ExecutionRecord> SimBackend::execute(const EnvironmentState& state,
                                                                 const AtomicCommand& cmd) {
    SimState& current = lookup(state);
    StepResult step = simulate(scenario_, current, cmd.text());
    if (step.duration > cmd.timeout()) {
        clock_ += cmd.timeout();
        std::string err = step.stderr_text;
        char buf[96];
        std::snprintf(buf, sizeof(buf), "command timed out after %.0f seconds", cmd.timeout());
        auto record = make_record(cmd, kTimeoutExitCode, step.stdout_text, buf, cmd.timeout(), true, cap_);
        return {state, record};
    }
    clock_ += step.duration;
    current = std::move(step.state);
    auto record = make_record(cmd, step.exit_code, step.stdout_text, step.stderr_text, step.duration, false, cap_);
    return {state, record};
}

SnapshotId SimBackend::snapshot(const EnvironmentState& state) {
    const SimState& s = lookup(state);
    std::string id = "snap-" + std::to_string(++next_snapshot_);
    snapshots_[id] = s;
    return SnapshotId{id, state.round};
}

EnvironmentState SimBackend::restore(const SnapshotId& id) {
    if (closed_) throw SnapshotExpired("session closed; snapshot " + id.id + " expired");
    auto it = snapshots_.find(id.id);
    if (it == snapshots_.end()) throw SnapshotExpired("unknown snapshot " + id.id);
    std::string handle = "sim-" + std::to_string(++next_env_);
    envs_[handle] = it->second;
    return EnvironmentState{handle, id.round, BackendKind::simulated};
}

bool SimBackend::check_solved(const EnvironmentState& state) {
    return eval_predicate(scenario_, lookup(state), scenario_.solved_predicate);
}

void SimBackend::close() {
    closed_ = true;
    envs_.clear();
    snapshots_.clear();
}

RepoTree SimBackend::repo_tree() const { return RepoTree::from_files(scenario_.virtual_fs); }

}  // namespace evoconfig::sim
