#include "evoconfig/repo_prior.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include "evoconfig/text.hpp"

namespace evoconfig {

namespace fs = std::filesystem;

namespace {

std::string basename_of(const std::string& path) {
    auto slash = path.rfind('/');
    return slash == std::string::npos ? path : path.substr(slash + 1);
}

std::string dirname_of(const std::string& path) {
    auto slash = path.rfind('/');
    return slash == std::string::npos ? "." : path.substr(0, slash);
}

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.substr(0, prefix.size()) == prefix;
}

std::size_t depth_of(const std::string& path) {
    return static_cast<std::size_t>(std::count(path.begin(), path.end(), '/'));
}

bool is_python(const std::string& path) { return ends_with(path, ".py"); }

bool is_test_file(const std::string& path) {
    if (!is_python(path)) return false;
    const std::string base = basename_of(path);
    const std::string stem = base.substr(0, base.size() - 3);
    return starts_with(base, "test_") || ends_with(stem, "_test");
}

bool is_test_dir_name(const std::string& name) { return name == "tests" || name == "test"; }

bool under_test_dir(const std::string& path) {
    for (const auto& part : text::split(dirname_of(path), '/'))
        if (is_test_dir_name(part)) return true;
    return false;
}

const std::set<std::string>& non_package_dirs() {
    static const std::set<std::string> names = {"tests", "test",  "docs",     "doc",   "examples",
                                                "example", "scripts", "src",  "build", "dist",
                                                "benchmarks", "tools", "ci"};
    return names;
}

bool is_requirements_file(const std::string& path) {
    if (depth_of(path) == 0) {
        return starts_with(path, "requirements") && ends_with(path, ".txt");
    }
    return depth_of(path) == 1 && starts_with(path, "requirements/") && ends_with(path, ".txt");
}

// Marker kinds in precedence order; lower index wins.
enum MarkerKind : int {
    kPoetryLock = 0,
    kPoetryPyproject,
    kRequirements,
    kSetup,
    kCondaEnv,
    kGenericPyproject,
    kMarkerKinds
};

bool has_poetry_marker(const std::string& pyproject) {
    return text::contains(pyproject, "[tool.poetry]") ||
           text::contains(pyproject, "poetry.core.masonry.api") ||
           text::contains(pyproject, "poetry.masonry.api");
}

std::vector<std::string> top_level_names(const RepoTree& tree) {
    std::set<std::string> names;
    for (const auto& e : tree.entries()) {
        if (e.kind != EntryKind::file) continue;
        const auto parts = text::split(e.path, '/');
        if (parts.size() == 3 && parts[0] == "src" && parts[2] == "__init__.py") {
            names.insert(parts[1]);
        } else if (parts.size() == 2 && parts[1] == "__init__.py" &&
                   !non_package_dirs().count(parts[0]) && parts[0][0] != '.') {
            names.insert(parts[0]);
        } else if (parts.size() == 1 && is_python(parts[0]) && parts[0] != "setup.py" &&
                   parts[0] != "conftest.py" && !is_test_file(parts[0])) {
            names.insert(parts[0].substr(0, parts[0].size() - 3));
        }
    }
    return {names.begin(), names.end()};
}

bool imports_any(const std::string& source, const std::vector<std::string>& names) {
    for (const auto& raw : text::split_lines(source)) {
        const std::string line = text::trim(raw);
        std::string rest;
        if (starts_with(line, "import ")) {
            rest = line.substr(7);
        } else if (starts_with(line, "from ")) {
            rest = line.substr(5);
            auto sp = rest.find(' ');
            if (sp != std::string::npos) rest = rest.substr(0, sp);
        } else {
            continue;
        }
        for (const auto& item : text::split(rest, ',')) {
            std::string module = text::trim(item);
            auto cut = module.find_first_of(". ");
            if (cut != std::string::npos) module = module.substr(0, cut);
            if (std::find(names.begin(), names.end(), module) != names.end()) return true;
        }
    }
    return false;
}

std::string list_or_none(const std::vector<std::string>& items, std::size_t max_items) {
    if (items.empty()) return "none";
    std::vector<std::string> shown(items.begin(),
                                   items.begin() + std::min(items.size(), max_items));
    std::string out = text::join(shown, ", ");
    if (items.size() > max_items) out += " (+" + std::to_string(items.size() - max_items) + " more)";
    return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// RepoTree

RepoTree::RepoTree(std::vector<RepoEntry> entries, PeekFn peek, std::size_t peek_limit)
    : entries_(std::move(entries)), peek_(std::move(peek)), peek_limit_(peek_limit) {
    std::sort(entries_.begin(), entries_.end(),
              [](const RepoEntry& a, const RepoEntry& b) { return a.path < b.path; });
    entries_.erase(std::unique(entries_.begin(), entries_.end(),
                               [](const RepoEntry& a, const RepoEntry& b) { return a.path == b.path; }),
                   entries_.end());
}

RepoTree RepoTree::from_directory(const fs::path& root, std::size_t peek_limit) {
    std::vector<RepoEntry> entries;
    std::error_code ec;
    fs::recursive_directory_iterator it(root, fs::directory_options::skip_permission_denied, ec);
    for (; !ec && it != fs::recursive_directory_iterator(); it.increment(ec)) {
        const auto& de = *it;
        const std::string rel = fs::relative(de.path(), root, ec).generic_string();
        if (ec) break;
        if (de.is_directory(ec) && de.path().filename() == ".git") {
            it.disable_recursion_pending();
            continue;
        }
        if (de.is_directory(ec)) {
            entries.push_back({rel, EntryKind::dir, 0});
        } else if (de.is_regular_file(ec)) {
            std::uintmax_t size = de.file_size(ec);
            entries.push_back({rel, EntryKind::file, ec ? 0 : size});
        }
        ec.clear();
    }
    auto peek = [root](const std::string& path, std::size_t max_bytes) -> std::optional<std::string> {
        std::ifstream in(root / path, std::ios::binary);
        if (!in) return std::nullopt;
        std::string buf(max_bytes, '\0');
        in.read(buf.data(), static_cast<std::streamsize>(max_bytes));
        buf.resize(static_cast<std::size_t>(in.gcount()));
        if (in.bad()) return std::nullopt;
        return buf;
    };
    return RepoTree(std::move(entries), peek, peek_limit);
}

RepoTree RepoTree::from_files(const std::map<std::string, std::string>& files, std::size_t peek_limit) {
    std::map<std::string, RepoEntry> by_path;
    auto add_parents = [&](const std::string& path) {
        auto parts = text::split(path, '/');
        std::string prefix;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            prefix = prefix.empty() ? parts[i] : prefix + "/" + parts[i];
            by_path.emplace(prefix, RepoEntry{prefix, EntryKind::dir, 0});
        }
    };
    for (const auto& [raw, content] : files) {
        std::string path = raw;
        while (starts_with(path, "./")) path = path.substr(2);
        if (path.empty()) continue;
        if (path.back() == '/') {
            path.pop_back();
            add_parents(path + "/x");
            continue;
        }
        add_parents(path);
        by_path[path] = RepoEntry{path, EntryKind::file, content.size()};
    }
    std::vector<RepoEntry> entries;
    for (auto& [_, e] : by_path) entries.push_back(e);
    auto snapshot = std::make_shared<std::map<std::string, std::string>>();
    for (const auto& [raw, content] : files) {
        std::string path = raw;
        while (starts_with(path, "./")) path = path.substr(2);
        if (!path.empty() && path.back() != '/') (*snapshot)[path] = content;
    }
    auto peek = [snapshot](const std::string& path, std::size_t max_bytes) -> std::optional<std::string> {
        auto it = snapshot->find(path);
        if (it == snapshot->end()) return std::nullopt;
        return it->second.substr(0, max_bytes);
    };
    return RepoTree(std::move(entries), peek, peek_limit);
}

bool RepoTree::has_file(const std::string& path) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), path,
                               [](const RepoEntry& e, const std::string& p) { return e.path < p; });
    return it != entries_.end() && it->path == path && it->kind == EntryKind::file;
}

bool RepoTree::has_dir(const std::string& path) const {
    auto it = std::lower_bound(entries_.begin(), entries_.end(), path,
                               [](const RepoEntry& e, const std::string& p) { return e.path < p; });
    return it != entries_.end() && it->path == path && it->kind == EntryKind::dir;
}

std::optional<std::string> RepoTree::peek(const std::string& path) const {
    if (!peek_ || !has_file(path)) return std::nullopt;
    auto out = peek_(path, peek_limit_);
    if (out && out->size() > peek_limit_) out->resize(peek_limit_);
    return out;
}

RepoTree RepoTree::with_peek(PeekFn peek) const {
    RepoTree copy = *this;
    copy.peek_ = std::move(peek);
    return copy;
}

// ---------------------------------------------------------------------------
// enum names

std::string to_string(DependencyManager m) {
    switch (m) {
        case DependencyManager::poetry: return "poetry";
        case DependencyManager::pip_requirements: return "pip_requirements";
        case DependencyManager::setuptools: return "setuptools";
        case DependencyManager::pep517_generic: return "pep517_generic";
        case DependencyManager::conda: return "conda";
        case DependencyManager::unknown: return "unknown";
    }
    return "unknown";
}

std::string to_string(PackageLayout l) {
    switch (l) {
        case PackageLayout::src_layout: return "src_layout";
        case PackageLayout::flat_package: return "flat_package";
        case PackageLayout::scripts_only: return "scripts_only";
        case PackageLayout::unknown: return "unknown";
    }
    return "unknown";
}

std::string to_string(TestFramework f) {
    switch (f) {
        case TestFramework::pytest: return "pytest";
        case TestFramework::unittest: return "unittest";
        case TestFramework::none_detected: return "none_detected";
    }
    return "none_detected";
}

DependencyManager dependency_manager_from_string(const std::string& s) {
    for (auto m : {DependencyManager::poetry, DependencyManager::pip_requirements,
                   DependencyManager::setuptools, DependencyManager::pep517_generic,
                   DependencyManager::conda})
        if (to_string(m) == s) return m;
    return DependencyManager::unknown;
}

PackageLayout package_layout_from_string(const std::string& s) {
    for (auto l : {PackageLayout::src_layout, PackageLayout::flat_package, PackageLayout::scripts_only})
        if (to_string(l) == s) return l;
    return PackageLayout::unknown;
}

TestFramework test_framework_from_string(const std::string& s) {
    if (s == "pytest") return TestFramework::pytest;
    if (s == "unittest") return TestFramework::unittest;
    return TestFramework::none_detected;
}

// ---------------------------------------------------------------------------
// detectors

DependencyStrategy detect_dependency_strategy(const RepoTree& tree) {
    std::array<std::vector<std::string>, kMarkerKinds> found;
    for (const auto& e : tree.entries()) {
        if (e.kind != EntryKind::file) continue;
        const std::string& p = e.path;
        int kind = -1;
        if (p == "poetry.lock") {
            kind = kPoetryLock;
        } else if (p == "pyproject.toml") {
            auto body = tree.peek(p);
            if (!body) continue;
            kind = has_poetry_marker(*body) ? kPoetryPyproject : kGenericPyproject;
        } else if (is_requirements_file(p)) {
            kind = kRequirements;
        } else if (p == "setup.py" || p == "setup.cfg") {
            kind = kSetup;
        } else if (p == "environment.yml" || p == "environment.yaml") {
            kind = kCondaEnv;
        }
        if (kind < 0) continue;
        if (kind != kPoetryPyproject && kind != kGenericPyproject && !tree.peek(p)) continue;
        found[static_cast<std::size_t>(kind)].push_back(p);
    }

    DependencyStrategy out;
    static constexpr std::array<DependencyManager, kMarkerKinds> manager_of = {
        DependencyManager::poetry,     DependencyManager::poetry, DependencyManager::pip_requirements,
        DependencyManager::setuptools, DependencyManager::conda,  DependencyManager::pep517_generic};
    for (std::size_t k = 0; k < kMarkerKinds; ++k) {
        if (found[k].empty()) continue;
        if (out.manager == DependencyManager::unknown) out.manager = manager_of[k];
        out.evidence.insert(out.evidence.end(), found[k].begin(), found[k].end());
    }
    out.lockfile_present = !found[kPoetryLock].empty();
    return out;
}

ImportabilityHypothesis assess_importability(const RepoTree& tree) {
    std::vector<std::string> metadata, src_pkgs, flat_pkgs, scripts;
    for (const auto& e : tree.entries()) {
        if (e.kind != EntryKind::file) continue;
        const std::string& p = e.path;
        const auto parts = text::split(p, '/');
        if (std::any_of(parts.begin(), parts.end(), [](const std::string& d) { return !d.empty() && d[0] == '.'; }))
            continue;
        if ((p == "pyproject.toml" || p == "setup.py" || p == "setup.cfg") && tree.peek(p)) {
            metadata.push_back(p);
        } else if (parts.size() == 3 && parts[0] == "src" && parts[2] == "__init__.py") {
            src_pkgs.push_back(p);
        } else if (parts.size() == 2 && parts[1] == "__init__.py" && !non_package_dirs().count(parts[0]) &&
                   parts[0][0] != '.') {
            flat_pkgs.push_back(p);
        } else if (is_python(p) && p != "conftest.py" && !is_test_file(p) && !under_test_dir(p) &&
                   parts[0] != "src") {
            scripts.push_back(p);
        }
    }

    ImportabilityHypothesis out;
    out.evidence = metadata;
    if (!src_pkgs.empty()) {
        out.layout = PackageLayout::src_layout;
        out.evidence.insert(out.evidence.end(), src_pkgs.begin(), src_pkgs.end());
    } else if (!flat_pkgs.empty()) {
        out.layout = PackageLayout::flat_package;
        out.evidence.insert(out.evidence.end(), flat_pkgs.begin(), flat_pkgs.end());
    } else if (!scripts.empty()) {
        out.layout = PackageLayout::scripts_only;
        out.evidence.insert(out.evidence.end(), scripts.begin(), scripts.end());
    }
    out.needs_install = !metadata.empty() || out.layout == PackageLayout::src_layout;
    return out;
}

TestStructureHypothesis hypothesize_test_structure(const RepoTree& tree) {
    std::set<std::string> named_dirs, test_file_dirs;
    std::vector<std::string> test_sources;
    for (const auto& e : tree.entries()) {
        if (e.kind != EntryKind::file || !is_python(e.path)) continue;
        const auto parts = text::split(e.path, '/');
        std::string prefix;
        bool in_named = false;
        for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
            prefix = prefix.empty() ? parts[i] : prefix + "/" + parts[i];
            if (is_test_dir_name(parts[i])) {
                named_dirs.insert(prefix);
                in_named = true;
            }
        }
        if (is_test_file(e.path)) {
            if (!in_named) test_file_dirs.insert(dirname_of(e.path));
            test_sources.push_back(e.path);
        } else if (in_named && basename_of(e.path) != "__init__.py") {
            test_sources.push_back(e.path);
        }
    }

    TestStructureHypothesis out;
    std::set<std::string> dirs = named_dirs;
    dirs.insert(test_file_dirs.begin(), test_file_dirs.end());
    out.test_dirs.assign(dirs.begin(), dirs.end());
    out.tests_present = !out.test_dirs.empty();
    if (!out.tests_present) return out;

    bool pytest_config = false;
    for (const auto& e : tree.entries()) {
        if (e.kind != EntryKind::file) continue;
        const std::string base = basename_of(e.path);
        if (base == "pytest.ini" || base == "conftest.py") {
            pytest_config = true;
        } else if (e.path == "tox.ini" || e.path == "setup.cfg" || e.path == "pyproject.toml") {
            auto body = tree.peek(e.path);
            if (body && (text::contains(*body, "[pytest]") || text::contains(*body, "[tool:pytest]") ||
                         text::contains(*body, "[tool.pytest")))
                pytest_config = true;
        }
    }

    bool uses_pytest = false, uses_unittest = false;
    const auto project_names = top_level_names(tree);
    for (const auto& path : test_sources) {
        auto body = tree.peek(path);
        if (!body) continue;
        if (text::contains(*body, "import pytest") || text::contains(*body, "from pytest")) uses_pytest = true;
        if (text::contains(*body, "import unittest") || text::contains(*body, "from unittest"))
            uses_unittest = true;
        if (!out.imports_project && imports_any(*body, project_names)) out.imports_project = true;
    }

    if (pytest_config || uses_pytest || !uses_unittest) {
        out.framework = TestFramework::pytest;
    } else {
        out.framework = TestFramework::unittest;
    }
    return out;
}

PriorSummary extract_prior(const RepoTree& tree) {
    return PriorSummary{detect_dependency_strategy(tree), assess_importability(tree),
                        hypothesize_test_structure(tree)};
}

std::string render_prior_prompt(const PriorSummary& s) {
    auto render = [&s](std::size_t max_listed) {
        std::string out = "Repository prior summary\n";
        out += "dependency: " + to_string(s.dependency.manager) +
               "; lockfile: " + (s.dependency.lockfile_present ? "yes" : "no") +
               "; evidence: " + list_or_none(s.dependency.evidence, max_listed) + "\n";
        out += "importability: " + to_string(s.importability.layout) +
               "; install required: " + (s.importability.needs_install ? "yes" : "no") +
               "; evidence: " + list_or_none(s.importability.evidence, max_listed) + "\n";
        out += "tests: " + to_string(s.tests.framework) + "; dirs: " + list_or_none(s.tests.test_dirs, max_listed) +
               "; imports project: " + (s.tests.imports_project ? "yes" : "no") + "\n";
        return out;
    };
    // Shrink the evidence lists before resorting to a hard cut.
    for (std::size_t listed = 8;; --listed) {
        std::string out = render(listed);
        if (out.size() <= kPriorPromptLimit) return out;
        if (listed == 1) return text::clip(out, kPriorPromptLimit);
    }
}

}  // namespace evoconfig
