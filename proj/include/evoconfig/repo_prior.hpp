#pragma once

// Pre-interaction repository scan: dependency strategy, importability and
// test structure, rendered as a compact block for the main agent's prompt.

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace evoconfig {

inline constexpr std::size_t kDefaultPeekLimit = 64 * 1024;
inline constexpr std::size_t kPriorPromptLimit = 1200;

enum class EntryKind { file, dir };

struct RepoEntry {
    std::string path;  // relative, '/'-separated, no leading "./"
    EntryKind kind = EntryKind::file;
    std::uintmax_t size = 0;
};

/// Immutable snapshot of a repository's layout plus a bounded content reader.
///
/// Entries are sorted by path and unique. `peek` returns at most
/// `peek_limit()` leading bytes, or nullopt when the file is missing or
/// unreadable. Detectors only ever read file contents through `peek`.
class RepoTree {
public:
    using PeekFn = std::function<std::optional<std::string>(const std::string& path,
                                                            std::size_t max_bytes)>;

    RepoTree() = default;
    RepoTree(std::vector<RepoEntry> entries, PeekFn peek,
             std::size_t peek_limit = kDefaultPeekLimit);

    static RepoTree from_directory(const std::filesystem::path& root,
                                   std::size_t peek_limit = kDefaultPeekLimit);
    /// Builds a tree over an in-memory file map (simulator virtual filesystem).
    /// Parent directories are synthesized; keys ending in '/' denote empty dirs.
    static RepoTree from_files(const std::map<std::string, std::string>& files,
                               std::size_t peek_limit = kDefaultPeekLimit);

    const std::vector<RepoEntry>& entries() const { return entries_; }
    std::size_t peek_limit() const { return peek_limit_; }
    bool has_file(const std::string& path) const;
    bool has_dir(const std::string& path) const;
    std::optional<std::string> peek(const std::string& path) const;

    /// Replaces the reader, e.g. with an instrumented one in tests.
    RepoTree with_peek(PeekFn peek) const;

private:
    std::vector<RepoEntry> entries_;
    PeekFn peek_;
    std::size_t peek_limit_ = kDefaultPeekLimit;
};

enum class DependencyManager { poetry, pip_requirements, setuptools, pep517_generic, conda, unknown };
enum class PackageLayout { src_layout, flat_package, scripts_only, unknown };
enum class TestFramework { pytest, unittest, none_detected };

std::string to_string(DependencyManager m);
std::string to_string(PackageLayout l);
std::string to_string(TestFramework f);
DependencyManager dependency_manager_from_string(const std::string& s);
PackageLayout package_layout_from_string(const std::string& s);
TestFramework test_framework_from_string(const std::string& s);

struct DependencyStrategy {
    DependencyManager manager = DependencyManager::unknown;
    std::vector<std::string> evidence;
    bool lockfile_present = false;

    bool operator==(const DependencyStrategy&) const = default;
};

struct ImportabilityHypothesis {
    bool needs_install = false;
    PackageLayout layout = PackageLayout::unknown;
    std::vector<std::string> evidence;

    bool operator==(const ImportabilityHypothesis&) const = default;
};

struct TestStructureHypothesis {
    bool tests_present = false;
    std::vector<std::string> test_dirs;
    TestFramework framework = TestFramework::none_detected;
    bool imports_project = false;

    bool operator==(const TestStructureHypothesis&) const = default;
};

struct PriorSummary {
    DependencyStrategy dependency;
    ImportabilityHypothesis importability;
    TestStructureHypothesis tests;

    bool operator==(const PriorSummary&) const = default;
};

DependencyStrategy detect_dependency_strategy(const RepoTree& tree);
ImportabilityHypothesis assess_importability(const RepoTree& tree);
TestStructureHypothesis hypothesize_test_structure(const RepoTree& tree);
PriorSummary extract_prior(const RepoTree& tree);
std::string render_prior_prompt(const PriorSummary& summary);

}  // namespace evoconfig
