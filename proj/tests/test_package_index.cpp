#include <functional>

#include <gtest/gtest.h>

#include "evoconfig/package_index.hpp"
#include "support.hpp"

using namespace evoconfig::sim;
using evoconfig::testing::Gen;
using nlohmann::json;

namespace {

// Reference comparison: numeric tuples padded with zeros.
int tuple_compare(const std::vector<int>& a, const std::vector<int>& b) {
    std::size_t n = std::max(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        int x = i < a.size() ? a[i] : 0, y = i < b.size() ? b[i] : 0;
        if (x != y) return x < y ? -1 : 1;
    }
    return 0;
}

std::string dotted(const std::vector<int>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "." : "") + std::to_string(v[i]);
    return s;
}

}  // namespace

TEST(PackageIndex, VersionOrderMatchesTupleOrder) {
    Gen g(21);
    for (int i = 0; i < 2000; ++i) {
        std::vector<int> a(static_cast<std::size_t>(g.uniform(1, 4))), b(static_cast<std::size_t>(g.uniform(1, 4)));
        for (auto& x : a) x = g.uniform(0, 12);
        for (auto& x : b) x = g.uniform(0, 12);
        EXPECT_EQ(compare_versions(dotted(a), dotted(b)), tuple_compare(a, b)) << dotted(a) << " " << dotted(b);
    }
    EXPECT_EQ(compare_versions("1.10", "1.9"), 1);
    EXPECT_EQ(compare_versions("2.0", "2.0.0"), 0);
}

TEST(PackageIndex, RequirementParsing) {
    auto r = parse_requirement("Py_YAML[extra] >= 5.1, <7");
    EXPECT_EQ(r.name, "py-yaml");
    ASSERT_EQ(r.clauses.size(), 2u);
    EXPECT_TRUE(r.satisfied_by("6.0.1"));
    EXPECT_FALSE(r.satisfied_by("7.0"));
    EXPECT_FALSE(r.satisfied_by("5.0"));
    EXPECT_EQ(parse_requirement("numpy==1.26.4").to_string(), "numpy==1.26.4");
    EXPECT_TRUE(parse_requirement("click").satisfied_by("0.1"));
    EXPECT_THROW(parse_requirement("  "), std::invalid_argument);
    EXPECT_THROW(parse_requirement("==1.0"), std::invalid_argument);
}

TEST(PackageIndex, RegistryJson) {
    auto idx = PackageIndex::from_json(json::parse(R"({"packages": {
        "PyYAML": {"releases": {"6.0.1": {}, "5.4": {"wheel": false, "needs": ["compiler"]}}, "modules": ["yaml"]},
        "numpy": {"releases": ["1.26.4", "2.0.0"]}},
        "conflicts": [["a", "b"]]})"));
    EXPECT_EQ(idx.versions("pyyaml"), (std::vector<std::string>{"6.0.1", "5.4"}));
    EXPECT_EQ(idx.provider_of_module("yaml"), "pyyaml");
    EXPECT_EQ(idx.modules_of("numpy"), (std::vector<std::string>{"numpy"}));
    EXPECT_FALSE(idx.release("pyyaml", "5.4")->wheel);
    EXPECT_EQ(idx.conflict_pairs().size(), 1u);
    EXPECT_EQ(PackageIndex::from_json(idx.to_json()).to_json(), idx.to_json());
    EXPECT_THROW(PackageIndex::from_json(json::parse(R"({"conflicts": [["a"]]})")), std::invalid_argument);
}

TEST(PackageIndex, ConflictMessageNamesEveryParty) {
    auto idx = PackageIndex::from_json(json::parse(R"({"packages": {
        "numpy": {"releases": ["1.26.4", "2.0.0"]},
        "tabkit": {"releases": {"2.0.0": {"requires": ["numpy>=2.0"]}}}}})"));
    ResolveRequest req;
    req.requested = {parse_requirement("numpy==1.26.4"), parse_requirement("tabkit==2.0.0")};
    auto r = resolve(idx, req);
    ASSERT_FALSE(r.ok);
    EXPECT_NE(r.error.find("Cannot install numpy==1.26.4 and tabkit==2.0.0"), std::string::npos) << r.error;
    EXPECT_NE(r.error.find("The user requested numpy==1.26.4"), std::string::npos);
    EXPECT_NE(r.error.find("tabkit 2.0.0 depends on numpy>=2.0"), std::string::npos);
    EXPECT_NE(r.error.find("ResolutionImpossible"), std::string::npos);
}

TEST(PackageIndex, SourceBuildNeedsFacts) {
    auto idx = PackageIndex::from_json(
        json::parse(R"({"packages": {"fast": {"releases": {"1.0": {"wheel": false, "needs": ["compiler"], "build_seconds": 50}}}}})"));
    ResolveRequest req;
    req.requested = {parse_requirement("fast")};
    auto r = resolve(idx, req);
    EXPECT_FALSE(r.ok);
    EXPECT_NE(r.error.find("gcc"), std::string::npos);
    req.facts = {"compiler"};
    r = resolve(idx, req);
    EXPECT_TRUE(r.ok);
    EXPECT_EQ(r.source_builds, (std::vector<std::string>{"fast"}));
    EXPECT_GE(r.duration, 50.0);
}

TEST(PackageIndex, PreferBinaryPicksWheel) {
    auto idx = PackageIndex::from_json(
        json::parse(R"({"packages": {"big": {"releases": {"2.9.0": {}, "3.0.0": {"wheel": false}}}}})"));
    ResolveRequest req;
    req.requested = {parse_requirement("big")};
    EXPECT_EQ(resolve(idx, req).to_install.at("big"), "3.0.0");
    req.prefer_binary = true;
    EXPECT_EQ(resolve(idx, req).to_install.at("big"), "2.9.0");
}

TEST(PackageIndex, InstalledPackagesAreKeptWhenTheyFit) {
    auto idx = PackageIndex::from_json(json::parse(R"({"packages": {"a": {"releases": ["1.0", "2.0"]}}})"));
    ResolveRequest req;
    req.requested = {parse_requirement("a>=1.0")};
    req.installed = {{"a", "1.0"}};
    auto r = resolve(idx, req);
    EXPECT_TRUE(r.ok);
    EXPECT_TRUE(r.to_install.empty());
    req.requested = {parse_requirement("a>=2.0")};
    EXPECT_EQ(resolve(idx, req).to_install.at("a"), "2.0");
}

// Brute force over every partial assignment of a tiny random registry.
TEST(PackageIndex, ResolverAgreesWithExhaustiveSearch) {
    Gen g(99);
    const std::vector<std::string> names = {"p0", "p1", "p2", "p3"};
    const std::vector<std::string> ops = {"==", ">=", "<", "!="};
    for (int trial = 0; trial < 400; ++trial) {
        json packages = json::object();
        std::map<std::string, std::vector<std::string>> versions;
        std::map<std::pair<std::string, std::string>, std::vector<Requirement>> deps;
        for (std::size_t i = 0; i < names.size(); ++i) {
            json releases = json::object();
            int n = g.uniform(1, 3);
            for (int v = 1; v <= n; ++v) {
                std::string ver = std::to_string(v) + ".0";
                versions[names[i]].push_back(ver);
                json reqs = json::array();
                for (std::size_t j = i + 1; j < names.size(); ++j) {
                    if (!g.chance(0.35)) continue;
                    std::string spec = names[j] + g.pick(ops) + std::to_string(g.uniform(1, 3)) + ".0";
                    reqs.push_back(spec);
                    deps[{names[i], ver}].push_back(parse_requirement(spec));
                }
                releases[ver] = {{"requires", reqs}};
            }
            packages[names[i]] = {{"releases", releases}};
        }
        auto idx = PackageIndex::from_json({{"packages", packages}});
        ResolveRequest req;
        int nreq = g.uniform(1, 2);
        for (int k = 0; k < nreq; ++k)
            req.requested.push_back(
                parse_requirement(g.pick(names) + g.pick(ops) + std::to_string(g.uniform(1, 3)) + ".0"));

        auto closed = [&](const std::map<std::string, std::string>& a) {
            for (const auto& r : req.requested) {
                auto it = a.find(r.name);
                if (it == a.end() || !r.satisfied_by(it->second)) return false;
            }
            for (const auto& [n, v] : a) {
                auto d = deps.find({n, v});
                if (d == deps.end()) continue;
                for (const auto& r : d->second) {
                    auto it = a.find(r.name);
                    if (it == a.end() || !r.satisfied_by(it->second)) return false;
                }
            }
            return true;
        };
        bool exists = false;
        std::map<std::string, std::string> cur;
        std::function<void(std::size_t)> enumerate = [&](std::size_t i) {
            if (exists) return;
            if (i == names.size()) {
                exists = closed(cur);
                return;
            }
            enumerate(i + 1);
            for (const auto& v : versions[names[i]]) {
                cur[names[i]] = v;
                enumerate(i + 1);
                cur.erase(names[i]);
            }
        };
        enumerate(0);

        auto r = resolve(idx, req);
        EXPECT_EQ(r.ok, exists) << "trial " << trial;
        if (r.ok) {
            EXPECT_TRUE(closed(r.to_install)) << "trial " << trial;
        } else {
            EXPECT_FALSE(r.error.empty());
        }
    }
}
