#include <fstream>
#include <map>

#include <gtest/gtest.h>

#include "evoconfig/config.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::TempDir;
using nlohmann::json;

namespace {

EnvLookup env_of(std::map<std::string, std::string> vars) {
    return [vars = std::move(vars)](const std::string& name) -> std::optional<std::string> {
        auto it = vars.find(name);
        if (it == vars.end()) return std::nullopt;
        return it->second;
    };
}

}  // namespace

TEST(Config, DefaultsAreValidAndOffline) {
    auto c = load_cli_config(std::nullopt, env_of({}));
    EXPECT_EQ(c.provider, ProviderMode::replay);
    EXPECT_EQ(c.backend, "sim");
    EXPECT_EQ(c.session.t_max, 100);
    EXPECT_DOUBLE_EQ(c.session.wall_clock_budget, 7200.0);
    EXPECT_TRUE(std::filesystem::exists(default_seed_rules_path()));
    EXPECT_TRUE(std::filesystem::is_directory(default_corpus_path()));
}

TEST(Config, FileThenEnvironment) {
    TempDir dir("config");
    std::ofstream(dir.path() / "c.json") << R"({"session": {"t_max": 12, "use_prior": false},
        "provider": {"mode": "policy"}, "workers": 3, "tag": "conflict-heavy"})";
    auto c = load_cli_config(dir.path() / "c.json", env_of({{"EVOCONFIG_T_MAX", "7"}, {"EVOCONFIG_OUT", "/tmp/x"}}));
    EXPECT_EQ(c.session.t_max, 7);  // environment wins over the file
    EXPECT_FALSE(c.session.use_prior);
    EXPECT_EQ(c.provider, ProviderMode::policy);
    EXPECT_EQ(c.workers, 3);
    EXPECT_EQ(c.tag, "conflict-heavy");
    EXPECT_EQ(c.out_dir, "/tmp/x");
    // the API key itself never lands in the config
    EXPECT_EQ(to_json(c).dump().find("sk-"), std::string::npos);
}

TEST(Config, RejectsBadInput) {
    TempDir dir("badconfig");
    auto write = [&](const std::string& body) {
        std::ofstream(dir.path() / "c.json") << body;
        return dir.path() / "c.json";
    };
    auto none = env_of({});
    EXPECT_THROW(load_cli_config(dir.path() / "missing.json", none), ConfigError);
    EXPECT_THROW(load_cli_config(write("{not json"), none), ConfigError);
    EXPECT_THROW(load_cli_config(write(R"({"sesion": {}})"), none), ConfigError);
    EXPECT_THROW(load_cli_config(write(R"({"session": {"t_max": "ten"}})"), none), ConfigError);
    EXPECT_THROW(load_cli_config(write(R"({"session": {"t_max": 0}})"), none), ConfigError);
    EXPECT_THROW(load_cli_config(write(R"({"backend": "vm"})"), none), ConfigError);
    EXPECT_THROW(load_cli_config(write(R"({"provider": {"mode": "live", "endpoint": ""}})"), none), ConfigError);
    EXPECT_THROW(load_cli_config(std::nullopt, env_of({{"EVOCONFIG_T_MAX", "many"}})), ConfigError);
    EXPECT_THROW(load_cli_config(std::nullopt, env_of({{"EVOCONFIG_PROVIDER", "psychic"}})), ConfigError);
    EXPECT_THROW(load_cli_config(std::nullopt, env_of({{"EVOCONFIG_CONTEXT_BUDGET", "10"}})), ConfigError);
}

TEST(Config, BooleanEnvironmentFlags) {
    auto c = load_cli_config(std::nullopt, env_of({{"EVOCONFIG_NO_PRIOR", "1"}, {"EVOCONFIG_ABLATE_DIAGNOSIS", "true"}}));
    EXPECT_FALSE(c.session.use_prior);
    EXPECT_TRUE(c.session.ablate_diagnosis);
    EXPECT_THROW(load_cli_config(std::nullopt, env_of({{"EVOCONFIG_NO_PRIOR", "maybe"}})), ConfigError);
}
