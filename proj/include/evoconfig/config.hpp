#pragma once

// Operator configuration: defaults, then a JSON file, then EVOCONFIG_*
// environment variables; command-line flags are applied last by the CLI.

#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>

#include <nlohmann/json.hpp>

#include "evoconfig/agent.hpp"
#include "evoconfig/eval.hpp"
#include "evoconfig/http_provider.hpp"

namespace evoconfig {

inline constexpr const char* kEnvPrefix = "EVOCONFIG_";

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CliConfig {
    ProviderMode provider = ProviderMode::replay;
    HttpProviderConfig http;
    std::string api_key_env = "OPENAI_API_KEY";  // key is read from this variable, never stored
    PriceTable prices;
    SessionConfig session;
    std::string backend = "sim";  // sim | container
    std::string base_image = kDefaultBaseImage;
    std::filesystem::path seed_rules;  // empty: the bundled default
    std::filesystem::path out_dir = "evoconfig-out";
    std::optional<std::filesystem::path> transcript;
    int workers = 1;
    std::string tag;
};

using EnvLookup = std::function<std::optional<std::string>(const std::string& name)>;
EnvLookup process_env();

/// Applies the keys present in `doc`; unknown keys are rejected.
void apply_config_json(CliConfig& config, const nlohmann::json& doc);
void apply_env_overrides(CliConfig& config, const EnvLookup& env);
/// Defaults + optional file + environment, then validate. Throws ConfigError.
CliConfig load_cli_config(const std::optional<std::filesystem::path>& file, const EnvLookup& env = process_env());
/// Throws ConfigError naming the offending setting.
void validate(const CliConfig& config);
nlohmann::json to_json(const CliConfig& config);

/// Path of the bundled seed rule set.
std::filesystem::path default_seed_rules_path();
std::filesystem::path default_corpus_path();

}  // namespace evoconfig
