#include "evoconfig/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>

namespace evoconfig {

using nlohmann::json;
namespace fs = std::filesystem;

#ifndef EVOCONFIG_DATA_DIR
#define EVOCONFIG_DATA_DIR "data"
#endif

fs::path default_seed_rules_path() { return fs::path(EVOCONFIG_DATA_DIR) / "seed_rules.json"; }
fs::path default_corpus_path() { return fs::path(EVOCONFIG_DATA_DIR) / "corpus"; }

EnvLookup process_env() {
    return [](const std::string& name) -> std::optional<std::string> {
        const char* v = std::getenv(name.c_str());
        if (!v) return std::nullopt;
        return std::string(v);
    };
}

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [k, v] : obj.items())
        if (!allowed.count(k)) throw ConfigError("unknown config key " + where + k);
}

template <typename T>
void take(const json& obj, const char* key, T& target, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        target = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw ConfigError("config key " + where + key + " has the wrong type");
    }
}

int parse_int(const std::string& name, const std::string& v) {
    try {
        std::size_t used = 0;
        int out = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(name + " must be an integer, got '" + v + "'");
    }
}

double parse_double(const std::string& name, const std::string& v) {
    try {
        std::size_t used = 0;
        double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw ConfigError(name + " must be a number, got '" + v + "'");
    }
}

bool parse_bool(const std::string& name, const std::string& v) {
    if (v == "1" || v == "true" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "no") return false;
    throw ConfigError(name + " must be true or false, got '" + v + "'");
}

}  // namespace

void apply_config_json(CliConfig& c, const json& doc) {
    if (!doc.is_object()) throw ConfigError("config file must hold a JSON object");
    reject_unknown(doc, {"provider", "prices", "session", "backend", "base_image", "seed_rules", "out_dir", "transcript",
                         "workers", "tag"},
                   "");
    if (doc.contains("provider")) {
        const json& p = doc["provider"];
        if (!p.is_object()) throw ConfigError("config key provider must be an object");
        reject_unknown(p, {"mode", "endpoint", "model", "api_key_env", "timeout_s", "max_retries", "backoff_s",
                           "temperature"},
                       "provider.");
        std::string mode;
        take(p, "mode", mode, "provider.");
        if (!mode.empty()) {
            try {
                c.provider = provider_mode_from_string(mode);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(e.what());
            }
        }
        take(p, "endpoint", c.http.endpoint, "provider.");
        take(p, "model", c.http.model, "provider.");
        take(p, "api_key_env", c.api_key_env, "provider.");
        take(p, "timeout_s", c.http.timeout_s, "provider.");
        take(p, "max_retries", c.http.max_retries, "provider.");
        take(p, "backoff_s", c.http.backoff_s, "provider.");
        take(p, "temperature", c.http.temperature, "provider.");
    }
    if (doc.contains("prices")) {
        const json& p = doc["prices"];
        reject_unknown(p, {"prompt_per_million", "completion_per_million"}, "prices.");
        take(p, "prompt_per_million", c.prices.prompt_per_million, "prices.");
        take(p, "completion_per_million", c.prices.completion_per_million, "prices.");
    }
    if (doc.contains("session")) {
        const json& s = doc["session"];
        reject_unknown(s, {"t_max", "wall_clock_budget", "context_token_budget", "per_command_timeout", "use_prior",
                           "ablate_diagnosis"},
                       "session.");
        take(s, "t_max", c.session.t_max, "session.");
        take(s, "wall_clock_budget", c.session.wall_clock_budget, "session.");
        take(s, "context_token_budget", c.session.context_token_budget, "session.");
        take(s, "per_command_timeout", c.session.per_command_timeout, "session.");
        take(s, "use_prior", c.session.use_prior, "session.");
        take(s, "ablate_diagnosis", c.session.ablate_diagnosis, "session.");
    }
    take(doc, "backend", c.backend, "");
    take(doc, "base_image", c.base_image, "");
    std::string path;
    take(doc, "seed_rules", path, "");
    if (!path.empty()) c.seed_rules = path;
    path.clear();
    take(doc, "out_dir", path, "");
    if (!path.empty()) c.out_dir = path;
    path.clear();
    take(doc, "transcript", path, "");
    if (!path.empty()) c.transcript = fs::path(path);
    take(doc, "workers", c.workers, "");
    take(doc, "tag", c.tag, "");
}

void apply_env_overrides(CliConfig& c, const EnvLookup& env) {
    auto get = [&](const char* suffix) { return env(std::string(kEnvPrefix) + suffix); };
    auto name = [](const char* suffix) { return std::string(kEnvPrefix) + suffix; };
    if (auto v = get("PROVIDER")) {
        try {
            c.provider = provider_mode_from_string(*v);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(name("PROVIDER") + ": " + e.what());
        }
    }
    if (auto v = get("ENDPOINT")) c.http.endpoint = *v;
    if (auto v = get("MODEL")) c.http.model = *v;
    if (auto v = get("API_KEY_ENV")) c.api_key_env = *v;
    if (auto v = get("T_MAX")) c.session.t_max = parse_int(name("T_MAX"), *v);
    if (auto v = get("TIME_BUDGET")) c.session.wall_clock_budget = parse_double(name("TIME_BUDGET"), *v);
    if (auto v = get("CONTEXT_BUDGET")) c.session.context_token_budget = parse_int(name("CONTEXT_BUDGET"), *v);
    if (auto v = get("COMMAND_TIMEOUT")) c.session.per_command_timeout = parse_double(name("COMMAND_TIMEOUT"), *v);
    if (auto v = get("NO_PRIOR")) c.session.use_prior = !parse_bool(name("NO_PRIOR"), *v);
    if (auto v = get("ABLATE_DIAGNOSIS")) c.session.ablate_diagnosis = parse_bool(name("ABLATE_DIAGNOSIS"), *v);
    if (auto v = get("BACKEND")) c.backend = *v;
    if (auto v = get("BASE_IMAGE")) c.base_image = *v;
    if (auto v = get("SEED_RULES")) c.seed_rules = *v;
    if (auto v = get("OUT")) c.out_dir = *v;
    if (auto v = get("WORKERS")) c.workers = parse_int(name("WORKERS"), *v);
}

void validate(const CliConfig& c) {
    try {
        validate(c.session);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    if (c.backend != "sim" && c.backend != "container")
        throw ConfigError("backend must be sim or container, got '" + c.backend + "'");
    if (c.workers < 1) throw ConfigError("workers must be >= 1");
    if (c.prices.prompt_per_million < 0 || c.prices.completion_per_million < 0)
        throw ConfigError("prices must be non-negative");
    if (c.base_image.empty()) throw ConfigError("base_image must not be empty");
    if (c.provider == ProviderMode::live) {
        if (c.http.endpoint.empty() || c.http.model.empty()) throw ConfigError("live provider needs endpoint and model");
        if (c.http.timeout_s <= 0 || c.http.max_retries < 0) throw ConfigError("invalid provider timeout or retries");
    }
}

CliConfig load_cli_config(const std::optional<fs::path>& file, const EnvLookup& env) {
    CliConfig c;
    if (file) {
        std::ifstream in(*file);
        if (!in) throw ConfigError("cannot read config file " + file->string());
        json doc;
        try {
            doc = json::parse(in);
        } catch (const json::exception& e) {
            throw ConfigError("config file " + file->string() + ": " + e.what());
        }
        apply_config_json(c, doc);
    }
    apply_env_overrides(c, env);
    validate(c);
    return c;
}

json to_json(const CliConfig& c) {
    return {{"provider",
             {{"mode", to_string(c.provider)},
              {"endpoint", c.http.endpoint},
              {"model", c.http.model},
              {"api_key_env", c.api_key_env},
              {"timeout_s", c.http.timeout_s},
              {"max_retries", c.http.max_retries},
              {"backoff_s", c.http.backoff_s},
              {"temperature", c.http.temperature}}},
            {"prices",
             {{"prompt_per_million", c.prices.prompt_per_million},
              {"completion_per_million", c.prices.completion_per_million}}},
            {"session", to_json(c.session)},
            {"backend", c.backend},
            {"base_image", c.base_image},
            {"seed_rules", c.seed_rules.string()},
            {"out_dir", c.out_dir.string()},
            {"transcript", c.transcript ? json(c.transcript->string()) : json()},
            {"workers", c.workers},
            {"tag", c.tag}};
}

}  // namespace evoconfig
