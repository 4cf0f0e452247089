// evoconfig: configure a repository or simulator scenario, evaluate a
// scenario corpus, or re-consolidate a Dockerfile from a trajectory log.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "evoconfig/agent.hpp"
#include "evoconfig/config.hpp"
#include "evoconfig/container_backend.hpp"
#include "evoconfig/dockerfile.hpp"
#include "evoconfig/eval.hpp"
#include "evoconfig/heuristic_provider.hpp"
#include "evoconfig/http_provider.hpp"
#include "evoconfig/sim_backend.hpp"
#include "evoconfig/transcript.hpp"

namespace fs = std::filesystem;
using namespace evoconfig;
using nlohmann::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitNotSolved = 1;
constexpr int kExitConfig = 2;
constexpr int kExitBackend = 3;

struct Flags {
    std::optional<std::string> config;
    std::optional<std::string> backend;
    std::optional<std::string> provider;
    std::optional<std::string> transcript;
    std::optional<int> t_max;
    std::optional<double> time_budget;
    std::optional<long long> context_budget;
    std::optional<int> workers;
    std::optional<std::string> out;
    std::optional<std::string> seed_rules;
    std::optional<std::string> base_image;
    std::optional<std::string> tag;
    bool no_prior = false;
    bool ablate = false;
};

void add_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config, "JSON config file");
    cmd->add_option("--backend", f.backend, "sim or container");
    cmd->add_option("--provider", f.provider, "replay, policy, record or live");
    cmd->add_option("--transcript", f.transcript, "replay transcript (configure only)");
    cmd->add_option("--t-max", f.t_max, "maximum interaction rounds");
    cmd->add_option("--time-budget", f.time_budget, "wall-clock budget in seconds");
    cmd->add_option("--context-budget", f.context_budget, "context token budget");
    cmd->add_option("--seed-rules", f.seed_rules, "seed rule set JSON");
    cmd->add_option("--base-image", f.base_image, "Dockerfile base image");
    cmd->add_option("--out", f.out, "output directory");
    cmd->add_flag("--no-prior", f.no_prior, "do not inject the repository prior");
    cmd->add_flag("--ablate-diagnosis", f.ablate, "exit-code-only diagnosis, no tools, no rule evolution");
}

CliConfig resolve(const Flags& f) {
    CliConfig c = load_cli_config(f.config ? std::optional<fs::path>(*f.config) : std::nullopt);
    if (f.backend) c.backend = *f.backend;
    if (f.provider) {
        try {
            c.provider = provider_mode_from_string(*f.provider);
        } catch (const std::invalid_argument& e) {
            throw ConfigError(e.what());
        }
    }
    if (f.transcript) c.transcript = fs::path(*f.transcript);
    if (f.t_max) c.session.t_max = *f.t_max;
    if (f.time_budget) c.session.wall_clock_budget = *f.time_budget;
    if (f.context_budget) c.session.context_token_budget = *f.context_budget;
    if (f.workers) c.workers = *f.workers;
    if (f.out) c.out_dir = *f.out;
    if (f.seed_rules) c.seed_rules = *f.seed_rules;
    if (f.base_image) c.base_image = *f.base_image;
    if (f.tag) c.tag = *f.tag;
    if (f.no_prior) c.session.use_prior = false;
    if (f.ablate) c.session.ablate_diagnosis = true;
    validate(c);
    return c;
}

RuleSet load_seed(const CliConfig& c) {
    fs::path path = c.seed_rules.empty() ? default_seed_rules_path() : c.seed_rules;
    try {
        return RuleSet::load(path);
    } catch (const std::exception& e) {
        throw ConfigError("seed rules " + path.string() + ": " + e.what());
    }
}

std::shared_ptr<Provider> live_provider(const CliConfig& c) {
    HttpProviderConfig h = c.http;
    const char* key = std::getenv(c.api_key_env.c_str());
    if (!key || !*key) throw ConfigError("live provider: environment variable " + c.api_key_env + " is not set");
    h.api_key = key;
    return std::make_shared<HttpProvider>(h);
}

void write_file(const fs::path& p, const std::string& body) {
    std::ofstream out(p);
    if (!out) throw std::runtime_error("cannot write " + p.string());
    out << body;
}

// ---------------------------------------------------------------------------

int cmd_configure(const std::string& target, const Flags& flags) {
    CliConfig c = resolve(flags);
    RuleSet seed = load_seed(c);

    std::unique_ptr<Backend> backend;
    fs::path scenario_dir;
    std::optional<sim::Scenario> scenario;
    SessionConfig session = c.session;
    if (c.backend == "sim") {
        fs::path file = fs::is_directory(target) ? fs::path(target) / "scenario.json" : fs::path(target);
        scenario_dir = file.parent_path();
        try {
            scenario = sim::load_scenario(file);
        } catch (const std::exception& e) {
            throw ConfigError(e.what());
        }
        if (scenario->t_max && !flags.t_max) session.t_max = *scenario->t_max;
        if (scenario->time_budget && !flags.time_budget) session.wall_clock_budget = *scenario->time_budget;
        backend = std::make_unique<sim::SimBackend>(*scenario);
    } else {
        if (!fs::is_directory(target)) throw ConfigError("container backend needs a repository directory");
        ContainerConfig cc;
        cc.base_image = c.base_image;
        backend = std::make_unique<ContainerBackend>(target, cc);
    }

    std::shared_ptr<Provider> provider;
    std::shared_ptr<RecordingProvider> recorder;
    fs::path transcript_path = c.transcript ? *c.transcript : scenario_dir / transcript_file_name(c.session);
    switch (c.provider) {
        case ProviderMode::replay:
            try {
                provider = std::make_shared<ReplayProvider>(Transcript::load(transcript_path));
            } catch (const std::exception& e) {
                throw ConfigError(e.what());
            }
            break;
        case ProviderMode::policy: provider = std::make_shared<PolicyProvider>(); break;
        case ProviderMode::record:
            recorder = std::make_shared<RecordingProvider>(std::make_shared<PolicyProvider>());
            provider = recorder;
            break;
        case ProviderMode::live: provider = live_provider(c); break;
    }

    fs::create_directories(c.out_dir);
    std::ofstream log_file(c.out_dir / "trajectory.jsonl");
    TrajectoryLog log(log_file);
    LlmSession model(provider, c.prices);
    SessionOutcome outcome = run_session(*backend, model, seed, session, &log);
    if (recorder) recorder->transcript().save(transcript_path);

    json summary = outcome_summary_json(outcome);
    write_file(c.out_dir / "outcome.json", summary.dump(2) + "\n");
    write_file(c.out_dir / "usage.json", to_json(outcome.usage).dump(2) + "\n");
    std::cout << outcome.source << ": " << to_string(outcome.status) << " after " << outcome.rounds_used
              << " round(s)";
    if (!outcome.error.empty()) std::cout << " (" << outcome.error << ")";
    std::cout << "\n";
    if (outcome.status != SessionStatus::solved) return kExitNotSolved;

    DockerfileConfig dc;
    dc.base_image = c.base_image;
    dc.step_timeout = session.per_command_timeout;
    DockerfileArtifact artifact = consolidate(outcome, dc);
    write_file(c.out_dir / "Dockerfile", artifact.rendered);
    write_file(c.out_dir / "provenance.json", provenance_json(artifact).dump(2) + "\n");
    BuildResult build = verify_build(artifact, *backend, dc.step_timeout);
    write_file(c.out_dir / "build.log", build.log);
    std::cout << "Dockerfile: " << (c.out_dir / "Dockerfile").string() << " (built=" << (build.built ? "true" : "false")
              << ", solved=" << (build.solved ? "true" : "false") << ")\n";
    backend->close();
    return kExitOk;
}

int cmd_eval(const std::string& corpus, const Flags& flags, bool record) {
    CliConfig c = resolve(flags);
    if (c.backend != "sim") throw ConfigError("corpus evaluation runs on the simulator backend only");
    CorpusOptions o;
    o.session = c.session;
    o.mode = record ? ProviderMode::record : c.provider;
    o.tag = c.tag;
    o.workers = c.workers;
    o.seed_rules = load_seed(c);
    o.dockerfile.base_image = c.base_image;
    o.dockerfile.step_timeout = c.session.per_command_timeout;
    o.prices = c.prices;
    o.out_dir = c.out_dir;
    if (o.mode == ProviderMode::live) o.live_provider = [c] { return live_provider(c); };
    if (!fs::is_directory(corpus)) throw ConfigError("corpus directory " + corpus + " does not exist");
    CorpusReport report;
    try {
        report = run_corpus(corpus, o);
    } catch (const CorpusEmpty& e) {
        throw ConfigError(e.what());
    }
    std::cout << report.render_table();
    return report.load_errors == 0 ? kExitOk : kExitNotSolved;
}

int cmd_synth(const std::string& log_path, const Flags& flags) {
    CliConfig c = resolve(flags);
    std::ifstream in(log_path);
    if (!in) throw ConfigError("cannot read trajectory log " + log_path);
    ParsedLog parsed = parse_trajectory_log(in);
    if (!parsed.status || *parsed.status != SessionStatus::solved) {
        std::cerr << "not solved: " << log_path << " ended "
                  << (parsed.status ? to_string(*parsed.status) : std::string("without an outcome")) << "\n";
        return kExitNotSolved;
    }
    DockerfileConfig dc;
    dc.base_image = c.base_image;
    DockerfileArtifact artifact = consolidate_trajectory(parsed.trajectory, dc);
    fs::create_directories(c.out_dir);
    write_file(c.out_dir / "Dockerfile", artifact.rendered);
    write_file(c.out_dir / "provenance.json", provenance_json(artifact).dump(2) + "\n");
    std::cout << "wrote " << (c.out_dir / "Dockerfile").string() << " with " << artifact.run_steps.size()
              << " step(s)\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"evoconfig: environment configuration agent with expert diagnosis"};
    app.require_subcommand(1);

    Flags configure_flags, eval_flags, synth_flags;
    std::string target, corpus, log_path;
    bool record = false;

    auto* configure = app.add_subcommand("configure", "configure one repository or simulator scenario");
    configure->add_option("target", target, "scenario file/directory or repository path")->required();
    add_common(configure, configure_flags);

    auto* eval = app.add_subcommand("eval", "run every scenario of a corpus and report metrics");
    eval->add_option("corpus", corpus, "corpus directory")->required();
    add_common(eval, eval_flags);
    eval->add_option("--workers", eval_flags.workers, "parallel sessions");
    eval->add_option("--tag", eval_flags.tag, "only scenarios with this tag");
    eval->add_flag("--record", record, "run the offline policy model and (re)write the transcripts");

    auto* synth = app.add_subcommand("synth", "consolidate a Dockerfile from a trajectory log");
    synth->add_option("log", log_path, "trajectory.jsonl of a solved session")->required();
    add_common(synth, synth_flags);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (*configure) return cmd_configure(target, configure_flags);
        if (*eval) return cmd_eval(corpus, eval_flags, record);
        if (*synth) return cmd_synth(log_path, synth_flags);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const RuleInvalid& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const BackendUnavailable& e) {
        std::cerr << "backend unavailable: " << e.what() << "\n";
        return kExitBackend;
    } catch (const NotSolved& e) {
        std::cerr << "not solved: " << e.what() << "\n";
        return kExitNotSolved;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitNotSolved;
    }
    return kExitConfig;
}
