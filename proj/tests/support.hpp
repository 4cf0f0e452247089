#pragma once

// Shared helpers for the test binaries: seeded generators, scripted
// providers and corpus access.

#include <unistd.h>

#include <algorithm>
#include <deque>
#include <filesystem>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "evoconfig/config.hpp"
#include "evoconfig/llm.hpp"

namespace evoconfig::testing {

/// Small wrapper over a fixed-seed engine so every property test is replayable.
class Gen {
public:
    explicit Gen(std::uint64_t seed) : rng_(seed) {}

    int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng_); }
    double real(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
    bool chance(double p) { return std::bernoulli_distribution(p)(rng_); }

    template <typename T>
    const T& pick(const std::vector<T>& xs) {
        return xs.at(static_cast<std::size_t>(uniform(0, static_cast<int>(xs.size()) - 1)));
    }

    std::string word(int min_len = 1, int max_len = 8) {
        static const std::string alphabet = "abcdefghijklmnopqrstuvwxyz0123456789_-";
        std::string s;
        int n = uniform(min_len, max_len);
        for (int i = 0; i < n; ++i) s += alphabet[static_cast<std::size_t>(uniform(0, 25))];
        for (int i = 0; i < n / 3; ++i) s[static_cast<std::size_t>(uniform(0, n - 1))] =
                                            alphabet[static_cast<std::size_t>(uniform(0, 37))];
        return s;
    }

    std::mt19937_64& engine() { return rng_; }

private:
    std::mt19937_64 rng_;
};

/// Provider that returns queued replies and fails loudly when drained.
class ScriptedProvider : public Provider {
public:
    explicit ScriptedProvider(std::vector<std::string> replies) : replies_(replies.begin(), replies.end()) {}
    Completion complete(const std::vector<ChatTurn>& messages) override {
        seen.push_back(messages);
        if (replies_.empty()) throw ProviderError("scripted provider drained");
        Completion c;
        c.reply = {Role::assistant, replies_.front()};
        replies_.pop_front();
        c.usage = {estimate_tokens(messages), estimate_tokens(c.reply.content)};
        return c;
    }
    std::string name() const override { return "scripted"; }

    std::vector<std::vector<ChatTurn>> seen;

private:
    std::deque<std::string> replies_;
};

/// Any call is a failure: used to prove that replay and simulator runs stay offline.
class NoNetworkProvider : public Provider {
public:
    Completion complete(const std::vector<ChatTurn>&) override {
        throw std::logic_error("network provider called in an offline run");
    }
    std::string name() const override { return "no-network"; }
};

inline std::filesystem::path corpus_dir() { return default_corpus_path(); }

inline std::filesystem::path scenario_dir(const std::string& name) { return corpus_dir() / name; }

inline std::vector<std::string> corpus_names() {
    std::vector<std::string> out;
    for (const auto& e : std::filesystem::directory_iterator(corpus_dir()))
        if (std::filesystem::exists(e.path() / "scenario.json")) out.push_back(e.path().filename().string());
    std::sort(out.begin(), out.end());
    return out;
}

/// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("evoconfig-test-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
};

}  // namespace evoconfig::testing
