#pragma once

// Chat-completion gateway: provider interface plus per-session token and
// cost accounting.

#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace evoconfig {

enum class Role { system, user, assistant };
std::string to_string(Role r);
Role role_from_string(const std::string& s);

struct ChatTurn {
    Role role = Role::user;
    std::string content;

    bool operator==(const ChatTurn&) const = default;
};

struct Usage {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;

    long long total() const { return prompt_tokens + completion_tokens; }
    bool operator==(const Usage&) const = default;
};

struct Completion {
    ChatTurn reply;
    Usage usage;
};

class ProviderError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class TranscriptMismatch : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};
class TranscriptExhausted : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual Completion complete(const std::vector<ChatTurn>& messages) = 0;
    virtual std::string name() const = 0;
};

/// Rough provider-independent token estimate: characters / 4, rounded up.
long long estimate_tokens(const std::string& s);
long long estimate_tokens(const std::vector<ChatTurn>& turns);

/// USD per million tokens.
struct PriceTable {
    double prompt_per_million = 0.50;
    double completion_per_million = 1.50;

    double cost(long long prompt_tokens, long long completion_tokens) const;
};

struct UsageLedger {
    long long prompt_tokens = 0;
    long long completion_tokens = 0;
    long long calls = 0;
    double cost = 0.0;

    long long total_tokens() const { return prompt_tokens + completion_tokens; }
    bool operator==(const UsageLedger&) const = default;
};

nlohmann::json to_json(const UsageLedger& l);
UsageLedger ledger_from_json(const nlohmann::json& j);
UsageLedger operator+(const UsageLedger& a, const UsageLedger& b);

/// One conversation budget. The provider may be shared; the ledger is not.
class LlmSession {
public:
    LlmSession(std::shared_ptr<Provider> provider, PriceTable prices = {});

    /// Requires a non-empty message list starting with a system turn.
    /// Every provider invocation counts as a call, failed or not.
    Completion complete(const std::vector<ChatTurn>& messages);
    UsageLedger report_usage() const;
    const PriceTable& prices() const { return prices_; }
    Provider& provider() { return *provider_; }

private:
    std::shared_ptr<Provider> provider_;
    PriceTable prices_;
    mutable std::mutex mu_;
    UsageLedger ledger_;
};

}  // namespace evoconfig
