#include "evoconfig/llm.hpp"

namespace evoconfig {

using nlohmann::json;

std::string to_string(Role r) {
    switch (r) {
        case Role::system: return "system";
        case Role::user: return "user";
        case Role::assistant: return "assistant";
    }
    return "user";
}

Role role_from_string(const std::string& s) {
    if (s == "system") return Role::system;
    if (s == "user") return Role::user;
    if (s == "assistant") return Role::assistant;
    throw std::invalid_argument("unknown chat role: " + s);
}

long long estimate_tokens(const std::string& s) { return static_cast<long long>((s.size() + 3) / 4); }

long long estimate_tokens(const std::vector<ChatTurn>& turns) {
    long long n = 0;
    for (const auto& t : turns) n += estimate_tokens(t.content);
    return n;
}

double PriceTable::cost(long long prompt_tokens, long long completion_tokens) const {
    return (static_cast<double>(prompt_tokens) * prompt_per_million +
            static_cast<double>(completion_tokens) * completion_per_million) /
           1e6;
}

json to_json(const UsageLedger& l) {
    return {{"prompt_tokens", l.prompt_tokens},
            {"completion_tokens", l.completion_tokens},
            {"total_tokens", l.total_tokens()},
            {"calls", l.calls},
            {"cost", l.cost}};
}

UsageLedger ledger_from_json(const json& j) {
    UsageLedger l;
    l.prompt_tokens = j.value("prompt_tokens", 0LL);
    l.completion_tokens = j.value("completion_tokens", 0LL);
    l.calls = j.value("calls", 0LL);
    l.cost = j.value("cost", 0.0);
    return l;
}

UsageLedger operator+(const UsageLedger& a, const UsageLedger& b) {
    return UsageLedger{a.prompt_tokens + b.prompt_tokens, a.completion_tokens + b.completion_tokens,
                       a.calls + b.calls, a.cost + b.cost};
}

LlmSession::LlmSession(std::shared_ptr<Provider> provider, PriceTable prices)
    : provider_(std::move(provider)), prices_(prices) {
    if (!provider_) throw std::invalid_argument("LlmSession needs a provider");
}

Completion LlmSession::complete(const std::vector<ChatTurn>& messages) {
    if (messages.empty()) throw std::invalid_argument("complete: empty message list");
    if (messages.front().role != Role::system) throw std::invalid_argument("complete: first turn must be system");
    {
        std::lock_guard lock(mu_);
        ledger_.calls += 1;
    }
    Completion c = provider_->complete(messages);
    if (c.reply.content.empty()) throw ProviderError(provider_->name() + " returned an empty reply");
    std::lock_guard lock(mu_);
    ledger_.prompt_tokens += c.usage.prompt_tokens;
    ledger_.completion_tokens += c.usage.completion_tokens;
    // recomputed from totals so the ledger cost never drifts from the table
    ledger_.cost = prices_.cost(ledger_.prompt_tokens, ledger_.completion_tokens);
    return c;
}

UsageLedger LlmSession::report_usage() const {
    std::lock_guard lock(mu_);
    return ledger_;
}

}  // namespace evoconfig
