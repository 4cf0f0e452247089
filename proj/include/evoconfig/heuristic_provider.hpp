#pragma once

// Offline stand-in for a chat model. It answers both the main-agent and the
// expert prompts with fixed heuristics that read only what a real model
// would see, so it can drive sessions and record replay transcripts.

#include <string>
#include <vector>

#include "evoconfig/llm.hpp"

namespace evoconfig {

class PolicyProvider : public Provider {
public:
    Completion complete(const std::vector<ChatTurn>& messages) override;
    std::string name() const override { return "policy"; }
};

/// Reply to a main-agent context (system turn is the agent prompt).
std::string policy_agent_reply(const std::vector<ChatTurn>& messages);
/// Reply to one rendered expert prompt.
std::string policy_expert_reply(const std::string& prompt);

/// Distribution that provides an importable module ("yaml" -> "pyyaml").
std::string distribution_for_module(const std::string& module);

}  // namespace evoconfig
