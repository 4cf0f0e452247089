#pragma once

// Recorded conversations for deterministic replay. The file schema is
// described in docs/formats.md.

#include <filesystem>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "evoconfig/llm.hpp"

namespace evoconfig {

inline constexpr int kTranscriptVersion = 1;
inline constexpr const char* kDefaultSalt = "evoconfig-v1";

struct TranscriptEntry {
    std::string fingerprint;
    std::vector<std::string> roles;
    std::vector<std::string> turn_digests;
    std::string reply;
    Usage usage;
};

struct Transcript {
    std::string salt = kDefaultSalt;
    std::vector<TranscriptEntry> entries;

    nlohmann::json to_json() const;
    static Transcript from_json(const nlohmann::json& j);
    /// Throws std::runtime_error when missing or malformed.
    static Transcript load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;
};

/// Hash of the role sequence plus a salted digest of every turn's content.
std::string fingerprint(const std::vector<ChatTurn>& messages, const std::string& salt);
std::string turn_digest(const ChatTurn& turn, const std::string& salt);

/// Serves canned replies strictly in order.
class ReplayProvider : public Provider {
public:
    explicit ReplayProvider(Transcript transcript);
    Completion complete(const std::vector<ChatTurn>& messages) override;
    std::string name() const override { return "replay"; }
    std::size_t consumed() const;
    std::size_t remaining() const;

private:
    Transcript transcript_;
    mutable std::mutex mu_;
    std::size_t next_ = 0;
};

/// Forwards to another provider and keeps every exchange as a transcript.
class RecordingProvider : public Provider {
public:
    RecordingProvider(std::shared_ptr<Provider> inner, std::string salt = kDefaultSalt);
    Completion complete(const std::vector<ChatTurn>& messages) override;
    std::string name() const override { return "recording(" + inner_->name() + ")"; }
    Transcript transcript() const;

private:
    std::shared_ptr<Provider> inner_;
    mutable std::mutex mu_;
    Transcript transcript_;
};

}  // namespace evoconfig
