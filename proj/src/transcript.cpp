#include "evoconfig/transcript.hpp"

#include <fstream>
#include <stdexcept>

#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

std::string turn_digest(const ChatTurn& turn, const std::string& salt) {
    std::uint64_t h = text::fnv1a64(salt);
    h = text::fnv1a64(to_string(turn.role), h);
    h = text::fnv1a64("\x1f", h);
    h = text::fnv1a64(turn.content, h);
    return text::hex64(h);
}

std::string fingerprint(const std::vector<ChatTurn>& messages, const std::string& salt) {
    std::string roles;
    for (const auto& m : messages) roles += to_string(m.role) + ",";
    std::uint64_t content = text::fnv1a64(salt);
    for (const auto& m : messages) {
        content = text::fnv1a64(m.content, content);
        content = text::fnv1a64("\x1e", content);
    }
    return text::hex64(text::fnv1a64(roles)) + "-" + text::hex64(content);
}

json Transcript::to_json() const {
    json entries_json = json::array();
    for (const auto& e : entries) {
        entries_json.push_back({{"fingerprint", e.fingerprint},
                                {"roles", e.roles},
                                {"turn_digests", e.turn_digests},
                                {"reply", e.reply},
                                {"usage",
                                 {{"prompt_tokens", e.usage.prompt_tokens},
                                  {"completion_tokens", e.usage.completion_tokens}}}});
    }
    return {{"version", kTranscriptVersion}, {"salt", salt}, {"entries", entries_json}};
}

Transcript Transcript::from_json(const json& j) {
    if (!j.is_object()) throw std::runtime_error("transcript must be an object");
    int version = j.value("version", 0);
    if (version != kTranscriptVersion)
        throw std::runtime_error("unsupported transcript version " + std::to_string(version));
    Transcript t;
    t.salt = j.value("salt", std::string(kDefaultSalt));
    for (const auto& e : j.at("entries")) {
        TranscriptEntry entry;
        entry.fingerprint = e.at("fingerprint").get<std::string>();
        entry.roles = e.value("roles", std::vector<std::string>{});
        entry.turn_digests = e.value("turn_digests", std::vector<std::string>{});
        entry.reply = e.at("reply").get<std::string>();
        const auto& u = e.at("usage");
        entry.usage.prompt_tokens = u.value("prompt_tokens", 0LL);
        entry.usage.completion_tokens = u.value("completion_tokens", 0LL);
        t.entries.push_back(std::move(entry));
    }
    return t;
}

Transcript Transcript::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open transcript: " + path.string());
    try {
        return from_json(json::parse(in));
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed transcript " + path.string() + ": " + e.what());
    }
}

void Transcript::save(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write transcript: " + path.string());
    out << to_json().dump(1) << "\n";
}

ReplayProvider::ReplayProvider(Transcript transcript) : transcript_(std::move(transcript)) {}

Completion ReplayProvider::complete(const std::vector<ChatTurn>& messages) {
    std::lock_guard lock(mu_);
    const std::size_t index = next_;
    if (index >= transcript_.entries.size())
        throw TranscriptExhausted("transcript exhausted: call " + std::to_string(index) + " has no recorded reply (" +
                                  std::to_string(transcript_.entries.size()) + " entries)");
    const auto& entry = transcript_.entries[index];
    const std::string fp = fingerprint(messages, transcript_.salt);
    if (fp != entry.fingerprint) {
        std::string where = "call " + std::to_string(index);
        std::size_t turn = 0;
        for (; turn < messages.size(); ++turn) {
            if (turn >= entry.turn_digests.size() || turn_digest(messages[turn], transcript_.salt) != entry.turn_digests[turn])
                break;
        }
        where += ", turn " + std::to_string(turn);
        if (turn < messages.size()) where += " (" + to_string(messages[turn].role) + ")";
        throw TranscriptMismatch("transcript mismatch at " + where + ": expected fingerprint " + entry.fingerprint +
                                 ", got " + fp);
    }
    ++next_;
    return Completion{ChatTurn{Role::assistant, entry.reply}, entry.usage};
}

std::size_t ReplayProvider::consumed() const {
    std::lock_guard lock(mu_);
    return next_;
}

std::size_t ReplayProvider::remaining() const {
    std::lock_guard lock(mu_);
    return transcript_.entries.size() - next_;
}

RecordingProvider::RecordingProvider(std::shared_ptr<Provider> inner, std::string salt) : inner_(std::move(inner)) {
    transcript_.salt = std::move(salt);
}

Completion RecordingProvider::complete(const std::vector<ChatTurn>& messages) {
    Completion c = inner_->complete(messages);
    TranscriptEntry entry;
    entry.fingerprint = fingerprint(messages, transcript_.salt);
    for (const auto& m : messages) {
        entry.roles.push_back(to_string(m.role));
        entry.turn_digests.push_back(turn_digest(m, transcript_.salt));
    }
    entry.reply = c.reply.content;
    entry.usage = c.usage;
    std::lock_guard lock(mu_);
    transcript_.entries.push_back(std::move(entry));
    return c;
}

Transcript RecordingProvider::transcript() const {
    std::lock_guard lock(mu_);
    return transcript_;
}

}  // namespace evoconfig
