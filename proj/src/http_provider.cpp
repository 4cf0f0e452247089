#include "evoconfig/http_provider.hpp"

#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "evoconfig/text.hpp"

namespace evoconfig {

using nlohmann::json;

HttpTransport default_http_transport() {
    return [](const std::string& base, const std::string& path, const std::map<std::string, std::string>& headers,
              const std::string& body, double timeout_s) {
        httplib::Client client(base);
        auto secs = static_cast<time_t>(timeout_s);
        client.set_connection_timeout(std::min<time_t>(secs, 30), 0);
        client.set_read_timeout(secs, 0);
        client.set_write_timeout(secs, 0);
        httplib::Headers h;
        for (const auto& [k, v] : headers) h.emplace(k, v);
        auto res = client.Post(path, h, body, "application/json");
        HttpResponse out;
        if (!res) {
            out.error = httplib::to_string(res.error());
            return out;
        }
        out.status = res->status;
        out.body = res->body;
        return out;
    };
}

HttpProvider::HttpProvider(HttpProviderConfig config, HttpTransport transport, SleepFn sleep)
    : config_(std::move(config)), transport_(std::move(transport)), sleep_(std::move(sleep)) {
    if (!sleep_) sleep_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
}

std::pair<std::string, std::string> HttpProvider::split_endpoint(const std::string& endpoint) {
    auto scheme = endpoint.find("://");
    if (scheme == std::string::npos || (endpoint.compare(0, scheme, "http") != 0 && endpoint.compare(0, scheme, "https") != 0))
        throw std::invalid_argument("endpoint must start with http:// or https://: " + endpoint);
    std::size_t host_start = scheme + 3;
    if (host_start >= endpoint.size() || endpoint[host_start] == '/')
        throw std::invalid_argument("endpoint has no host: " + endpoint);
    auto slash = endpoint.find('/', host_start);
    if (slash == std::string::npos) return {endpoint, ""};
    std::string prefix = endpoint.substr(slash);
    while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();
    return {endpoint.substr(0, slash), prefix};
}

Completion HttpProvider::complete(const std::vector<ChatTurn>& messages) {
    json msgs = json::array();
    for (const auto& m : messages) msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
    const std::string body =
        json{{"model", config_.model}, {"messages", msgs}, {"temperature", config_.temperature}}.dump();
    std::map<std::string, std::string> headers;
    if (!config_.api_key.empty()) headers["Authorization"] = "Bearer " + config_.api_key;
    const auto [base, prefix] = split_endpoint(config_.endpoint);
    const std::string path = prefix + "/chat/completions";

    std::string last_error;
    double backoff = config_.backoff_s;
    for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
        if (attempt > 0) {
            sleep_(backoff);
            backoff *= 2;
        }
        HttpResponse res = transport_(base, path, headers, body, config_.timeout_s);
        if (res.status == 0) {
            last_error = "transport error: " + res.error;
            continue;
        }
        if (res.status == 429 || res.status >= 500) {
            last_error = "HTTP " + std::to_string(res.status) + ": " + text::clip(res.body, 200);
            continue;
        }
        if (res.status != 200)
            throw ProviderError("HTTP " + std::to_string(res.status) + ": " + text::clip(res.body, 400));
        try {
            json j = json::parse(res.body);
            Completion c;
            c.reply = ChatTurn{Role::assistant, j.at("choices").at(0).at("message").at("content").get<std::string>()};
            if (j.contains("usage")) {
                c.usage.prompt_tokens = j["usage"].value("prompt_tokens", 0LL);
                c.usage.completion_tokens = j["usage"].value("completion_tokens", 0LL);
            } else {
                c.usage.prompt_tokens = estimate_tokens(messages);
                c.usage.completion_tokens = estimate_tokens(c.reply.content);
            }
            return c;
        } catch (const json::exception& e) {
            throw ProviderError(std::string("malformed completion response: ") + e.what());
        }
    }
    throw ProviderError("giving up after " + std::to_string(config_.max_retries + 1) + " attempts: " + last_error);
}

}  // namespace evoconfig
