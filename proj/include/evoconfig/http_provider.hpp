#pragma once

// Live provider for OpenAI-style /chat/completions endpoints.

#include <chrono>
#include <functional>
#include <map>
#include <string>

#include "evoconfig/llm.hpp"

namespace evoconfig {

struct HttpProviderConfig {
    std::string endpoint = "https://api.openai.com/v1";  // scheme://host[:port][/prefix]
    std::string model = "gpt-4o";
    std::string api_key;
    double timeout_s = 120.0;
    int max_retries = 2;
    double backoff_s = 1.0;  // doubled after each failed attempt
    double temperature = 0.0;
};

struct HttpResponse {
    int status = 0;  // 0 means the transport failed
    std::string body;
    std::string error;
};

using HttpTransport = std::function<HttpResponse(const std::string& base, const std::string& path,
                                                 const std::map<std::string, std::string>& headers,
                                                 const std::string& body, double timeout_s)>;
using SleepFn = std::function<void(double seconds)>;

/// Transport over cpp-httplib.
HttpTransport default_http_transport();

class HttpProvider : public Provider {
public:
    explicit HttpProvider(HttpProviderConfig config, HttpTransport transport = default_http_transport(),
                          SleepFn sleep = {});
    Completion complete(const std::vector<ChatTurn>& messages) override;
    std::string name() const override { return "http:" + config_.model; }

    /// Splits an endpoint into (scheme://host[:port], path prefix).
    static std::pair<std::string, std::string> split_endpoint(const std::string& endpoint);

private:
    HttpProviderConfig config_;
    HttpTransport transport_;
    SleepFn sleep_;
};

}  // namespace evoconfig
