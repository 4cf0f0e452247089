#include <fstream>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>

#include "evoconfig/diagnosis.hpp"
#include "evoconfig/heuristic_provider.hpp"
#include "evoconfig/http_provider.hpp"
#include "evoconfig/transcript.hpp"
#include "support.hpp"

using namespace evoconfig;
using evoconfig::testing::ScriptedProvider;
using evoconfig::testing::TempDir;
using nlohmann::json;

namespace {

std::vector<ChatTurn> convo(const std::string& user) { return {{Role::system, "sys"}, {Role::user, user}}; }

}  // namespace

TEST(Llm, TokenEstimateAndPrices) {
    EXPECT_EQ(estimate_tokens(std::string()), 0);
    EXPECT_EQ(estimate_tokens(std::string("abcd")), 1);
    EXPECT_EQ(estimate_tokens(std::string("abcde")), 2);
    PriceTable p{2.0, 8.0};
    EXPECT_DOUBLE_EQ(p.cost(1'000'000, 500'000), 6.0);
    UsageLedger a{1, 2, 1, 0.5}, b{10, 20, 2, 1.0};
    EXPECT_EQ(a + b, (UsageLedger{11, 22, 3, 1.5}));
    EXPECT_EQ(ledger_from_json(to_json(a + b)), a + b);
}

TEST(Llm, SessionLedgerCountsEveryCall) {
    auto provider = std::make_shared<ScriptedProvider>(std::vector<std::string>{"one"});
    LlmSession s(provider, PriceTable{1.0, 1.0});
    auto c = s.complete(convo("hello there"));
    EXPECT_EQ(c.reply.content, "one");
    EXPECT_THROW(s.complete(convo("again")), ProviderError);
    auto u = s.report_usage();
    EXPECT_EQ(u.calls, 2);
    EXPECT_EQ(u.prompt_tokens, c.usage.prompt_tokens);
    EXPECT_THROW(s.complete({}), std::invalid_argument);
    EXPECT_THROW(s.complete({{Role::user, "no system"}}), std::invalid_argument);
}

TEST(Llm, SessionLedgerIsThreadSafe) {
    std::vector<std::string> replies(400, "ok");
    auto provider = std::make_shared<ScriptedProvider>(replies);
    LlmSession s(provider);
    std::mutex mu;  // the scripted provider itself is not thread-safe
    class Locked : public Provider {
    public:
        Locked(std::shared_ptr<Provider> p, std::mutex& m) : p_(std::move(p)), m_(m) {}
        Completion complete(const std::vector<ChatTurn>& msgs) override {
            std::lock_guard lock(m_);
            return p_->complete(msgs);
        }
        std::string name() const override { return "locked"; }

    private:
        std::shared_ptr<Provider> p_;
        std::mutex& m_;
    };
    LlmSession shared(std::make_shared<Locked>(provider, mu));
    std::vector<std::thread> ts;
    for (int t = 0; t < 8; ++t)
        ts.emplace_back([&] {
            for (int i = 0; i < 50; ++i) shared.complete(convo("x"));
        });
    for (auto& t : ts) t.join();
    EXPECT_EQ(shared.report_usage().calls, 400);
}

TEST(Transcript, RecordThenReplay) {
    auto inner = std::make_shared<ScriptedProvider>(std::vector<std::string>{"first", "second"});
    RecordingProvider rec(inner);
    rec.complete(convo("a"));
    rec.complete(convo("b"));
    TempDir dir("transcript");
    rec.transcript().save(dir.path() / "t.json");

    ReplayProvider replay(Transcript::load(dir.path() / "t.json"));
    EXPECT_EQ(replay.complete(convo("a")).reply.content, "first");
    EXPECT_EQ(replay.remaining(), 1u);
    EXPECT_THROW(replay.complete(convo("changed")), TranscriptMismatch);
    EXPECT_EQ(replay.consumed(), 1u);
    EXPECT_EQ(replay.complete(convo("b")).reply.content, "second");
    EXPECT_THROW(replay.complete(convo("c")), TranscriptExhausted);
}

TEST(Transcript, FingerprintDependsOnRolesContentAndSalt) {
    auto a = convo("x");
    auto b = a;
    b[1].role = Role::assistant;
    EXPECT_NE(fingerprint(a, kDefaultSalt), fingerprint(b, kDefaultSalt));
    EXPECT_NE(fingerprint(a, kDefaultSalt), fingerprint(convo("y"), kDefaultSalt));
    EXPECT_NE(fingerprint(a, kDefaultSalt), fingerprint(a, "other"));
    EXPECT_EQ(fingerprint(a, kDefaultSalt), fingerprint(convo("x"), kDefaultSalt));
}

TEST(Transcript, LoadRejectsBadFiles) {
    TempDir dir("badtranscript");
    EXPECT_THROW(Transcript::load(dir.path() / "missing.json"), std::runtime_error);
    std::ofstream(dir.path() / "bad.json") << "{not json";
    EXPECT_THROW(Transcript::load(dir.path() / "bad.json"), std::runtime_error);
    std::ofstream(dir.path() / "v.json") << R"({"version": 99, "salt": "s", "entries": []})";
    EXPECT_THROW(Transcript::load(dir.path() / "v.json"), std::runtime_error);
}

TEST(Http, RetriesWithBackoffThenSucceeds) {
    int calls = 0;
    std::vector<double> sleeps;
    std::string seen_path, seen_body, seen_auth;
    HttpTransport t = [&](const std::string& base, const std::string& path,
                          const std::map<std::string, std::string>& headers, const std::string& body, double) {
        ++calls;
        seen_path = base + path;
        seen_body = body;
        seen_auth = headers.at("Authorization");
        if (calls == 1) return HttpResponse{0, "", "connection refused"};
        if (calls == 2) return HttpResponse{503, "busy", ""};
        return HttpResponse{200,
                            R"({"choices":[{"message":{"content":"hi"}}],"usage":{"prompt_tokens":7,"completion_tokens":2}})",
                            ""};
    };
    HttpProviderConfig cfg;
    cfg.endpoint = "http://localhost:8080/v1";
    cfg.api_key = "k";
    cfg.max_retries = 2;
    cfg.backoff_s = 0.5;
    HttpProvider p(cfg, t, [&](double s) { sleeps.push_back(s); });
    auto c = p.complete(convo("q"));
    EXPECT_EQ(c.reply.content, "hi");
    EXPECT_EQ(c.usage, (Usage{7, 2}));
    EXPECT_EQ(calls, 3);
    EXPECT_EQ(sleeps, (std::vector<double>{0.5, 1.0}));
    EXPECT_EQ(seen_path, "http://localhost:8080/v1/chat/completions");
    EXPECT_EQ(seen_auth, "Bearer k");
    EXPECT_EQ(json::parse(seen_body)["messages"][1]["content"], "q");
}

TEST(Http, ClientErrorsAreNotRetried) {
    int calls = 0;
    HttpTransport t = [&](auto&&...) {
        ++calls;
        return HttpResponse{401, "bad key", ""};
    };
    HttpProvider p(HttpProviderConfig{}, t, [](double) {});
    EXPECT_THROW(p.complete(convo("q")), ProviderError);
    EXPECT_EQ(calls, 1);

    HttpTransport garbage = [](auto&&...) { return HttpResponse{200, "{}", ""}; };
    HttpProvider g(HttpProviderConfig{}, garbage, [](double) {});
    EXPECT_THROW(g.complete(convo("q")), ProviderError);

    HttpTransport down = [](auto&&...) { return HttpResponse{0, "", "refused"}; };
    HttpProviderConfig cfg;
    cfg.max_retries = 1;
    HttpProvider d(cfg, down, [](double) {});
    EXPECT_THROW(d.complete(convo("q")), ProviderError);
}

TEST(Http, SplitEndpoint) {
    EXPECT_EQ(HttpProvider::split_endpoint("https://api.example.com/v1"),
              (std::pair<std::string, std::string>{"https://api.example.com", "/v1"}));
    EXPECT_EQ(HttpProvider::split_endpoint("http://h:9000"), (std::pair<std::string, std::string>{"http://h:9000", ""}));
    EXPECT_THROW(HttpProvider::split_endpoint("not a url"), std::invalid_argument);
}

TEST(Policy, ModuleToDistribution) {
    EXPECT_EQ(distribution_for_module("yaml"), "pyyaml");
    EXPECT_EQ(distribution_for_module("sklearn"), "scikit-learn");
    EXPECT_EQ(distribution_for_module("my_pkg"), "my-pkg");
}

TEST(Policy, ExpertPicksCompatibleRelease) {
    ExecutionRecord rec;
    rec.command = AtomicCommand("pip install -r requirements.txt");
    rec.exit_code = 1;
    rec.stderr_text =
        "ERROR: Cannot install numpy==1.26.4 and tabkit==2.0.0 because these package versions have conflicting "
        "dependencies.\n\nThe conflict is caused by:\n    The user requested numpy==1.26.4\n    tabkit 2.0.0 depends "
        "on numpy>=2.0\n\nERROR: ResolutionImpossible";
    Evidence ev;
    ev.tool = AtomicCommand("pip index versions tabkit", CommandOrigin::expert_tool);
    ev.record.command = ev.tool;
    ev.record.stdout_text = "tabkit (2.0.0)\nAvailable versions: 2.0.0, 1.5.0\n  2.0.0 requires: numpy>=2.0\n"
                            "  1.5.0 requires: numpy>=1.20\n";
    auto prompt = render_expert_prompt(rec, {ev}, {}, ErrorType::dependency_conflict);
    auto v = parse_expert_reply(policy_expert_reply(prompt));
    EXPECT_EQ(v.verdict, Verdict::failure);
    EXPECT_EQ(v.error_type, ErrorType::dependency_conflict);
    ASSERT_EQ(v.repair_commands.size(), 2u);
    EXPECT_EQ(v.repair_commands[0], "sed -i 's/tabkit==2.0.0/tabkit==1.5.0/' requirements.txt");
    EXPECT_EQ(v.repair_commands[1], "pip install -r requirements.txt");
}
