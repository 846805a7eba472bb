#include <gtest/gtest.h>
#include <httplib.h>

#include <atomic>
#include <cstdlib>
#include <thread>

#include <unistd.h>

#include "opforge/error.hpp"
#include "opforge/llm.hpp"
#include "test_support.hpp"

namespace llm = opforge::llm;
namespace pr = opforge::prompt;
using namespace std::chrono_literals;
using opforge::Error;
using opforge::ErrorCode;
using opforge::testkit::Gen;

namespace {

pr::Prompt user_prompt(std::string text, pr::PromptKind kind = pr::PromptKind::kInit) {
  pr::Prompt p;
  p.kind = kind;
  p.token_estimate = pr::estimate_tokens(text);
  p.text = std::move(text);
  return p;
}

llm::MockLlmScript replies(std::vector<std::string> texts) {
  llm::MockLlmScript s;
  for (auto& t : texts) {
    llm::MockEntry e;
    e.text = std::move(t);
    s.entries.push_back(std::move(e));
  }
  return s;
}

llm::MockEntry failure(llm::MockEntry::Action action) {
  llm::MockEntry e;
  e.action = action;
  return e;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

struct Recorder {
  std::vector<llm::AttemptRecord> attempts;
  std::vector<std::chrono::milliseconds> sleeps;

  llm::GatewayOptions options() {
    llm::GatewayOptions o;
    o.sleeper = [this](std::chrono::milliseconds d) { sleeps.push_back(d); };
    o.on_attempt = [this](const llm::AttemptRecord& r) { attempts.push_back(r); };
    return o;
  }
};

}  // namespace

TEST(ModelParams, DefaultsAndValidation) {
  llm::ModelParams p;
  EXPECT_EQ(p.context_length, 131072u);
  EXPECT_DOUBLE_EQ(p.temperature, 1.0);
  EXPECT_NO_THROW(p.validate());
  auto bad = p;
  bad.top_p = 0.0;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.top_p = 1.01;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.temperature = -0.1;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.context_length = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad = p;
  bad.top_p = 1.0;
  EXPECT_NO_THROW(bad.validate());
}

TEST(ModelParams, JsonRoundTrip) {
  llm::ModelParams p;
  p.model_id = "gen-model";
  p.top_p = 1.0;
  p.reasoning_level = llm::ReasoningLevel::kHigh;
  EXPECT_EQ(llm::model_params_from_json(llm::to_json(p)), p);
  EXPECT_THROW(llm::model_params_from_json({{"reasoning_level", "extreme"}}), Error);
  EXPECT_THROW(llm::model_params_from_json({{"top_p", 2.0}}), Error);
}

TEST(DialogSession, CountsCallsAndTokens) {
  Gen gen(3);
  llm::DialogSession s;
  s.add_preamble(user_prompt("system words"));
  for (int i = 0; i < 50; ++i) {
    s.append_exchange(user_prompt(gen.text(300)), gen.text(300));
  }
  std::size_t assistant = 0;
  std::size_t sum = 0;
  for (const auto& t : s.turns()) {
    assistant += t.role == llm::TurnRole::kAssistant;
    sum += t.token_estimate;
  }
  EXPECT_EQ(s.call_count(), assistant);
  EXPECT_EQ(s.call_count(), 50u);
  EXPECT_EQ(s.used_tokens(), sum);
}

TEST(Saturation, EmptySessionSmallPromptIsNotSaturated) {
  llm::DialogSession s;
  EXPECT_FALSE(llm::is_saturated(s, user_prompt("hello")));
}

TEST(Saturation, NinetyNinePercentIsSaturated) {
  llm::DialogSession s;
  s.append_exchange(user_prompt(std::string(4 * 129761, 'x')), "");
  EXPECT_TRUE(llm::is_saturated(s, user_prompt("next")));
}

TEST(Saturation, ExactBoundary) {
  llm::ModelParams params;
  params.context_length = 10000;
  llm::DialogSession s(params);
  // used + next + reserved == context: not saturated; one more token is.
  s.append_exchange(user_prompt(std::string(4 * 1000, 'a')), std::string(4 * 500, 'b'));
  ASSERT_EQ(s.used_tokens(), 1500u);
  const std::size_t reserved = 8192;
  const auto at = user_prompt(std::string(4 * (10000 - 1500 - reserved), 'c'));
  EXPECT_FALSE(llm::is_saturated(s, at));
  const auto over = user_prompt(std::string(4 * (10000 - 1500 - reserved) + 1, 'c'));
  EXPECT_TRUE(llm::is_saturated(s, over));
}

TEST(Saturation, MonotoneUnderAppendedTurns) {
  Gen gen(17);
  for (int trial = 0; trial < 200; ++trial) {
    llm::ModelParams params;
    params.context_length = static_cast<std::size_t>(gen.range(9000, 12000));
    llm::DialogSession s(params);
    const auto probe = user_prompt(gen.text(400));
    bool was = llm::is_saturated(s, probe);
    for (int i = 0; i < 20; ++i) {
      s.append_exchange(user_prompt(gen.text(800)), gen.text(800));
      const bool now = llm::is_saturated(s, probe);
      EXPECT_FALSE(was && !now);
      was = now;
    }
  }
}

TEST(Gateway, ScriptedReply) {
  auto backend = std::make_shared<llm::MockChatBackend>(replies({"resp1"}));
  llm::LlmGateway gw(backend);
  llm::DialogSession s;
  EXPECT_EQ(gw.complete(s, user_prompt("anything")), "resp1");
  EXPECT_EQ(s.call_count(), 1u);
  ASSERT_EQ(s.turns().size(), 2u);
  EXPECT_EQ(s.turns()[1].text, "resp1");
}

TEST(Gateway, RequestCarriesHistoryAndParams) {
  auto backend = std::make_shared<llm::MockChatBackend>(replies({"a", "b"}));
  llm::LlmGateway gw(backend);
  llm::ModelParams params;
  params.model_id = "m";
  llm::DialogSession s(params);
  s.add_preamble(user_prompt("pre"));
  gw.complete(s, user_prompt("one"), "exp");
  gw.complete(s, user_prompt("two", pr::PromptKind::kLintFeedback), "exp");
  const auto reqs = backend->requests();
  ASSERT_EQ(reqs.size(), 2u);
  ASSERT_EQ(reqs[1].messages.size(), 4u);
  EXPECT_EQ(reqs[1].messages[0].role, llm::TurnRole::kSystem);
  EXPECT_EQ(reqs[1].messages[3].text, "two");
  EXPECT_EQ(reqs[1].kind, pr::PromptKind::kLintFeedback);
  const auto wire = llm::to_wire_json(reqs[1]);
  EXPECT_EQ(wire["model"], "m");
  EXPECT_EQ(wire["messages"].size(), 4u);
  EXPECT_EQ(wire["messages"][2]["role"], "assistant");
  EXPECT_FALSE(wire.contains("reasoning_effort"));
}

TEST(Gateway, SaturatedSessionIsRejectedUntouched) {
  auto backend = std::make_shared<llm::MockChatBackend>(replies({"never"}));
  llm::LlmGateway gw(backend);
  llm::ModelParams params;
  params.context_length = 8200;
  llm::DialogSession s(params);
  EXPECT_EQ(code_of([&] { gw.complete(s, user_prompt(std::string(64, 'x'))); }),
            ErrorCode::kSaturation);
  EXPECT_TRUE(s.turns().empty());
  EXPECT_TRUE(backend->requests().empty());
}

TEST(Gateway, TransportFailsTwiceThenSucceeds) {
  llm::MockLlmScript script;
  script.entries = {failure(llm::MockEntry::Action::kTransportError),
                    failure(llm::MockEntry::Action::kTransportError)};
  script.entries.push_back(replies({"ok"}).entries[0]);
  Recorder rec;
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(script), rec.options());
  llm::DialogSession s;
  EXPECT_EQ(gw.complete(s, user_prompt("p")), "ok");
  ASSERT_EQ(rec.attempts.size(), 3u);
  EXPECT_FALSE(rec.attempts[0].ok);
  EXPECT_FALSE(rec.attempts[1].ok);
  EXPECT_TRUE(rec.attempts[2].ok);
  ASSERT_EQ(rec.sleeps.size(), 2u);
  EXPECT_GE(rec.sleeps[0], 750ms);
  EXPECT_LE(rec.sleeps[0], 1250ms);
  EXPECT_GE(rec.sleeps[1], 3000ms);
  EXPECT_LE(rec.sleeps[1], 5000ms);
  EXPECT_EQ(s.call_count(), 1u);
}

TEST(Gateway, BackoffScheduleWithoutJitter) {
  llm::MockLlmScript script;
  for (int i = 0; i < 4; ++i) script.entries.push_back(failure(llm::MockEntry::Action::kRateLimited));
  script.entries.push_back(replies({"ok"}).entries[0]);
  Recorder rec;
  auto options = rec.options();
  options.retry.max_attempts = 5;
  options.retry.jitter = 0;
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(script), options);
  llm::DialogSession s;
  EXPECT_EQ(gw.complete(s, user_prompt("p")), "ok");
  EXPECT_EQ(rec.sleeps, (std::vector<std::chrono::milliseconds>{1s, 4s, 16s, 16s}));
}

TEST(Gateway, ExhaustedRetriesLeaveSessionUntouched) {
  llm::MockLlmScript script;
  llm::MockEntry e = failure(llm::MockEntry::Action::kTransportError);
  e.repeat = true;
  script.entries = {e};
  Recorder rec;
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(script), rec.options());
  llm::DialogSession s;
  s.append_exchange(user_prompt("earlier"), "reply");
  const auto before = s.turns();
  EXPECT_EQ(code_of([&] { gw.complete(s, user_prompt("p")); }), ErrorCode::kTransportError);
  EXPECT_EQ(rec.attempts.size(), 3u);
  EXPECT_EQ(s.turns(), before);
  EXPECT_EQ(s.call_count(), 1u);
}

TEST(Gateway, BadResponseIsNotRetried) {
  llm::MockLlmScript script;
  script.entries = {failure(llm::MockEntry::Action::kBadResponse)};
  Recorder rec;
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(script), rec.options());
  llm::DialogSession s;
  EXPECT_EQ(code_of([&] { gw.complete(s, user_prompt("p")); }), ErrorCode::kBadResponse);
  EXPECT_EQ(rec.attempts.size(), 1u);
  EXPECT_TRUE(rec.sleeps.empty());
}

TEST(Gateway, ExhaustedScriptIsDeterministicError) {
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(replies({"one"})));
  llm::DialogSession s;
  gw.complete(s, user_prompt("p"));
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(code_of([&] { gw.complete(s, user_prompt("p")); }), ErrorCode::kScriptExhausted);
  }
  EXPECT_EQ(s.call_count(), 1u);
}

TEST(Gateway, LimiterBoundsConcurrentRequests) {
  class SlowBackend : public llm::ChatBackend {
   public:
    std::atomic<int> now{0};
    std::atomic<int> peak{0};
    llm::ChatResponse chat(const llm::ChatRequest&) override {
      const int n = ++now;
      int p = peak.load();
      while (n > p && !peak.compare_exchange_weak(p, n)) {
      }
      std::this_thread::sleep_for(2ms);
      --now;
      return {"r"};
    }
  };
  auto backend = std::make_shared<SlowBackend>();
  llm::GatewayOptions options;
  options.max_concurrent = 3;
  llm::LlmGateway gw(backend, options);
  std::vector<std::thread> threads;
  for (int t = 0; t < 12; ++t) {
    threads.emplace_back([&] {
      llm::DialogSession s;
      for (int i = 0; i < 5; ++i) gw.complete(s, user_prompt("p"));
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(backend->peak.load(), 3);
  EXPECT_LE(gw.peak_in_flight(), 3u);
  EXPECT_GE(gw.peak_in_flight(), 1u);
}

TEST(Gateway, DefaultLimitIs32) { EXPECT_EQ(llm::GatewayOptions{}.max_concurrent, 32u); }

TEST(Summarize, ReturnsScriptedSummary) {
  llm::MockLlmScript script = replies({"the summary"});
  script.entries[0].kind = "summarize";
  auto backend = std::make_shared<llm::MockChatBackend>(script);
  llm::LlmGateway gw(backend);
  const std::string log(12000, 'e');
  bool fallback = true;
  EXPECT_EQ(llm::summarize_or_truncate(gw, log, {}, "exp", &fallback), "the summary");
  EXPECT_FALSE(fallback);
  const auto reqs = backend->requests();
  ASSERT_EQ(reqs.size(), 1u);
  EXPECT_TRUE(reqs[0].summarization);
  EXPECT_NE(reqs[0].messages[0].text.find(log), std::string::npos);
  EXPECT_NE(reqs[0].messages[0].text.find("EXACT error message"), std::string::npos);
}

TEST(Summarize, FailureFallsBackToLogTail) {
  llm::MockLlmScript script;
  auto e = failure(llm::MockEntry::Action::kTransportError);
  e.repeat = true;
  script.entries = {e};
  Recorder rec;
  llm::LlmGateway gw(std::make_shared<llm::MockChatBackend>(script), rec.options());
  std::string log(6000, 'a');
  log += std::string(4000, 'z');
  bool fallback = false;
  const auto out = llm::summarize_or_truncate(gw, log, {}, "exp", &fallback);
  EXPECT_TRUE(fallback);
  EXPECT_EQ(out, std::string(4000, 'z'));
}

TEST(MockScript, FiltersByTagKindCallAndMatch) {
  const auto script = llm::load_mock_llm_script(R"({"entries": [
    {"tag": "exp", "call": 2, "text": "exp-second"},
    {"kind": "lint_feedback", "match": "log1p", "text": "fixed"},
    {"tag": "exp", "repeat": true, "text": "exp-any"},
    {"text": "fallback"}
  ]})");
  llm::MockChatBackend backend(script);
  auto req = [](std::string tag, pr::PromptKind kind, std::string text) {
    llm::ChatRequest r;
    r.tag = std::move(tag);
    r.kind = kind;
    r.messages.push_back({llm::TurnRole::kUser, std::move(text), 0});
    return r;
  };
  EXPECT_EQ(backend.chat(req("exp", pr::PromptKind::kInit, "x")).text, "exp-any");
  EXPECT_EQ(backend.chat(req("exp", pr::PromptKind::kInit, "x")).text, "exp-second");
  EXPECT_EQ(backend.chat(req("exp", pr::PromptKind::kInit, "x")).text, "exp-any");
  EXPECT_EQ(backend.chat(req("abs", pr::PromptKind::kLintFeedback, "tl.log1p bad")).text, "fixed");
  EXPECT_EQ(backend.chat(req("abs", pr::PromptKind::kLintFeedback, "tl.log1p bad")).text,
            "fallback");
  EXPECT_THROW(backend.chat(req("abs", pr::PromptKind::kInit, "x")), Error);
  EXPECT_EQ(backend.calls("exp"), 3u);
}

TEST(MockScript, FileEntriesAndErrors) {
  const auto script = llm::load_mock_llm_script(
      R"({"entries": [{"file": "responses/no_code.md"}, {"error": "panic"}]})",
      OPFORGE_FIXTURE_DIR);
  ASSERT_EQ(script.entries.size(), 2u);
  EXPECT_NE(script.entries[0].text.find("tl.exp"), std::string::npos);
  llm::MockChatBackend backend(script);
  backend.chat({});
  EXPECT_THROW(backend.chat({}), std::logic_error);
  EXPECT_THROW(llm::load_mock_llm_script(R"({"entries": [{"error": "nope"}]})"), Error);
  EXPECT_THROW(llm::load_mock_llm_script(R"([])"), Error);
}

TEST(Endpoint, ReadFromEnvironment) {
  ::unsetenv("OPFORGE_TEST_EP_URL");
  EXPECT_FALSE(llm::endpoint_from_env("OPFORGE_TEST_EP").has_value());
  ::setenv("OPFORGE_TEST_EP_URL", "http://127.0.0.1:9", 1);
  ::setenv("OPFORGE_TEST_EP_API_KEY", "sekret", 1);
  const auto ep = llm::endpoint_from_env("OPFORGE_TEST_EP");
  ASSERT_TRUE(ep.has_value());
  EXPECT_EQ(ep->base_url, "http://127.0.0.1:9");
  EXPECT_EQ(ep->api_key, "sekret");
  EXPECT_EQ(ep->path, "/v1/chat/completions");
  ::unsetenv("OPFORGE_TEST_EP_URL");
  ::unsetenv("OPFORGE_TEST_EP_API_KEY");
}

class HttpBackendTest : public ::testing::Test {
 protected:
  void SetUp() override {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      last_body_ = req.body;
      last_auth_ = req.get_header_value("Authorization");
      res.status = status_;
      res.set_content(reply_, "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  void TearDown() override {
    server_.stop();
    thread_.join();
  }
  llm::HttpChatBackend backend(std::string key = "k-123") {
    llm::Endpoint ep;
    ep.base_url = "http://127.0.0.1:" + std::to_string(port_);
    ep.api_key = std::move(key);
    ep.timeout = 5s;
    return llm::HttpChatBackend(ep);
  }
  llm::ChatRequest request() {
    llm::ChatRequest r;
    r.params.model_id = "gen";
    r.params.reasoning_level = llm::ReasoningLevel::kLow;
    r.messages.push_back({llm::TurnRole::kUser, "write a kernel", 4});
    return r;
  }

  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  int status_ = 200;
  std::string reply_ = R"({"choices":[{"message":{"role":"assistant","content":"hi"}}]})";
  std::string last_body_;
  std::string last_auth_;
};

TEST_F(HttpBackendTest, PostsChatCompletion) {
  auto b = backend();
  EXPECT_EQ(b.chat(request()).text, "hi");
  const auto body = nlohmann::json::parse(last_body_);
  EXPECT_EQ(body["model"], "gen");
  EXPECT_EQ(body["messages"][0]["content"], "write a kernel");
  EXPECT_EQ(body["reasoning_effort"], "low");
  EXPECT_EQ(last_auth_, "Bearer k-123");
  EXPECT_EQ(last_body_.find("k-123"), std::string::npos);
}

TEST_F(HttpBackendTest, StatusCodesMapToErrorKinds) {
  auto b = backend();
  status_ = 429;
  EXPECT_EQ(code_of([&] { b.chat(request()); }), ErrorCode::kRateLimited);
  status_ = 503;
  EXPECT_EQ(code_of([&] { b.chat(request()); }), ErrorCode::kTransportError);
  status_ = 400;
  EXPECT_EQ(code_of([&] { b.chat(request()); }), ErrorCode::kBadResponse);
  status_ = 200;
  reply_ = "not json";
  EXPECT_EQ(code_of([&] { b.chat(request()); }), ErrorCode::kBadResponse);
  reply_ = R"({"choices":[]})";
  EXPECT_EQ(code_of([&] { b.chat(request()); }), ErrorCode::kBadResponse);
}

TEST(HttpBackend, ConnectionRefusedIsTransportError) {
  const int port = [] {
    auto [fd, bound] = opforge::protocol::listen_tcp(0);
    ::close(fd);
    return bound;
  }();
  llm::Endpoint ep;
  ep.base_url = "http://127.0.0.1:" + std::to_string(port);
  llm::HttpChatBackend b(ep);
  EXPECT_EQ(code_of([&] { b.chat({}); }), ErrorCode::kTransportError);
}
