#include "opforge/llm.hpp"

#include <cstdlib>
#include <filesystem>
#include <thread>

#include "opforge/error.hpp"
#include "opforge/util.hpp"

namespace opforge::llm {

using nlohmann::json;

std::string_view to_string(ReasoningLevel level) {
  switch (level) {
    case ReasoningLevel::kLow: return "low";
    case ReasoningLevel::kMedium: return "medium";
    case ReasoningLevel::kHigh: return "high";
  }
  return "medium";
}

std::optional<ReasoningLevel> parse_reasoning_level(std::string_view name) {
  if (name == "low") return ReasoningLevel::kLow;
  if (name == "medium") return ReasoningLevel::kMedium;
  if (name == "high") return ReasoningLevel::kHigh;
  return std::nullopt;
}

void ModelParams::validate() const {
  if (!(temperature >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "temperature must be >= 0");
  }
  if (!(top_p > 0.0 && top_p <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "top_p must be in (0, 1]");
  }
  if (context_length == 0) {
    throw Error(ErrorCode::kInvalidArgument, "context_length must be positive");
  }
}

json to_json(const ModelParams& p) {
  json j = {{"model_id", p.model_id},
            {"context_length", p.context_length},
            {"temperature", p.temperature},
            {"top_p", p.top_p},
            {"max_output_tokens", p.max_output_tokens}};
  if (p.reasoning_level) j["reasoning_level"] = to_string(*p.reasoning_level);
  return j;
}

ModelParams model_params_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "model params must be an object");
  ModelParams p;
  try {
    p.model_id = j.value("model_id", p.model_id);
    p.context_length = j.value("context_length", p.context_length);
    p.temperature = j.value("temperature", p.temperature);
    p.top_p = j.value("top_p", p.top_p);
    p.max_output_tokens = j.value("max_output_tokens", p.max_output_tokens);
    if (j.contains("reasoning_level") && !j["reasoning_level"].is_null()) {
      const auto name = j["reasoning_level"].get<std::string>();
      p.reasoning_level = parse_reasoning_level(name);
      if (!p.reasoning_level) {
        throw Error(ErrorCode::kParseError, "unknown reasoning_level '" + name + "'");
      }
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("model params: ") + e.what());
  }
  p.validate();
  return p;
}

std::string_view to_string(TurnRole role) {
  switch (role) {
    case TurnRole::kSystem: return "system";
    case TurnRole::kUser: return "user";
    case TurnRole::kAssistant: return "assistant";
  }
  return "user";
}

DialogSession::DialogSession(ModelParams params) : params_(std::move(params)) {
  params_.validate();
}

void DialogSession::push(TurnRole role, std::string text) {
  Turn t;
  t.role = role;
  t.token_estimate = prompt::estimate_tokens(text);
  t.text = std::move(text);
  used_tokens_ += t.token_estimate;
  turns_.push_back(std::move(t));
}

void DialogSession::add_preamble(const prompt::Prompt& preamble) {
  push(TurnRole::kSystem, preamble.text);
}

void DialogSession::append_exchange(const prompt::Prompt& user, std::string response) {
  turns_.reserve(turns_.size() + 2);
  push(TurnRole::kUser, user.text);
  push(TurnRole::kAssistant, std::move(response));
  ++call_count_;
}

bool is_saturated(const DialogSession& session, const prompt::Prompt& next,
                  std::size_t reserved_output) {
  return session.used_tokens() + next.token_estimate + reserved_output >
         session.params().context_length;
}

json to_wire_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& t : request.messages) {
    messages.push_back({{"role", to_string(t.role)}, {"content", t.text}});
  }
  json body = {{"model", request.params.model_id},
               {"messages", std::move(messages)},
               {"temperature", request.params.temperature},
               {"top_p", request.params.top_p},
               {"max_tokens", request.params.max_output_tokens}};
  if (request.params.reasoning_level) {
    body["reasoning_effort"] = to_string(*request.params.reasoning_level);
  }
  return body;
}

std::optional<Endpoint> endpoint_from_env(const std::string& prefix) {
  const char* url = std::getenv((prefix + "_URL").c_str());
  if (!url || !*url) return std::nullopt;
  Endpoint e;
  e.base_url = url;
  if (const char* key = std::getenv((prefix + "_API_KEY").c_str())) e.api_key = key;
  if (const char* path = std::getenv((prefix + "_PATH").c_str()); path && *path) e.path = path;
  return e;
}

// ---- mock -----------------------------------------------------------------

MockLlmScript load_mock_llm_script(std::string_view json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParseError, std::string("mock llm script: ") + e.what());
  }
  if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
    throw Error(ErrorCode::kParseError, "mock llm script needs an \"entries\" array");
  }
  MockLlmScript script;
  try {
    for (const auto& e : doc["entries"]) {
      MockEntry m;
      if (e.contains("tag")) m.tag = e["tag"].get<std::string>();
      if (e.contains("kind")) m.kind = e["kind"].get<std::string>();
      if (e.contains("call")) m.call = e["call"].get<std::size_t>();
      if (e.contains("match")) m.match = e["match"].get<std::string>();
      m.repeat = e.value("repeat", false);
      const std::string error = e.value("error", "");
      if (error == "transport") {
        m.action = MockEntry::Action::kTransportError;
      } else if (error == "rate_limited") {
        m.action = MockEntry::Action::kRateLimited;
      } else if (error == "bad_response") {
        m.action = MockEntry::Action::kBadResponse;
      } else if (error == "panic") {
        m.action = MockEntry::Action::kPanic;
      } else if (!error.empty()) {
        throw Error(ErrorCode::kParseError, "unknown mock error '" + error + "'");
      }
      if (e.contains("file")) {
        m.text = util::read_file(std::filesystem::path(base_dir) / e["file"].get<std::string>());
      } else {
        m.text = e.value("text", "");
      }
      script.entries.push_back(std::move(m));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("mock llm script: ") + e.what());
  }
  return script;
}

MockChatBackend::MockChatBackend(MockLlmScript script)
    : script_(std::move(script)), used_(script_.entries.size(), false) {}

ChatResponse MockChatBackend::chat(const ChatRequest& request) {
  std::lock_guard lock(mu_);
  requests_.push_back(request);
  const std::size_t call = ++per_tag_[request.tag];
  const std::string kind =
      request.summarization ? "summarize"
                            : (request.kind ? std::string(prompt::to_string(*request.kind)) : "");
  const std::string& last = request.messages.empty() ? kind : request.messages.back().text;
  for (std::size_t i = 0; i < script_.entries.size(); ++i) {
    const auto& e = script_.entries[i];
    if (used_[i]) continue;
    if (e.tag && *e.tag != request.tag) continue;
    if (e.kind && *e.kind != kind) continue;
    if (e.call && *e.call != call) continue;
    if (e.match && last.find(*e.match) == std::string::npos) continue;
    if (!e.repeat) used_[i] = true;
    switch (e.action) {
      case MockEntry::Action::kReply: return {e.text};
      case MockEntry::Action::kTransportError:
        throw Error(ErrorCode::kTransportError, "mock transport failure");
      case MockEntry::Action::kRateLimited:
        throw Error(ErrorCode::kRateLimited, "mock rate limit");
      case MockEntry::Action::kBadResponse:
        throw Error(ErrorCode::kBadResponse, "mock malformed response");
      case MockEntry::Action::kPanic:
        throw std::logic_error("mock llm panic for tag '" + request.tag + "'");
    }
  }
  throw Error(ErrorCode::kScriptExhausted,
              "mock llm script has no reply for tag '" + request.tag + "' call " +
                  std::to_string(call));
}

std::vector<ChatRequest> MockChatBackend::requests() const {
  std::lock_guard lock(mu_);
  return requests_;
}

std::size_t MockChatBackend::calls(const std::string& tag) const {
  std::lock_guard lock(mu_);
  auto it = per_tag_.find(tag);
  return it == per_tag_.end() ? 0 : it->second;
}

// ---- gateway --------------------------------------------------------------

LlmGateway::LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options)
    : backend_(std::move(backend)),
      options_(std::move(options)),
      jitter_rng_(options_.retry.seed) {
  if (!backend_) throw Error(ErrorCode::kInvalidArgument, "gateway needs a backend");
  if (options_.max_concurrent == 0) options_.max_concurrent = 1;
  if (options_.retry.max_attempts < 1) options_.retry.max_attempts = 1;
  if (!options_.sleeper) {
    options_.sleeper = [](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); };
  }
}

std::size_t LlmGateway::peak_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_;
}

ChatResponse LlmGateway::send(const ChatRequest& request) {
  const auto& retry = options_.retry;
  std::chrono::milliseconds delay{0};
  for (int attempt = 1;; ++attempt) {
    if (delay.count() > 0) options_.sleeper(delay);
    AttemptRecord record{request.tag, attempt, false, "", delay};
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return in_flight_ < options_.max_concurrent; });
      ++in_flight_;
      peak_ = std::max(peak_, in_flight_);
    }
    struct Slot {
      LlmGateway* g;
      ~Slot() {
        {
          std::lock_guard lock(g->mu_);
          --g->in_flight_;
        }
        g->cv_.notify_one();
      }
    };
    try {
      ChatResponse response;
      {
        Slot slot{this};
        response = backend_->chat(request);
      }
      record.ok = true;
      if (options_.on_attempt) options_.on_attempt(record);
      return response;
    } catch (const Error& e) {
      record.error = e.what();
      if (options_.on_attempt) options_.on_attempt(record);
      const bool retryable =
          e.code() == ErrorCode::kTransportError || e.code() == ErrorCode::kRateLimited;
      if (!retryable || attempt >= retry.max_attempts) throw;
      const auto base = retry.backoff.empty()
                            ? std::chrono::milliseconds(0)
                            : retry.backoff[std::min<std::size_t>(attempt - 1,
                                                                  retry.backoff.size() - 1)];
      double factor = 1.0;
      if (retry.jitter > 0) {
        std::lock_guard lock(mu_);
        factor = std::uniform_real_distribution<double>(1.0 - retry.jitter,
                                                        1.0 + retry.jitter)(jitter_rng_);
      }
      delay = std::chrono::milliseconds(
          static_cast<std::int64_t>(static_cast<double>(base.count()) * factor));
    }
  }
}

std::string LlmGateway::complete(DialogSession& session, const prompt::Prompt& prompt,
                                 const std::string& tag) {
  if (is_saturated(session, prompt, options_.reserved_output)) {
    throw Error(ErrorCode::kSaturation,
                "context would exceed " + std::to_string(session.params().context_length) +
                    " tokens");
  }
  ChatRequest request;
  request.params = session.params();
  request.messages = session.turns();
  request.messages.push_back({TurnRole::kUser, prompt.text, prompt.token_estimate});
  request.tag = tag;
  request.kind = prompt.kind;
  ChatResponse response = send(request);
  session.append_exchange(prompt, response.text);
  return std::move(response.text);
}

std::string LlmGateway::summarize(std::string_view log, const ModelParams& params,
                                  const std::string& tag) {
  ChatRequest request;
  request.params = params;
  const std::string text = prompt::build_summarization_prompt(log);
  request.messages.push_back({TurnRole::kUser, text, prompt::estimate_tokens(text)});
  request.tag = tag;
  request.summarization = true;
  return send(request).text;
}

std::string summarize_or_truncate(LlmGateway& gateway, std::string_view log,
                                  const ModelParams& params, const std::string& tag,
                                  bool* used_fallback) {
  try {
    std::string summary = gateway.summarize(log, params, tag);
    if (used_fallback) *used_fallback = false;
    return summary;
  } catch (const Error&) {
    if (used_fallback) *used_fallback = true;
    return util::tail(log, kSummaryFallbackChars);
  }
}

}  // namespace opforge::llm
