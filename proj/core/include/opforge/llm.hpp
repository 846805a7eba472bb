#pragma once

#include <chrono>
#include <condition_variable>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "opforge/prompt.hpp"

namespace opforge::llm {

enum class ReasoningLevel { kLow, kMedium, kHigh };

std::string_view to_string(ReasoningLevel level);
std::optional<ReasoningLevel> parse_reasoning_level(std::string_view name);

struct ModelParams {
  std::string model_id = "default";
  std::size_t context_length = 131072;
  double temperature = 1.0;
  double top_p = 0.95;
  std::optional<ReasoningLevel> reasoning_level;
  std::size_t max_output_tokens = 8192;

  /// Throws Error(kInvalidArgument) unless temperature >= 0,
  /// 0 < top_p <= 1 and context_length > 0.
  void validate() const;

  bool operator==(const ModelParams&) const = default;
};

nlohmann::json to_json(const ModelParams& params);
ModelParams model_params_from_json(const nlohmann::json& j);

enum class TurnRole { kSystem, kUser, kAssistant };

std::string_view to_string(TurnRole role);

struct Turn {
  TurnRole role = TurnRole::kUser;
  std::string text;
  std::size_t token_estimate = 0;

  bool operator==(const Turn&) const = default;
};

/// One conversation with the generation model. Not thread-safe; a session
/// belongs to one task at a time.
class DialogSession {
 public:
  explicit DialogSession(ModelParams params = {});

  const ModelParams& params() const { return params_; }
  const std::vector<Turn>& turns() const { return turns_; }
  std::size_t used_tokens() const { return used_tokens_; }
  std::size_t call_count() const { return call_count_; }

  /// Adds a system turn; it does not count as a call.
  void add_preamble(const prompt::Prompt& preamble);
  /// Appends the user prompt and the model's reply together.
  void append_exchange(const prompt::Prompt& user, std::string response);

 private:
  void push(TurnRole role, std::string text);

  ModelParams params_;
  std::vector<Turn> turns_;
  std::size_t used_tokens_ = 0;
  std::size_t call_count_ = 0;
};

inline constexpr std::size_t kReservedOutputBudget = 8192;

/// used + next + reserved > context_length.
bool is_saturated(const DialogSession& session, const prompt::Prompt& next,
                  std::size_t reserved_output = kReservedOutputBudget);

struct ChatRequest {
  ModelParams params;
  std::vector<Turn> messages;
  // Routing metadata; never sent over the wire.
  std::string tag;
  std::optional<prompt::PromptKind> kind;
  bool summarization = false;
};

/// Wire body of a chat-completion request. Carries no credentials.
nlohmann::json to_wire_json(const ChatRequest& request);

struct ChatResponse {
  std::string text;
};

/// Transport to a model. Implementations throw Error with kTransportError or
/// kRateLimited for retryable faults and kBadResponse otherwise.
class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual ChatResponse chat(const ChatRequest& request) = 0;
};

struct Endpoint {
  std::string base_url;  // scheme://host[:port]
  std::string path = "/v1/chat/completions";
  std::string api_key;
  std::chrono::seconds timeout{600};
};

/// Reads `<prefix>_URL`, `<prefix>_API_KEY` and optionally `<prefix>_PATH`
/// (prefixes OPFORGE_LLM and OPFORGE_SUMMARIZER). nullopt when the URL is
/// unset.
std::optional<Endpoint> endpoint_from_env(const std::string& prefix);

/// Chat-completion HTTP+JSON client. The API key travels as a bearer
/// token and is never logged.
class HttpChatBackend : public ChatBackend {
 public:
  explicit HttpChatBackend(Endpoint endpoint);
  ChatResponse chat(const ChatRequest& request) override;

 private:
  Endpoint endpoint_;
};

/// Canned replies for tests and offline runs.
///
/// Each entry applies to requests whose tag, prompt kind, call number and
/// text substring all match the filters it sets; the first unused match
/// answers. Call numbers count per tag from 1. Entries marked `repeat` are
/// never used up. A request nothing matches raises kScriptExhausted.
struct MockEntry {
  std::optional<std::string> tag;
  std::optional<std::string> kind;  // prompt kind name, or "summarize"
  std::optional<std::size_t> call;
  std::optional<std::string> match;
  bool repeat = false;

  enum class Action { kReply, kTransportError, kRateLimited, kBadResponse, kPanic };
  Action action = Action::kReply;
  std::string text;
};

struct MockLlmScript {
  std::vector<MockEntry> entries;
};

/// JSON: {"entries": [{"tag", "kind", "call", "match", "repeat",
/// "error": "transport|rate_limited|bad_response|panic", "text" | "file"}]}.
/// "file" paths resolve against `base_dir`.
MockLlmScript load_mock_llm_script(std::string_view json_text,
                                   const std::string& base_dir = ".");

class MockChatBackend : public ChatBackend {
 public:
  explicit MockChatBackend(MockLlmScript script);
  ChatResponse chat(const ChatRequest& request) override;

  /// Requests seen so far, in arrival order.
  std::vector<ChatRequest> requests() const;
  std::size_t calls(const std::string& tag) const;

 private:
  mutable std::mutex mu_;
  MockLlmScript script_;
  std::vector<bool> used_;
  std::map<std::string, std::size_t> per_tag_;
  std::vector<ChatRequest> requests_;
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
  int max_attempts = 3;
  std::vector<std::chrono::milliseconds> backoff = {std::chrono::seconds(1),
                                                    std::chrono::seconds(4),
                                                    std::chrono::seconds(16)};
  double jitter = 0.25;  // +/- fraction of each delay
  std::uint64_t seed = 0x5eed;
};

struct AttemptRecord {
  std::string tag;
  int attempt = 0;
  bool ok = false;
  std::string error;
  std::chrono::milliseconds delay_before{0};
};

struct GatewayOptions {
  RetryPolicy retry;
  std::size_t max_concurrent = 32;
  std::size_t reserved_output = kReservedOutputBudget;
  Sleeper sleeper;  // defaults to std::this_thread::sleep_for
  std::function<void(const AttemptRecord&)> on_attempt;
};

/// Shared client for every session. Thread-safe.
class LlmGateway {
 public:
  explicit LlmGateway(std::shared_ptr<ChatBackend> backend, GatewayOptions options = {});

  /// Sends the session history plus `prompt`. On success appends both turns;
  /// on any error the session is left untouched. Throws Error(kSaturation)
  /// when is_saturated holds before the call.
  std::string complete(DialogSession& session, const prompt::Prompt& prompt,
                       const std::string& tag = "");

  /// One-shot summarization of a compiler log.
  std::string summarize(std::string_view log, const ModelParams& params,
                        const std::string& tag = "");

  std::size_t reserved_output() const { return options_.reserved_output; }
  std::size_t peak_in_flight() const;

 private:
  ChatResponse send(const ChatRequest& request);

  std::shared_ptr<ChatBackend> backend_;
  GatewayOptions options_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::size_t in_flight_ = 0;
  std::size_t peak_ = 0;
  std::mt19937_64 jitter_rng_;
};

inline constexpr std::size_t kSummaryFallbackChars = 4000;

/// summarize(), falling back to the last 4000 characters of `log` when the
/// summarizer fails. `used_fallback` reports which path was taken.
std::string summarize_or_truncate(LlmGateway& gateway, std::string_view log,
                                  const ModelParams& params, const std::string& tag,
                                  bool* used_fallback = nullptr);

}  // namespace opforge::llm
