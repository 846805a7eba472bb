#pragma once

#include <chrono>
#include <cstddef>
#include <filesystem>
#include <functional>
#include <fstream>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "opforge/catalog.hpp"
#include "opforge/error.hpp"
#include "opforge/lint.hpp"
#include "opforge/llm.hpp"
#include "opforge/prompt.hpp"
#include "opforge/test_model.hpp"
#include "opforge/worker_pool.hpp"

namespace opforge::fsm {

enum class FsmState {
  kInitialPrompt,
  kGenerateKernel,
  kLint,
  kCompileAndTest,
  kFeedback,
  kNewSessionRestart,
  kSuccess,
  kFailure,
};

inline constexpr std::size_t kStateCount = 8;

std::string_view to_string(FsmState state);
std::optional<FsmState> parse_state(std::string_view name);

/// Success, Failure and NewSessionRestart end a session.
bool is_terminal(FsmState state);

enum class EventKind {
  kPromptBuilt,
  kResponseParsed,
  kParseFailed,
  kLintPassed,
  kLintFailed,
  kCompileFailed,
  kRuntimeCrashed,
  kTestFailed,
  kAllTestsPassed,
  kSaturated,
  kBudgetExhausted,
  kWorkerLost,
  kLlmUnavailable,
};

inline constexpr std::size_t kEventCount = 13;

std::string_view to_string(EventKind kind);
std::optional<EventKind> parse_event_kind(std::string_view name);

struct FsmEvent {
  using Payload = std::variant<std::monostate, prompt::CandidateArtifact, lint::LintReport,
                               std::string, testing::CrashReport, testing::AccuracyPayload>;
  EventKind kind = EventKind::kPromptBuilt;
  Payload payload;

  static FsmEvent simple(EventKind kind) { return {kind, std::monostate{}}; }
  static FsmEvent response_parsed(prompt::CandidateArtifact a) {
    return {EventKind::kResponseParsed, std::move(a)};
  }
  static FsmEvent lint_failed(lint::LintReport r) { return {EventKind::kLintFailed, std::move(r)}; }
  /// `detail` is the parse message, the compile log, or a diagnostic.
  static FsmEvent with_text(EventKind kind, std::string detail) { return {kind, std::move(detail)}; }
  static FsmEvent runtime_crashed(testing::CrashReport r) {
    return {EventKind::kRuntimeCrashed, std::move(r)};
  }
  static FsmEvent test_failed(testing::AccuracyPayload p) {
    return {EventKind::kTestFailed, std::move(p)};
  }
};

struct Budget {
  int calls_remaining = 0;
  int attempts_remaining = 0;
  bool linter_enabled = true;
};

/// Total over every (state, event, budget). Pairs the driver never produces
/// go to Failure; terminal states map to themselves.
FsmState next_state(FsmState state, EventKind event, const Budget& budget);

enum class TestSourceMode { kOpInfo, kCaptured, kBoth };

std::string_view to_string(TestSourceMode mode);
std::optional<TestSourceMode> parse_test_source_mode(std::string_view name);

struct SessionConfig {
  int max_llm_calls = 15;
  int max_attempts = 3;
  bool linter_enabled = true;
  bool summarization_enabled = true;
  std::size_t summarize_threshold = 4000;  // chars; shorter logs go in raw
  std::size_t raw_log_cap = 32000;         // chars kept from the end of a raw log
  testing::TolerancePolicy tolerance = testing::default_tolerances();
  TestSourceMode test_source = TestSourceMode::kOpInfo;
  int cases_per_dtype = 3;
  std::chrono::seconds operator_deadline{std::chrono::hours(2)};

  /// Throws Error(kInvalidArgument) when a budget is below 1.
  void validate() const;
};

nlohmann::json to_json(const SessionConfig& config);
SessionConfig session_config_from_json(const nlohmann::json& j);

enum class SessionStatus { kSuccess, kFailure, kSaturated };

std::string_view to_string(SessionStatus status);
std::optional<SessionStatus> parse_session_status(std::string_view name);

enum class FailureStage {
  kNone,
  kParse,
  kLint,
  kCompile,
  kRuntime,
  kAccuracy,
  kSaturation,
  kNoTests,
  kDeadline,
  kWorkerLost,
  kLlmUnavailable,
  kSessionPanic,
};

std::string_view to_string(FailureStage stage);
std::optional<FailureStage> parse_failure_stage(std::string_view name);

/// Stages caused by the harness rather than by the candidate.
bool is_infrastructure(FailureStage stage);

/// Append-only JSON record stream, one object per line when written to disk.
class SessionTranscript {
 public:
  SessionTranscript() = default;
  /// Records are also appended and flushed to `sink` as they arrive.
  explicit SessionTranscript(const std::filesystem::path& sink);

  SessionTranscript(SessionTranscript&&) = default;
  SessionTranscript& operator=(SessionTranscript&&) = default;

  void append(nlohmann::json record);
  const std::vector<nlohmann::json>& records() const { return records_; }
  std::string to_jsonl() const;

 private:
  std::vector<nlohmann::json> records_;
  std::ofstream sink_;
};

std::vector<nlohmann::json> load_transcript(const std::filesystem::path& path);

/// States in the order a transcript's transition records visit them.
std::vector<FsmState> replay_states(const std::vector<nlohmann::json>& records);

struct SessionDeps {
  llm::LlmGateway* gateway = nullptr;
  llm::LlmGateway* summarizer = nullptr;  // falls back to `gateway` when null
  llm::ModelParams generation_params;
  llm::ModelParams summarizer_params;
  const lint::LintConfig* lint_config = nullptr;
  const catalog::DocstringDag* docstrings = nullptr;
  const std::vector<prompt::ReferenceExample>* examples = nullptr;
};

struct SessionOutcome {
  SessionStatus status = SessionStatus::kFailure;
  FailureStage failure_stage = FailureStage::kNone;
  int llm_calls_used = 0;
  int summarizer_calls = 0;
  int attempt_index = 1;
  bool resumed = false;
  std::optional<prompt::CandidateArtifact> final_artifact;   // set on Success
  std::optional<prompt::CandidateArtifact> latest_artifact;  // newest parsed candidate
  std::vector<FsmState> states;
  std::string diagnostic;
  SessionTranscript transcript;
};

struct SessionContext {
  const testing::TestPlan* plan = nullptr;
  protocol::WorkerHandle* worker = nullptr;
  int attempt_index = 1;
  int attempts_remaining = 0;
  std::chrono::steady_clock::time_point deadline = std::chrono::steady_clock::time_point::max();
  std::optional<std::filesystem::path> transcript_path;
};

/// Loads `module_source` once per dtype group (plan order) and runs every
/// case, stopping at the first failure. Returns AllTestsPassed,
/// CompileFailed, RuntimeCrashed or TestFailed; a dead or confused worker
/// yields WorkerLost. Exchanges are logged to `transcript` when given.
FsmEvent execute_plan(protocol::WorkerHandle& worker, const std::string& module_source,
                      const testing::TestPlan& plan, const testing::TolerancePolicy& policy,
                      SessionTranscript* transcript = nullptr);

/// One dialog session. Saturation ends the session with status kSaturated
/// and the newest artifact; the caller decides whether to restart. Worker
/// loss and LLM outages end it as Failure. Anything else thrown (a bug or an
/// injected panic) propagates.
SessionOutcome run_session(const catalog::OperatorSpec& op, const SessionConfig& config,
                           const SessionDeps& deps, const SessionContext& context,
                           const prompt::CandidateArtifact* prior = nullptr);

struct AttemptSummary {
  int index = 0;
  SessionStatus status = SessionStatus::kFailure;
  FailureStage failure_stage = FailureStage::kNone;
  int llm_calls = 0;
  bool resumed = false;

  bool operator==(const AttemptSummary&) const = default;
};

struct OperatorResult {
  std::string op_name;
  bool success = false;
  FailureStage failure_stage = FailureStage::kNone;
  std::vector<AttemptSummary> attempts;
  int total_llm_calls = 0;
  int summarizer_calls = 0;
  std::optional<int> calls_to_success;
  std::optional<prompt::CandidateArtifact> final_artifact;
  std::optional<prompt::CandidateArtifact> latest_artifact;
  std::string diagnostic;
  /// Set when leasing a worker failed; kWorkerSpawnFailed means the pool is gone.
  std::optional<ErrorCode> lease_error;
};

struct OperatorDeps {
  SessionDeps session;
  protocol::WorkerPool* pool = nullptr;
  /// When set, attempt N's transcript goes to <dir>/attempt<N>.log.
  std::optional<std::filesystem::path> transcript_dir;
  /// Called with each leased worker before its session starts.
  std::function<void(protocol::WorkerHandle&)> on_lease;
};

/// Up to max_attempts sessions. A saturated session seeds the next one with
/// its newest artifact; a failed one is followed by a fresh session.
/// Infrastructure failures stop early. `seed` resumes the first attempt.
OperatorResult run_operator(const catalog::OperatorSpec& op, const testing::TestPlan& plan,
                            const SessionConfig& config, const OperatorDeps& deps,
                            const prompt::CandidateArtifact* seed = nullptr);

}  // namespace opforge::fsm
