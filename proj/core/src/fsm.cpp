#include "opforge/fsm.hpp"

#include <array>

#include "opforge/error.hpp"
#include "opforge/protocol.hpp"
#include "opforge/util.hpp"

namespace opforge::fsm {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kStateCount> kStateNames = {
    "InitialPrompt", "GenerateKernel",    "Lint",    "CompileAndTest",
    "Feedback",      "NewSessionRestart", "Success", "Failure"};

constexpr std::array<std::string_view, kEventCount> kEventNames = {
    "PromptBuilt",   "ResponseParsed", "ParseFailed",    "LintPassed",    "LintFailed",
    "CompileFailed", "RuntimeCrashed", "TestFailed",     "AllTestsPassed", "Saturated",
    "BudgetExhausted", "WorkerLost",   "LlmUnavailable"};

constexpr std::array<std::string_view, 12> kStageNames = {
    "none",     "parse",       "lint",        "compile",         "runtime",
    "accuracy", "saturation",  "no_tests",    "deadline",        "worker_lost",
    "llm_unavailable", "session_panic"};

template <typename Enum, std::size_t N>
std::optional<Enum> parse_name(const std::array<std::string_view, N>& names,
                               std::string_view name) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  return std::nullopt;
}

FailureStage stage_of(EventKind kind) {
  switch (kind) {
    case EventKind::kParseFailed: return FailureStage::kParse;
    case EventKind::kLintFailed: return FailureStage::kLint;
    case EventKind::kCompileFailed: return FailureStage::kCompile;
    case EventKind::kRuntimeCrashed: return FailureStage::kRuntime;
    case EventKind::kTestFailed: return FailureStage::kAccuracy;
    case EventKind::kSaturated: return FailureStage::kSaturation;
    case EventKind::kWorkerLost: return FailureStage::kWorkerLost;
    case EventKind::kLlmUnavailable: return FailureStage::kLlmUnavailable;
    default: return FailureStage::kNone;
  }
}

json budget_json(const Budget& b) {
  return {{"calls_remaining", b.calls_remaining},
          {"attempts_remaining", b.attempts_remaining},
          {"linter_enabled", b.linter_enabled}};
}

json message_json(const protocol::Body& body) {
  return json::parse(protocol::encode_body(protocol::Message{0, body}));
}

const std::string* text_of(const FsmEvent& e) { return std::get_if<std::string>(&e.payload); }

}  // namespace

std::string_view to_string(FsmState state) { return kStateNames[static_cast<std::size_t>(state)]; }

std::optional<FsmState> parse_state(std::string_view name) {
  return parse_name<FsmState>(kStateNames, name);
}

bool is_terminal(FsmState state) {
  return state == FsmState::kSuccess || state == FsmState::kFailure ||
         state == FsmState::kNewSessionRestart;
}

std::string_view to_string(EventKind kind) { return kEventNames[static_cast<std::size_t>(kind)]; }

std::optional<EventKind> parse_event_kind(std::string_view name) {
  return parse_name<EventKind>(kEventNames, name);
}

FsmState next_state(FsmState state, EventKind event, const Budget& budget) {
  if (is_terminal(state)) return state;
  const FsmState retry = budget.calls_remaining > 0 ? FsmState::kFeedback : FsmState::kFailure;
  switch (event) {
    case EventKind::kSaturated:
      return budget.attempts_remaining > 0 ? FsmState::kNewSessionRestart : FsmState::kFailure;
    case EventKind::kBudgetExhausted:
    case EventKind::kWorkerLost:
    case EventKind::kLlmUnavailable:
      return FsmState::kFailure;
    default:
      break;
  }
  switch (state) {
    case FsmState::kInitialPrompt:
      if (event == EventKind::kPromptBuilt) {
        return budget.calls_remaining > 0 ? FsmState::kGenerateKernel : FsmState::kFailure;
      }
      break;
    case FsmState::kGenerateKernel:
      if (event == EventKind::kResponseParsed) {
        return budget.linter_enabled ? FsmState::kLint : FsmState::kCompileAndTest;
      }
      if (event == EventKind::kParseFailed) return retry;
      break;
    case FsmState::kLint:
      if (event == EventKind::kLintPassed) return FsmState::kCompileAndTest;
      if (event == EventKind::kLintFailed) return retry;
      break;
    case FsmState::kCompileAndTest:
      if (event == EventKind::kAllTestsPassed) return FsmState::kSuccess;
      if (event == EventKind::kCompileFailed || event == EventKind::kRuntimeCrashed ||
          event == EventKind::kTestFailed) {
        return retry;
      }
      break;
    case FsmState::kFeedback:
      if (event == EventKind::kPromptBuilt) {
        return budget.calls_remaining > 0 ? FsmState::kGenerateKernel : FsmState::kFailure;
      }
      break;
    default:
      break;
  }
  return FsmState::kFailure;
}

std::string_view to_string(TestSourceMode mode) {
  switch (mode) {
    case TestSourceMode::kOpInfo: return "opinfo";
    case TestSourceMode::kCaptured: return "captured";
    case TestSourceMode::kBoth: return "both";
  }
  return "opinfo";
}

std::optional<TestSourceMode> parse_test_source_mode(std::string_view name) {
  if (name == "opinfo") return TestSourceMode::kOpInfo;
  if (name == "captured") return TestSourceMode::kCaptured;
  if (name == "both") return TestSourceMode::kBoth;
  return std::nullopt;
}

void SessionConfig::validate() const {
  if (max_llm_calls < 1) throw Error(ErrorCode::kInvalidArgument, "max_llm_calls must be >= 1");
  if (max_attempts < 1) throw Error(ErrorCode::kInvalidArgument, "max_attempts must be >= 1");
  if (cases_per_dtype < 1) {
    throw Error(ErrorCode::kInvalidArgument, "cases_per_dtype must be >= 1");
  }
}

json to_json(const SessionConfig& c) {
  return {{"max_llm_calls", c.max_llm_calls},
          {"max_attempts", c.max_attempts},
          {"linter_enabled", c.linter_enabled},
          {"summarization_enabled", c.summarization_enabled},
          {"summarize_threshold", c.summarize_threshold},
          {"raw_log_cap", c.raw_log_cap},
          {"tolerance", testing::to_json(c.tolerance)},
          {"test_source", to_string(c.test_source)},
          {"cases_per_dtype", c.cases_per_dtype},
          {"operator_deadline_s", c.operator_deadline.count()}};
}

SessionConfig session_config_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParseError, "session config must be an object");
  SessionConfig c;
  try {
    c.max_llm_calls = j.value("max_llm_calls", c.max_llm_calls);
    c.max_attempts = j.value("max_attempts", c.max_attempts);
    c.linter_enabled = j.value("linter_enabled", c.linter_enabled);
    c.summarization_enabled = j.value("summarization_enabled", c.summarization_enabled);
    c.summarize_threshold = j.value("summarize_threshold", c.summarize_threshold);
    c.raw_log_cap = j.value("raw_log_cap", c.raw_log_cap);
    if (j.contains("tolerance")) c.tolerance = testing::tolerance_policy_from_json(j["tolerance"]);
    if (j.contains("test_source")) {
      const auto name = j["test_source"].get<std::string>();
      auto mode = parse_test_source_mode(name);
      if (!mode) throw Error(ErrorCode::kParseError, "unknown test_source '" + name + "'");
      c.test_source = *mode;
    }
    c.cases_per_dtype = j.value("cases_per_dtype", c.cases_per_dtype);
    c.operator_deadline =
        std::chrono::seconds(j.value("operator_deadline_s", c.operator_deadline.count()));
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParseError, std::string("session config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string_view to_string(SessionStatus status) {
  switch (status) {
    case SessionStatus::kSuccess: return "success";
    case SessionStatus::kFailure: return "failure";
    case SessionStatus::kSaturated: return "saturated";
  }
  return "failure";
}

std::optional<SessionStatus> parse_session_status(std::string_view name) {
  if (name == "success") return SessionStatus::kSuccess;
  if (name == "failure") return SessionStatus::kFailure;
  if (name == "saturated") return SessionStatus::kSaturated;
  return std::nullopt;
}

std::string_view to_string(FailureStage stage) {
  return kStageNames[static_cast<std::size_t>(stage)];
}

std::optional<FailureStage> parse_failure_stage(std::string_view name) {
  return parse_name<FailureStage>(kStageNames, name);
}

bool is_infrastructure(FailureStage stage) {
  return stage == FailureStage::kWorkerLost || stage == FailureStage::kLlmUnavailable ||
         stage == FailureStage::kSessionPanic;
}

// ---- transcript -----------------------------------------------------------

SessionTranscript::SessionTranscript(const std::filesystem::path& sink) {
  if (sink.has_parent_path()) std::filesystem::create_directories(sink.parent_path());
  sink_.open(sink, std::ios::binary | std::ios::trunc);
  if (!sink_) throw Error(ErrorCode::kIoError, "cannot open transcript " + sink.string());
}

void SessionTranscript::append(json record) {
  record["seq"] = records_.size();
  if (sink_.is_open()) {
    sink_ << record.dump(-1, ' ', false, json::error_handler_t::replace) << '\n';
    sink_.flush();
  }
  records_.push_back(std::move(record));
}

std::string SessionTranscript::to_jsonl() const {
  std::string out;
  for (const auto& r : records_) {
    out += r.dump(-1, ' ', false, json::error_handler_t::replace);
    out += '\n';
  }
  return out;
}

std::vector<json> load_transcript(const std::filesystem::path& path) {
  const std::string text = util::read_file(path);
  std::vector<json> out;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string::npos) end = text.size();
    if (end > pos) {
      try {
        out.push_back(json::parse(text.substr(pos, end - pos)));
      } catch (const json::parse_error& e) {
        throw Error(ErrorCode::kParseError, path.string() + ": " + e.what());
      }
    }
    pos = end + 1;
  }
  return out;
}

std::vector<FsmState> replay_states(const std::vector<json>& records) {
  std::vector<FsmState> states;
  for (const auto& r : records) {
    if (r.value("type", "") != "transition") continue;
    const auto from = parse_state(r.at("from").get<std::string>());
    const auto to = parse_state(r.at("to").get<std::string>());
    if (!from || !to) throw Error(ErrorCode::kParseError, "transition names an unknown state");
    if (states.empty()) states.push_back(*from);
    states.push_back(*to);
  }
  return states;
}

// ---- execution --------------------------------------------------------------

FsmEvent execute_plan(protocol::WorkerHandle& worker, const std::string& module_source,
                      const testing::TestPlan& plan, const testing::TolerancePolicy& policy,
                      SessionTranscript* transcript) {
  auto log_exchange = [&](const protocol::Body& request, const protocol::Body& response) {
    if (!transcript) return;
    transcript->append({{"type", "worker_exchange"},
                        {"request", message_json(request)},
                        {"response", message_json(response)}});
  };
  auto lost = [&](const std::string& why) {
    if (transcript) transcript->append({{"type", "worker_lost"}, {"detail", why}});
    return FsmEvent::with_text(EventKind::kWorkerLost, why);
  };
  try {
    std::size_t i = 0;
    while (i < plan.cases.size()) {
      const Dtype dtype = plan.cases[i].dtype;
      const protocol::LoadCandidate load{module_source};
      const auto loaded = worker.load_candidate(module_source);
      log_exchange(load, protocol::to_body(loaded));
      if (const auto* ce = std::get_if<protocol::CompileError>(&loaded)) {
        return FsmEvent::with_text(EventKind::kCompileFailed, ce->log);
      }
      if (const auto* pe = std::get_if<protocol::ProtocolError>(&loaded)) {
        return lost("worker protocol error: " + pe->detail);
      }
      if (!std::holds_alternative<protocol::LoadOk>(loaded)) {
        return lost("unexpected reply to load_candidate");
      }
      for (; i < plan.cases.size() && plan.cases[i].dtype == dtype; ++i) {
        const auto& tc = plan.cases[i];
        const auto r = worker.run_test(tc, policy);
        log_exchange(protocol::RunTest{tc, policy}, protocol::to_body(r));
        if (std::holds_alternative<protocol::TestPassed>(r)) continue;
        if (const auto* tf = std::get_if<protocol::TestFailed>(&r)) {
          return FsmEvent::test_failed(tf->payload);
        }
        if (const auto* rc = std::get_if<protocol::RuntimeCrash>(&r)) {
          return FsmEvent::runtime_crashed(rc->report);
        }
        if (const auto* pe = std::get_if<protocol::ProtocolError>(&r)) {
          return lost("worker protocol error: " + pe->detail);
        }
        return lost("unexpected reply to run_test");
      }
    }
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kWorkerLost) throw;
    return lost(e.what());
  }
  return FsmEvent::simple(EventKind::kAllTestsPassed);
}

// ---- session ------------------------------------------------------------------

namespace {

class SessionRunner {
 public:
  SessionRunner(const catalog::OperatorSpec& op, const SessionConfig& config,
                const SessionDeps& deps, const SessionContext& ctx,
                const prompt::CandidateArtifact* prior)
      : op_(op), config_(config), deps_(deps), ctx_(ctx), prior_(prior),
        dialog_(deps.generation_params) {
    if (!deps_.gateway || !deps_.lint_config || !deps_.docstrings || !deps_.examples ||
        !ctx_.plan || !ctx_.worker) {
      throw Error(ErrorCode::kInvalidArgument, "run_session is missing a dependency");
    }
    if (ctx_.transcript_path) out_.transcript = SessionTranscript(*ctx_.transcript_path);
    out_.attempt_index = ctx_.attempt_index;
    out_.resumed = prior != nullptr;
    if (prior) out_.latest_artifact = *prior;
  }

  SessionOutcome run() {
    log({{"type", "session_start"},
         {"operator", op_.name},
         {"attempt", ctx_.attempt_index},
         {"resume", prior_ != nullptr},
         {"config", to_json(config_)}});
    const auto preamble = prompt::build_preamble();
    dialog_.add_preamble(preamble);

    FsmState state = FsmState::kInitialPrompt;
    out_.states.push_back(state);
    while (!is_terminal(state)) {
      log({{"type", "state_enter"}, {"state", to_string(state)}});
      FsmEvent event = std::chrono::steady_clock::now() >= ctx_.deadline
                           ? deadline_event()
                           : step(state);
      log({{"type", "state_exit"}, {"state", to_string(state)}});
      const Budget budget{config_.max_llm_calls - out_.llm_calls_used, ctx_.attempts_remaining,
                          config_.linter_enabled};
      const FsmState next = next_state(state, event.kind, budget);
      log({{"type", "transition"},
           {"from", to_string(state)},
           {"to", to_string(next)},
           {"event", to_string(event.kind)},
           {"budget", budget_json(budget)}});
      if (const auto s = stage_of(event.kind); s != FailureStage::kNone) last_stage_ = s;
      if (event.kind == EventKind::kBudgetExhausted && deadline_hit_) {
        last_stage_ = FailureStage::kDeadline;
      }
      if (const auto* t = text_of(event); t && (event.kind == EventKind::kWorkerLost ||
                                                event.kind == EventKind::kLlmUnavailable)) {
        out_.diagnostic = *t;
      }
      if (next != FsmState::kFailure && next != FsmState::kSuccess) last_event_ = std::move(event);
      state = next;
      out_.states.push_back(state);
    }

    if (state == FsmState::kSuccess) {
      out_.status = SessionStatus::kSuccess;
      out_.final_artifact = out_.latest_artifact;
    } else if (state == FsmState::kNewSessionRestart) {
      out_.status = SessionStatus::kSaturated;
      out_.failure_stage = FailureStage::kSaturation;
    } else {
      out_.status = SessionStatus::kFailure;
      out_.failure_stage = last_stage_;
    }
    log({{"type", "session_end"},
         {"status", to_string(out_.status)},
         {"failure_stage", to_string(out_.failure_stage)},
         {"llm_calls", out_.llm_calls_used},
         {"summarizer_calls", out_.summarizer_calls}});
    return std::move(out_);
  }

 private:
  void log(json record) { out_.transcript.append(std::move(record)); }

  FsmEvent deadline_event() {
    deadline_hit_ = true;
    return FsmEvent::with_text(EventKind::kBudgetExhausted, "operator deadline exceeded");
  }

  FsmEvent prompt_ready(prompt::Prompt p) {
    pending_ = std::move(p);
    if (llm::is_saturated(dialog_, pending_, deps_.gateway->reserved_output())) {
      log({{"type", "saturated"},
           {"used_tokens", dialog_.used_tokens()},
           {"prompt_tokens", pending_.token_estimate}});
      return FsmEvent::simple(EventKind::kSaturated);
    }
    return FsmEvent::simple(EventKind::kPromptBuilt);
  }

  FsmEvent step(FsmState state) {
    switch (state) {
      case FsmState::kInitialPrompt:
        return prompt_ready(prompt::build_initial(op_, op_.dtypes, *deps_.docstrings,
                                                  *deps_.examples, prior_));
      case FsmState::kGenerateKernel: return generate();
      case FsmState::kLint: return lint();
      case FsmState::kCompileAndTest: return compile_and_test();
      case FsmState::kFeedback: return feedback();
      default: break;
    }
    throw Error(ErrorCode::kInvalidArgument, "no action for terminal state");
  }

  FsmEvent generate() {
    if (out_.llm_calls_used >= config_.max_llm_calls) {
      return FsmEvent::simple(EventKind::kBudgetExhausted);
    }
    log({{"type", "llm_request"},
         {"kind", prompt::to_string(pending_.kind)},
         {"token_estimate", pending_.token_estimate},
         {"model", llm::to_json(dialog_.params())},
         {"text", pending_.text}});
    std::string response;
    try {
      response = deps_.gateway->complete(dialog_, pending_, op_.name);
    } catch (const Error& e) {
      log({{"type", "llm_error"}, {"code", opforge::to_string(e.code())}, {"message", e.what()}});
      if (e.code() == ErrorCode::kSaturation) return FsmEvent::simple(EventKind::kSaturated);
      if (e.code() == ErrorCode::kBadResponse) {
        // The call is spent but the dialog is unchanged, so the same prompt
        // goes out again.
        ++out_.llm_calls_used;
        reissue_ = true;
        return FsmEvent::with_text(EventKind::kParseFailed, e.what());
      }
      return FsmEvent::with_text(EventKind::kLlmUnavailable, e.what());
    }
    ++out_.llm_calls_used;
    log({{"type", "llm_response"}, {"call", out_.llm_calls_used}, {"text", response}});
    try {
      auto artifact = prompt::parse_response(response);
      out_.latest_artifact = artifact;
      return FsmEvent::response_parsed(std::move(artifact));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoCodeBlock && e.code() != ErrorCode::kMultipleModules) throw;
      log({{"type", "parse_failed"}, {"message", e.what()}});
      return FsmEvent::with_text(EventKind::kParseFailed, e.what());
    }
  }

  FsmEvent lint() {
    const auto report = lint::lint_source(out_.latest_artifact->module_source, *deps_.lint_config);
    log({{"type", "lint_report"}, {"pass", report.pass()}, {"report", json::parse(report.to_json())}});
    if (report.pass()) return FsmEvent::simple(EventKind::kLintPassed);
    return FsmEvent::lint_failed(report);
  }

  FsmEvent compile_and_test() {
    const auto& artifact = *out_.latest_artifact;
    if (!artifact.has_wrapper || artifact.kernels.empty()) {
      // Without the linter nothing else checks the shape the harness needs.
      std::string log_text = "module rejected by the test harness:";
      if (!artifact.has_wrapper) log_text += " no function named \"wrapper\";";
      if (artifact.kernels.empty()) log_text += " no function whose name starts with \"kernel\";";
      log({{"type", "harness_rejected"}, {"log", log_text}});
      return FsmEvent::with_text(EventKind::kCompileFailed, log_text);
    }
    return execute_plan(*ctx_.worker, artifact.module_source, *ctx_.plan, config_.tolerance,
                        &out_.transcript);
  }

  std::string compile_log_for_prompt(const std::string& raw) {
    if (config_.summarization_enabled && raw.size() > config_.summarize_threshold) {
      llm::LlmGateway& summarizer = deps_.summarizer ? *deps_.summarizer : *deps_.gateway;
      bool fallback = false;
      ++out_.summarizer_calls;
      std::string text = llm::summarize_or_truncate(summarizer, raw, deps_.summarizer_params,
                                                    op_.name, &fallback);
      log({{"type", "summarizer"},
           {"log_chars", raw.size()},
           {"fallback", fallback},
           {"text", text}});
      return text;
    }
    if (raw.size() > config_.raw_log_cap) return util::tail(raw, config_.raw_log_cap);
    return raw;
  }

  FsmEvent feedback() {
    if (reissue_) {
      reissue_ = false;
      return prompt_ready(pending_);
    }
    using prompt::PromptKind;
    const auto& e = last_event_;
    switch (e.kind) {
      case EventKind::kLintFailed:
        return prompt_ready(prompt::build_feedback(PromptKind::kLintFeedback,
                                                   std::get<lint::LintReport>(e.payload)));
      case EventKind::kParseFailed:
        return prompt_ready(prompt::build_feedback(
            PromptKind::kLintFeedback, lint::output_format_report(*text_of(e))));
      case EventKind::kCompileFailed:
        return prompt_ready(prompt::build_feedback(PromptKind::kCompileFeedback,
                                                   compile_log_for_prompt(*text_of(e))));
      case EventKind::kRuntimeCrashed:
        return prompt_ready(prompt::build_feedback(
            PromptKind::kCrashFeedback, std::get<testing::CrashReport>(e.payload)));
      case EventKind::kTestFailed:
        return prompt_ready(prompt::build_feedback(
            PromptKind::kAccuracyFeedback, std::get<testing::AccuracyPayload>(e.payload)));
      default:
        break;
    }
    throw Error(ErrorCode::kInvalidArgument,
                "feedback state entered after " + std::string(to_string(e.kind)));
  }

  const catalog::OperatorSpec& op_;
  const SessionConfig& config_;
  const SessionDeps& deps_;
  const SessionContext& ctx_;
  const prompt::CandidateArtifact* prior_;
  llm::DialogSession dialog_;
  SessionOutcome out_;
  prompt::Prompt pending_;
  FsmEvent last_event_;
  FailureStage last_stage_ = FailureStage::kNone;
  bool reissue_ = false;
  bool deadline_hit_ = false;
};

}  // namespace

SessionOutcome run_session(const catalog::OperatorSpec& op, const SessionConfig& config,
                           const SessionDeps& deps, const SessionContext& context,
                           const prompt::CandidateArtifact* prior) {
  config.validate();
  return SessionRunner(op, config, deps, context, prior).run();
}

// ---- operator -------------------------------------------------------------------

OperatorResult run_operator(const catalog::OperatorSpec& op, const testing::TestPlan& plan,
                            const SessionConfig& config, const OperatorDeps& deps,
                            const prompt::CandidateArtifact* seed) {
  config.validate();
  if (!deps.pool) throw Error(ErrorCode::kInvalidArgument, "run_operator needs a worker pool");
  OperatorResult result;
  result.op_name = op.name;
  if (plan.cases.empty()) {
    result.failure_stage = FailureStage::kNoTests;
    result.diagnostic = "test plan is empty";
    return result;
  }
  const auto deadline = std::chrono::steady_clock::now() + config.operator_deadline;
  std::optional<prompt::CandidateArtifact> carry;
  if (seed) carry = *seed;
  for (int attempt = 1; attempt <= config.max_attempts; ++attempt) {
    protocol::WorkerLease lease;
    try {
      lease = deps.pool->lease();
    } catch (const Error& e) {
      result.failure_stage = FailureStage::kWorkerLost;
      result.diagnostic = e.what();
      result.lease_error = e.code();
      break;
    }
    if (deps.on_lease) deps.on_lease(*lease);
    SessionContext ctx;
    ctx.plan = &plan;
    ctx.worker = lease.operator->();
    ctx.attempt_index = attempt;
    ctx.attempts_remaining = config.max_attempts - attempt;
    ctx.deadline = deadline;
    if (deps.transcript_dir) {
      ctx.transcript_path = *deps.transcript_dir / ("attempt" + std::to_string(attempt) + ".log");
    }
    auto outcome = run_session(op, config, deps.session, ctx, carry ? &*carry : nullptr);
    lease.release();

    result.attempts.push_back({attempt, outcome.status, outcome.failure_stage,
                               outcome.llm_calls_used, outcome.resumed});
    result.total_llm_calls += outcome.llm_calls_used;
    result.summarizer_calls += outcome.summarizer_calls;
    result.failure_stage = outcome.failure_stage;
    if (!outcome.diagnostic.empty()) result.diagnostic = outcome.diagnostic;
    if (outcome.latest_artifact) result.latest_artifact = outcome.latest_artifact;

    if (outcome.status == SessionStatus::kSuccess) {
      result.success = true;
      result.failure_stage = FailureStage::kNone;
      result.calls_to_success = result.total_llm_calls;
      result.final_artifact = outcome.final_artifact;
      break;
    }
    if (is_infrastructure(outcome.failure_stage) ||
        outcome.failure_stage == FailureStage::kDeadline) {
      break;
    }
    // Only a saturated session hands its newest candidate to the next one.
    carry.reset();
    if (outcome.status == SessionStatus::kSaturated && outcome.latest_artifact) {
      carry = outcome.latest_artifact;
    }
  }
  return result;
}

}  // namespace opforge::fsm
