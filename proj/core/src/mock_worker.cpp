#include "opforge/mock_worker.hpp"

#include <nlohmann/json.hpp>

#include "opforge/error.hpp"

namespace opforge::protocol {

using nlohmann::json;

namespace {

[[noreturn]] void script_error(const std::string& what) {
  throw Error(ErrorCode::kParseError, "mock script: " + what);
}

MockRule::Action parse_action(const std::string& name) {
  if (name == "pass") return MockRule::Action::kPass;
  if (name == "compile_error") return MockRule::Action::kCompileError;
  if (name == "test_failed") return MockRule::Action::kTestFailed;
  if (name == "runtime_crash") return MockRule::Action::kRuntimeCrash;
  if (name == "die") return MockRule::Action::kDie;
  if (name == "hang") return MockRule::Action::kHang;
  script_error("unknown action '" + name + "'");
}

std::vector<double> doubles(const json& j, const char* key) {
  std::vector<double> out;
  if (!j.contains(key)) return out;
  for (const auto& v : j.at(key)) out.push_back(v.get<double>());
  return out;
}

testing::Shape flat_shape(std::size_t n) { return {static_cast<std::int64_t>(n)}; }

}  // namespace

MockScript load_mock_script(std::string_view json_text) {
  MockScript script;
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    script_error(e.what());
  }
  if (!j.is_object()) script_error("top level must be an object");
  try {
    if (j.contains("backend")) {
      auto b = parse_backend(j.at("backend").get<std::string>());
      if (!b) script_error("unknown backend");
      script.backend = *b;
    }
    if (j.contains("dtypes")) {
      script.dtypes.clear();
      for (const auto& d : j.at("dtypes")) {
        auto dt = parse_dtype(d.get<std::string>());
        if (!dt) script_error("unknown dtype " + d.dump());
        script.dtypes.insert(*dt);
      }
    }
    for (const auto& r : j.value("rules", json::array())) {
      MockRule rule;
      const std::string when = r.value("when", "load");
      if (when == "load") {
        rule.when = MockRule::When::kLoad;
      } else if (when == "test") {
        rule.when = MockRule::When::kTest;
      } else {
        script_error("'when' must be load or test");
      }
      rule.match = r.value("match", "");
      if (r.contains("dtype")) {
        auto dt = parse_dtype(r.at("dtype").get<std::string>());
        if (!dt) script_error("unknown dtype in rule");
        rule.dtype = dt;
      }
      if (r.contains("case_id")) rule.case_id = r.at("case_id").get<std::string>();
      rule.action = parse_action(r.value("action", "pass"));
      rule.log = r.value("log", "");
      rule.log_repeat = r.value("log_repeat", std::size_t{1});
      rule.cpu_values = doubles(r, "cpu");
      rule.device_values = doubles(r, "device");
      rule.crash_kind = r.value("crash_kind", "RuntimeError");
      for (const auto& f : r.value("frames", json::array())) {
        rule.frames.push_back({f.at("function").get<std::string>(),
                               f.at("location").get<std::string>()});
      }
      rule.excerpt = r.value("excerpt", "");
      script.rules.push_back(std::move(rule));
    }
  } catch (const json::exception& e) {
    script_error(e.what());
  }
  return script;
}

MockWorkerEngine::MockWorkerEngine(MockScript script) : script_(std::move(script)) {}

const MockRule* MockWorkerEngine::find_rule(MockRule::When when,
                                            const testing::TestCase* test_case) const {
  for (const auto& rule : script_.rules) {
    if (rule.when != when) continue;
    if (loaded_->find(rule.match) == std::string::npos) continue;
    if (test_case) {
      if (rule.dtype && *rule.dtype != test_case->dtype) continue;
      if (rule.case_id && *rule.case_id != test_case->case_id) continue;
    }
    return &rule;
  }
  return nullptr;
}

MockWorkerEngine::Outcome MockWorkerEngine::apply(const MockRule& rule,
                                                  const testing::TestCase* test_case) const {
  const std::string case_id = test_case ? test_case->case_id : std::string();
  switch (rule.action) {
    case MockRule::Action::kPass:
      if (test_case) return {Directive::kReply, TestPassed{case_id}};
      return {Directive::kReply, LoadOk{}};
    case MockRule::Action::kCompileError: {
      std::string log;
      for (std::size_t i = 0; i < rule.log_repeat; ++i) {
        log += rule.log;
        if (!rule.log.empty() && rule.log.back() != '\n') log += '\n';
      }
      return {Directive::kReply, CompileError{log}};
    }
    case MockRule::Action::kTestFailed: {
      TestFailed failed;
      failed.case_id = case_id;
      const Dtype dtype = test_case ? test_case->dtype : Dtype::kFloat32;
      auto cpu = rule.cpu_values.empty() ? std::vector<double>{1, 2, 3, 4} : rule.cpu_values;
      auto dev = rule.device_values.empty() ? std::vector<double>{-1, -2, -3, -4}
                                            : rule.device_values;
      failed.payload.cpu_summary = testing::summarize_tensor(cpu, dtype, flat_shape(cpu.size()));
      failed.payload.device_summary =
          testing::summarize_tensor(dev, dtype, flat_shape(dev.size()));
      failed.payload.input_signature = "(Tensor self) -> Tensor";
      failed.payload.output_signature = "Tensor";
      if (test_case && !test_case->input_tensors.empty()) {
        failed.payload.input_shape = test_case->input_tensors.front().shape;
      }
      failed.payload.input_tensor_excerpt =
          testing::summarize_tensor(cpu, dtype, flat_shape(cpu.size())).render();
      failed.payload.input_args = test_case ? test_case->input_args.dump() : "[]";
      failed.payload.input_kwargs = test_case ? test_case->input_kwargs.dump() : "{}";
      return {Directive::kReply, failed};
    }
    case MockRule::Action::kRuntimeCrash: {
      RuntimeCrash crash;
      crash.case_id = case_id;
      crash.report.crash_kind = rule.crash_kind;
      crash.report.backtrace_frames = rule.frames;
      if (crash.report.backtrace_frames.empty()) {
        crash.report.backtrace_frames.push_back({"wrapper", "<candidate>:1"});
      }
      crash.report.set_excerpt(rule.excerpt.empty() ? rule.crash_kind : rule.excerpt);
      return {Directive::kReply, crash};
    }
    case MockRule::Action::kDie:
      return {Directive::kDie, std::nullopt};
    case MockRule::Action::kHang:
      return {Directive::kHang, std::nullopt};
  }
  return {Directive::kReply, ProtocolError{"unhandled rule"}};
}

MockWorkerEngine::Outcome MockWorkerEngine::handle(const Request& request) {
  if (std::holds_alternative<Capabilities>(request)) {
    return {Directive::kReply, CapabilitiesOk{script_.backend, script_.dtypes}};
  }
  if (std::holds_alternative<Shutdown>(request)) return {Directive::kExit, std::nullopt};
  if (const auto* load = std::get_if<LoadCandidate>(&request)) {
    loaded_ = load->module_source;
    if (const MockRule* rule = find_rule(MockRule::When::kLoad, nullptr)) {
      Outcome out = apply(*rule, nullptr);
      if (out.response && std::holds_alternative<CompileError>(*out.response)) {
        loaded_.reset();
      }
      return out;
    }
    if (loaded_->find("def wrapper") == std::string::npos) {
      loaded_.reset();
      return {Directive::kReply,
              CompileError{"AttributeError: candidate module has no attribute 'wrapper'\n"}};
    }
    return {Directive::kReply, LoadOk{}};
  }
  const auto& run = std::get<RunTest>(request);
  if (!loaded_) {
    return {Directive::kReply, ProtocolError{"run_test before a successful load_candidate"}};
  }
  if (!script_.dtypes.contains(run.test_case.dtype)) {
    return {Directive::kReply,
            ProtocolError{"dtype " + std::string(to_string(run.test_case.dtype)) +
                          " not supported by this worker"}};
  }
  if (const MockRule* rule = find_rule(MockRule::When::kTest, &run.test_case)) {
    return apply(*rule, &run.test_case);
  }
  return {Directive::kReply, TestPassed{run.test_case.case_id}};
}

namespace {

// Stops answering but keeps the stream open until the peer gives up.
void stall(FdStream& stream) {
  char sink;
  try {
    while (true) stream.read_exact(&sink, 1, Clock::time_point::max());
  } catch (const Error&) {
  }
}

MockWorkerEngine::Directive serve_loop(FdStream& stream, MockWorkerEngine& engine) {
  const auto forever = Clock::time_point::max();
  while (true) {
    Message incoming;
    try {
      incoming = read_message(stream, forever);
    } catch (const Error& e) {
      switch (e.code()) {
        case ErrorCode::kMalformedFrame:
        case ErrorCode::kVersionMismatch:
          write_message(stream, {0, ProtocolError{e.what()}});
          continue;
        case ErrorCode::kFrameTooLarge:
          write_message(stream, {0, ProtocolError{e.what()}});
          return MockWorkerEngine::Directive::kExit;
        default:
          return MockWorkerEngine::Directive::kExit;
      }
    }
    auto request = as_request(incoming.body);
    if (!request) {
      write_message(stream, {incoming.id, ProtocolError{"expected a request, got " +
                                                        std::string(type_name(incoming.body))}});
      continue;
    }
    auto outcome = engine.handle(*request);
    switch (outcome.directive) {
      case MockWorkerEngine::Directive::kReply:
        write_message(stream, {incoming.id, to_body(*outcome.response)});
        break;
      case MockWorkerEngine::Directive::kHang:
        stall(stream);
        return outcome.directive;
      default:
        return outcome.directive;
    }
  }
}

}  // namespace

MockWorkerEngine::Directive serve(FdStream& stream, MockWorkerEngine& engine) {
  try {
    return serve_loop(stream, engine);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::kWorkerLost) throw;
    return MockWorkerEngine::Directive::kExit;
  }
}

}  // namespace opforge::protocol
