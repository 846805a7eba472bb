#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "opforge/protocol.hpp"

namespace opforge::protocol {

/// One scripted outcome. A rule fires when `match` occurs in the loaded
/// candidate source and the optional dtype/case filters agree.
struct MockRule {
  enum class When { kLoad, kTest };
  enum class Action { kPass, kCompileError, kTestFailed, kRuntimeCrash, kDie, kHang };

  When when = When::kLoad;
  std::string match;
  std::optional<Dtype> dtype;
  std::optional<std::string> case_id;
  Action action = Action::kPass;

  std::string log;           // compile_error
  std::size_t log_repeat = 1;
  std::vector<double> cpu_values;     // test_failed
  std::vector<double> device_values;
  std::string crash_kind = "RuntimeError";  // runtime_crash
  std::vector<testing::BacktraceFrame> frames;
  std::string excerpt;
};

struct MockScript {
  Backend backend = Backend::kMock;
  DtypeSet dtypes = {kAllDtypes.begin(), kAllDtypes.end()};
  std::vector<MockRule> rules;
};

/// Throws Error(kParseError). See docs/protocol.md for the format.
MockScript load_mock_script(std::string_view json_text);

/// Serial request handler implementing the worker side of the protocol
/// against a script instead of a tensor stack.
class MockWorkerEngine {
 public:
  enum class Directive { kReply, kExit, kDie, kHang };

  struct Outcome {
    Directive directive = Directive::kReply;
    std::optional<Response> response;
  };

  explicit MockWorkerEngine(MockScript script);

  Outcome handle(const Request& request);

 private:
  const MockRule* find_rule(MockRule::When when, const testing::TestCase* test_case) const;
  Outcome apply(const MockRule& rule, const testing::TestCase* test_case) const;

  MockScript script_;
  std::optional<std::string> loaded_;
};

/// Runs the request loop until Shutdown or hang-up. Malformed frames and
/// version mismatches are answered with ProtocolError (id 0 when the id is
/// unknown) and the loop continues; an oversized frame ends it. Returns the
/// directive that ended the loop.
MockWorkerEngine::Directive serve(FdStream& stream, MockWorkerEngine& engine);

}  // namespace opforge::protocol
