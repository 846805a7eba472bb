#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <variant>

#include "opforge/dtype.hpp"
#include "opforge/test_model.hpp"

namespace opforge::protocol {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = 64u * 1024u * 1024u;

enum class Backend { kJit, kInterpreter, kMock };

std::string_view to_string(Backend backend);
std::optional<Backend> parse_backend(std::string_view name);

// Requests.
struct Capabilities {
  bool operator==(const Capabilities&) const = default;
};
struct LoadCandidate {
  std::string module_source;
  bool operator==(const LoadCandidate&) const = default;
};
struct RunTest {
  testing::TestCase test_case;
  testing::TolerancePolicy policy;
  bool operator==(const RunTest&) const = default;
};
struct Shutdown {
  bool operator==(const Shutdown&) const = default;
};

// Responses.
struct CapabilitiesOk {
  Backend backend = Backend::kMock;
  DtypeSet dtypes;
  bool operator==(const CapabilitiesOk&) const = default;
};
struct LoadOk {
  bool operator==(const LoadOk&) const = default;
};
struct CompileError {
  std::string log;
  bool operator==(const CompileError&) const = default;
};
struct TestPassed {
  std::string case_id;
  bool operator==(const TestPassed&) const = default;
};
struct TestFailed {
  std::string case_id;
  testing::AccuracyPayload payload;
  bool operator==(const TestFailed&) const = default;
};
struct RuntimeCrash {
  std::string case_id;
  testing::CrashReport report;
  bool operator==(const RuntimeCrash&) const = default;
};
struct ProtocolError {
  std::string detail;
  bool operator==(const ProtocolError&) const = default;
};

using Request = std::variant<Capabilities, LoadCandidate, RunTest, Shutdown>;
using Response = std::variant<CapabilitiesOk, LoadOk, CompileError, TestPassed,
                              TestFailed, RuntimeCrash, ProtocolError>;

using Body = std::variant<Capabilities, LoadCandidate, RunTest, Shutdown,
                          CapabilitiesOk, LoadOk, CompileError, TestPassed,
                          TestFailed, RuntimeCrash, ProtocolError>;

/// Wire "type" tag, e.g. "run_test" or "test_failed".
std::string_view type_name(const Body& body);

struct Message {
  std::uint64_t id = 0;
  Body body;

  bool operator==(const Message&) const = default;
};

Body to_body(const Request& request);
Body to_body(const Response& response);
bool is_request(const Body& body);
std::optional<Request> as_request(const Body& body);
std::optional<Response> as_response(const Body& body);

/// JSON text {v, id, type, payload} without the length prefix.
std::string encode_body(const Message& message);
/// 4-byte big-endian length prefix followed by the JSON body.
std::string encode_message(const Message& message);

/// Throws Error(kMalformedFrame) or Error(kVersionMismatch).
Message decode_body(std::string_view json_text);
/// Decodes one complete frame. Throws Error(kFrameTooLarge) when the
/// declared length exceeds kMaxFrameBytes and kMalformedFrame when the
/// prefix disagrees with the buffer size.
Message decode_frame(std::string_view frame);

/// Reads the prefix alone; throws kFrameTooLarge.
std::uint32_t frame_length(const unsigned char prefix[4]);

using Clock = std::chrono::steady_clock;

/// A bidirectional byte channel backed by file descriptors. Reads honor a
/// deadline. Peer hang-up, write failure and deadline expiry all surface as
/// Error(kWorkerLost): a worker that stops answering is treated as dead.
class FdStream {
 public:
  FdStream(int read_fd, int write_fd, bool owns = true);
  ~FdStream();
  FdStream(const FdStream&) = delete;
  FdStream& operator=(const FdStream&) = delete;

  void write_all(std::string_view bytes);
  void read_exact(char* out, std::size_t n, Clock::time_point deadline);
  void close();

  int read_fd() const { return read_fd_; }
  int write_fd() const { return write_fd_; }

 private:
  int read_fd_;
  int write_fd_;
  bool owns_;
};

/// Blocking frame I/O on top of an FdStream.
void write_message(FdStream& stream, const Message& message);
Message read_message(FdStream& stream, Clock::time_point deadline);

/// Connected socket pair for in-process transports.
std::pair<std::unique_ptr<FdStream>, std::unique_ptr<FdStream>> make_stream_pair();

/// TCP helpers. listen_tcp binds 127.0.0.1 on `port` (0 picks one) and
/// returns {listen_fd, bound_port}.
std::unique_ptr<FdStream> connect_tcp(const std::string& host, int port,
                                      std::chrono::milliseconds timeout);
std::pair<int, int> listen_tcp(int port);
std::unique_ptr<FdStream> accept_tcp(int listen_fd);

}  // namespace opforge::protocol
