#include "opforge/protocol.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <mutex>

#include <nlohmann/json.hpp>

#include "opforge/error.hpp"

namespace opforge::protocol {

using nlohmann::json;

namespace {

[[noreturn]] void malformed(const std::string& what) {
  throw Error(ErrorCode::kMalformedFrame, "malformed frame: " + what);
}

[[noreturn]] void lost(const std::string& what) {
  throw Error(ErrorCode::kWorkerLost, what);
}

void ignore_sigpipe() {
  static std::once_flag once;
  std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

// Index order of Body alternatives.
constexpr std::string_view kTypeNames[] = {
    "capabilities",    "load_candidate", "run_test",      "shutdown",
    "capabilities_ok", "load_ok",        "compile_error", "test_passed",
    "test_failed",     "runtime_crash",  "protocol_error"};
constexpr std::size_t kRequestCount = 4;

template <std::size_t I = 0>
Body body_for_index(std::size_t index) {
  if constexpr (I < std::variant_size_v<Body>) {
    if (index == I) return Body(std::in_place_index<I>);
    return body_for_index<I + 1>(index);
  } else {
    malformed("type index out of range");
  }
}

const json& member(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) malformed(std::string("payload missing '") + key + "'");
  return *it;
}

std::string string_member(const json& j, const char* key) {
  const json& v = member(j, key);
  if (!v.is_string()) malformed(std::string("'") + key + "' must be a string");
  return v.get<std::string>();
}

json payload_of(const Body& body) {
  return std::visit(
      [](const auto& b) -> json {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, LoadCandidate>) {
          return {{"module_source", b.module_source}};
        } else if constexpr (std::is_same_v<T, RunTest>) {
          return {{"case", testing::to_json(b.test_case)},
                  {"policy", testing::to_json(b.policy)}};
        } else if constexpr (std::is_same_v<T, CapabilitiesOk>) {
          json dtypes = json::array();
          for (Dtype d : b.dtypes) dtypes.push_back(to_string(d));
          return {{"backend", to_string(b.backend)}, {"dtypes", std::move(dtypes)}};
        } else if constexpr (std::is_same_v<T, CompileError>) {
          return {{"log", b.log}};
        } else if constexpr (std::is_same_v<T, TestPassed>) {
          return {{"case_id", b.case_id}};
        } else if constexpr (std::is_same_v<T, TestFailed>) {
          return {{"case_id", b.case_id}, {"payload", testing::to_json(b.payload)}};
        } else if constexpr (std::is_same_v<T, RuntimeCrash>) {
          return {{"case_id", b.case_id}, {"report", testing::to_json(b.report)}};
        } else if constexpr (std::is_same_v<T, ProtocolError>) {
          return {{"detail", b.detail}};
        } else {
          return json::object();
        }
      },
      body);
}

void fill_payload(Body& body, const json& p) {
  std::visit(
      [&](auto& b) {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_same_v<T, LoadCandidate>) {
          b.module_source = string_member(p, "module_source");
        } else if constexpr (std::is_same_v<T, RunTest>) {
          b.test_case = testing::test_case_from_json(member(p, "case"));
          b.policy = testing::tolerance_policy_from_json(member(p, "policy"));
        } else if constexpr (std::is_same_v<T, CapabilitiesOk>) {
          auto backend = parse_backend(string_member(p, "backend"));
          if (!backend) malformed("unknown backend");
          b.backend = *backend;
          const json& dtypes = member(p, "dtypes");
          if (!dtypes.is_array()) malformed("'dtypes' must be an array");
          for (const auto& d : dtypes) {
            auto dt = d.is_string() ? parse_dtype(d.get<std::string>()) : std::nullopt;
            if (!dt) malformed("unknown dtype " + d.dump());
            b.dtypes.insert(*dt);
          }
        } else if constexpr (std::is_same_v<T, CompileError>) {
          b.log = string_member(p, "log");
        } else if constexpr (std::is_same_v<T, TestPassed>) {
          b.case_id = string_member(p, "case_id");
        } else if constexpr (std::is_same_v<T, TestFailed>) {
          b.case_id = string_member(p, "case_id");
          b.payload = testing::accuracy_payload_from_json(member(p, "payload"));
        } else if constexpr (std::is_same_v<T, RuntimeCrash>) {
          b.case_id = string_member(p, "case_id");
          b.report = testing::crash_report_from_json(member(p, "report"));
        } else if constexpr (std::is_same_v<T, ProtocolError>) {
          b.detail = string_member(p, "detail");
        }
      },
      body);
}

}  // namespace

std::string_view to_string(Backend backend) {
  switch (backend) {
    case Backend::kJit: return "jit";
    case Backend::kInterpreter: return "interpreter";
    case Backend::kMock: return "mock";
  }
  return "mock";
}

std::optional<Backend> parse_backend(std::string_view name) {
  if (name == "jit") return Backend::kJit;
  if (name == "interpreter") return Backend::kInterpreter;
  if (name == "mock") return Backend::kMock;
  return std::nullopt;
}

std::string_view type_name(const Body& body) { return kTypeNames[body.index()]; }

Body to_body(const Request& request) {
  return std::visit([](const auto& r) -> Body { return r; }, request);
}

Body to_body(const Response& response) {
  return std::visit([](const auto& r) -> Body { return r; }, response);
}

bool is_request(const Body& body) { return body.index() < kRequestCount; }

std::optional<Request> as_request(const Body& body) {
  return std::visit(
      [](const auto& b) -> std::optional<Request> {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_constructible_v<Request, T>) {
          return Request(b);
        } else {
          return std::nullopt;
        }
      },
      body);
}

std::optional<Response> as_response(const Body& body) {
  return std::visit(
      [](const auto& b) -> std::optional<Response> {
        using T = std::decay_t<decltype(b)>;
        if constexpr (std::is_constructible_v<Response, T>) {
          return Response(b);
        } else {
          return std::nullopt;
        }
      },
      body);
}

std::string encode_body(const Message& message) {
  json j = {{"v", kProtocolVersion},
            {"id", message.id},
            {"type", type_name(message.body)},
            {"payload", payload_of(message.body)}};
  return j.dump(-1, ' ', false, json::error_handler_t::replace);
}

std::string encode_message(const Message& message) {
  const std::string body = encode_body(message);
  if (body.size() > kMaxFrameBytes) {
    throw Error(ErrorCode::kFrameTooLarge,
                "frame of " + std::to_string(body.size()) + " bytes exceeds limit");
  }
  const auto n = static_cast<std::uint32_t>(body.size());
  std::string out;
  out.reserve(body.size() + 4);
  out.push_back(static_cast<char>((n >> 24) & 0xff));
  out.push_back(static_cast<char>((n >> 16) & 0xff));
  out.push_back(static_cast<char>((n >> 8) & 0xff));
  out.push_back(static_cast<char>(n & 0xff));
  out += body;
  return out;
}

Message decode_body(std::string_view json_text) {
  try {
    const json j = json::parse(json_text);
    if (!j.is_object()) malformed("body is not an object");
    auto v = j.find("v");
    if (v == j.end()) malformed("missing 'v'");
    if (!v->is_number_integer()) malformed("'v' must be an integer");
    if (v->get<std::int64_t>() != kProtocolVersion) {
      throw Error(ErrorCode::kVersionMismatch,
                  "unsupported protocol version " + v->dump());
    }
    auto id = j.find("id");
    if (id == j.end() || !id->is_number_unsigned()) {
      if (id == j.end() || !id->is_number_integer() || id->get<std::int64_t>() < 0) {
        malformed("'id' must be a non-negative integer");
      }
    }
    auto type = j.find("type");
    if (type == j.end() || !type->is_string()) malformed("'type' must be a string");
    const auto& name = type->get_ref<const std::string&>();
    std::size_t index = std::size(kTypeNames);
    for (std::size_t i = 0; i < std::size(kTypeNames); ++i) {
      if (kTypeNames[i] == name) index = i;
    }
    if (index == std::size(kTypeNames)) malformed("unknown type '" + name + "'");
    auto payload = j.find("payload");
    if (payload == j.end() || !payload->is_object()) malformed("'payload' must be an object");

    Message m;
    m.id = id->get<std::uint64_t>();
    m.body = body_for_index(index);
    fill_payload(m.body, *payload);
    return m;
  } catch (const json::exception& e) {
    malformed(e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kParseError || e.code() == ErrorCode::kInvalidArgument) {
      malformed(e.what());
    }
    throw;
  }
}

std::uint32_t frame_length(const unsigned char prefix[4]) {
  const std::uint32_t n = (std::uint32_t{prefix[0]} << 24) |
                          (std::uint32_t{prefix[1]} << 16) |
                          (std::uint32_t{prefix[2]} << 8) | std::uint32_t{prefix[3]};
  if (n > kMaxFrameBytes) {
    throw Error(ErrorCode::kFrameTooLarge,
                "declared frame length " + std::to_string(n) + " exceeds limit");
  }
  return n;
}

Message decode_frame(std::string_view frame) {
  if (frame.size() < 4) malformed("shorter than the length prefix");
  unsigned char prefix[4];
  std::memcpy(prefix, frame.data(), 4);
  const auto n = frame_length(prefix);
  if (frame.size() - 4 != n) {
    malformed("prefix declares " + std::to_string(n) + " bytes, buffer holds " +
              std::to_string(frame.size() - 4));
  }
  return decode_body(frame.substr(4));
}

FdStream::FdStream(int read_fd, int write_fd, bool owns)
    : read_fd_(read_fd), write_fd_(write_fd), owns_(owns) {
  ignore_sigpipe();
}

FdStream::~FdStream() { close(); }

void FdStream::close() {
  if (owns_) {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
  }
  read_fd_ = -1;
  write_fd_ = -1;
}

void FdStream::write_all(std::string_view bytes) {
  if (write_fd_ < 0) lost("stream closed");
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(write_fd_, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      lost(std::string("write failed: ") + std::strerror(errno));
    }
    done += static_cast<std::size_t>(n);
  }
}

void FdStream::read_exact(char* out, std::size_t n, Clock::time_point deadline) {
  if (read_fd_ < 0) lost("stream closed");
  std::size_t done = 0;
  while (done < n) {
    int timeout_ms = -1;
    if (deadline != Clock::time_point::max()) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(
          deadline - Clock::now());
      if (left.count() <= 0) lost("timed out waiting for worker response");
      timeout_ms = static_cast<int>(std::min<long long>(left.count(), 1 << 30));
    }
    pollfd pfd{read_fd_, POLLIN, 0};
    const int ready = ::poll(&pfd, 1, timeout_ms);
    if (ready < 0) {
      if (errno == EINTR) continue;
      lost(std::string("poll failed: ") + std::strerror(errno));
    }
    if (ready == 0) continue;
    const ssize_t got = ::read(read_fd_, out + done, n - done);
    if (got < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      lost(std::string("read failed: ") + std::strerror(errno));
    }
    if (got == 0) lost("peer closed the stream");
    done += static_cast<std::size_t>(got);
  }
}

void write_message(FdStream& stream, const Message& message) {
  stream.write_all(encode_message(message));
}

Message read_message(FdStream& stream, Clock::time_point deadline) {
  unsigned char prefix[4];
  stream.read_exact(reinterpret_cast<char*>(prefix), 4, deadline);
  const auto n = frame_length(prefix);
  std::string body(n, '\0');
  stream.read_exact(body.data(), n, deadline);
  return decode_body(body);
}

std::pair<std::unique_ptr<FdStream>, std::unique_ptr<FdStream>> make_stream_pair() {
  int fds[2];
  if (::socketpair(AF_UNIX, SOCK_STREAM | SOCK_CLOEXEC, 0, fds) != 0) {
    throw Error(ErrorCode::kTransportError,
                std::string("socketpair failed: ") + std::strerror(errno));
  }
  return {std::make_unique<FdStream>(fds[0], fds[0]),
          std::make_unique<FdStream>(fds[1], fds[1])};
}

std::unique_ptr<FdStream> connect_tcp(const std::string& host, int port,
                                      std::chrono::milliseconds timeout) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  const std::string service = std::to_string(port);
  if (::getaddrinfo(host.c_str(), service.c_str(), &hints, &res) != 0 || !res) {
    throw Error(ErrorCode::kTransportError, "cannot resolve " + host);
  }
  const auto deadline = Clock::now() + timeout;
  std::string last_error = "no addresses";
  // Retries cover a worker that is still binding its port.
  while (true) {
    for (addrinfo* ai = res; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype | SOCK_CLOEXEC, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) {
        ::freeaddrinfo(res);
        int one = 1;
        ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
        return std::make_unique<FdStream>(fd, fd);
      }
      last_error = std::strerror(errno);
      ::close(fd);
    }
    if (Clock::now() >= deadline) break;
    ::usleep(20000);
  }
  ::freeaddrinfo(res);
  throw Error(ErrorCode::kTransportError,
              "cannot connect to " + host + ":" + service + ": " + last_error);
}

std::pair<int, int> listen_tcp(int port) {
  const int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw Error(ErrorCode::kTransportError, "socket failed");
  int one = 1;
  ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0 ||
      ::listen(fd, 8) != 0) {
    const std::string err = std::strerror(errno);
    ::close(fd);
    throw Error(ErrorCode::kTransportError, "cannot listen on port " +
                                                std::to_string(port) + ": " + err);
  }
  socklen_t len = sizeof addr;
  ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
  return {fd, ntohs(addr.sin_port)};
}

std::unique_ptr<FdStream> accept_tcp(int listen_fd) {
  while (true) {
    const int fd = ::accept4(listen_fd, nullptr, nullptr, SOCK_CLOEXEC);
    if (fd >= 0) return std::make_unique<FdStream>(fd, fd);
    if (errno != EINTR) {
      throw Error(ErrorCode::kTransportError,
                  std::string("accept failed: ") + std::strerror(errno));
    }
  }
}

}  // namespace opforge::protocol
