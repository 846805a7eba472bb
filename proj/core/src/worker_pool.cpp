#include "opforge/worker_pool.hpp"

#include <fcntl.h>
#include <signal.h>
#include <spawn.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <thread>

#include "opforge/error.hpp"

extern char** environ;

namespace opforge::protocol {

std::vector<std::string> WorkerSpec::spawn_argv(const std::string& transport) const {
  std::vector<std::string> argv = command;
  argv.push_back("--transport");
  argv.push_back(transport);
  argv.push_back("--backend");
  argv.push_back(std::string(to_string(backend)));
  if (!mock_script_path.empty()) {
    argv.push_back("--mock-script");
    argv.push_back(mock_script_path);
  }
  return argv;
}

/// Transport plus whatever owns the other end (child process or thread).
class WorkerConnection {
 public:
  std::unique_ptr<FdStream> stream;
  pid_t pid = -1;
  std::thread server;

  ~WorkerConnection() { terminate(); }

  void terminate() {
    if (stream) {
      // Wakes a server thread blocked on the shared socket.
      if (stream->read_fd() >= 0) ::shutdown(stream->read_fd(), SHUT_RDWR);
      stream->close();
    }
    if (pid > 0) {
      ::kill(pid, SIGKILL);
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      pid = -1;
    }
    if (server.joinable()) server.join();
  }

  void shutdown_gracefully() {
    if (!stream) return;
    try {
      write_message(*stream, {0, Shutdown{}});
    } catch (const Error&) {
    }
    if (pid > 0) {
      // Give a cooperative worker a moment to exit before SIGKILL.
      for (int i = 0; i < 20; ++i) {
        int status = 0;
        const pid_t r = ::waitpid(pid, &status, WNOHANG);
        if (r == pid) {
          pid = -1;
          break;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
      }
    }
    terminate();
  }
};

namespace {

[[noreturn]] void spawn_failed(const std::string& what) {
  throw Error(ErrorCode::kWorkerSpawnFailed, what);
}

pid_t spawn_process(const std::vector<std::string>& argv, int stdin_fd, int stdout_fd) {
  if (argv.empty()) spawn_failed("empty worker command");
  posix_spawn_file_actions_t actions;
  posix_spawn_file_actions_init(&actions);
  if (stdin_fd >= 0) posix_spawn_file_actions_adddup2(&actions, stdin_fd, STDIN_FILENO);
  if (stdout_fd >= 0) posix_spawn_file_actions_adddup2(&actions, stdout_fd, STDOUT_FILENO);
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  pid_t pid = -1;
  const int rc = ::posix_spawnp(&pid, cargv[0], &actions, nullptr, cargv.data(), environ);
  posix_spawn_file_actions_destroy(&actions);
  if (rc != 0) spawn_failed("cannot spawn " + argv[0] + ": " + std::strerror(rc));
  return pid;
}

int free_tcp_port() {
  auto [fd, port] = listen_tcp(0);
  ::close(fd);
  return port;
}

std::unique_ptr<WorkerConnection> connect(const WorkerSpec& spec,
                                          const PoolOptions& options) {
  auto conn = std::make_unique<WorkerConnection>();
  switch (spec.kind) {
    case WorkerSpec::Kind::kInProcess: {
      auto [ours, theirs] = make_stream_pair();
      conn->stream = std::move(ours);
      conn->server = std::thread(
          [stream = std::move(theirs), script = spec.in_process_script]() mutable {
            MockWorkerEngine engine(std::move(script));
            serve(*stream, engine);
            if (stream->read_fd() >= 0) ::shutdown(stream->read_fd(), SHUT_RDWR);
          });
      break;
    }
    case WorkerSpec::Kind::kRemote:
      try {
        conn->stream = connect_tcp(spec.host, spec.port, options.health_timeout);
      } catch (const Error& e) {
        spawn_failed(e.what());
      }
      break;
    case WorkerSpec::Kind::kSubprocess:
      if (spec.use_tcp) {
        const int port = free_tcp_port();
        conn->pid = spawn_process(spec.spawn_argv("tcp:" + std::to_string(port)), -1, -1);
        try {
          conn->stream = connect_tcp("127.0.0.1", port, options.health_timeout);
        } catch (const Error& e) {
          conn->terminate();
          spawn_failed(e.what());
        }
      } else {
        int to_child[2];
        int from_child[2];
        if (::pipe2(to_child, O_CLOEXEC) != 0) spawn_failed("pipe failed");
        if (::pipe2(from_child, O_CLOEXEC) != 0) {
          ::close(to_child[0]);
          ::close(to_child[1]);
          spawn_failed("pipe failed");
        }
        try {
          conn->pid = spawn_process(spec.spawn_argv("stdio"), to_child[0], from_child[1]);
        } catch (...) {
          for (int fd : {to_child[0], to_child[1], from_child[0], from_child[1]}) ::close(fd);
          throw;
        }
        ::close(to_child[0]);
        ::close(from_child[1]);
        conn->stream = std::make_unique<FdStream>(from_child[0], to_child[1]);
      }
      break;
  }
  return conn;
}

}  // namespace

WorkerHandle::WorkerHandle(const WorkerSpec& spec, const PoolOptions& options)
    : conn_(connect(spec, options)), options_(options) {
  try {
    backend_ = capabilities().backend;
  } catch (const Error& e) {
    kill();
    spawn_failed(std::string("worker failed its first health check: ") + e.what());
  }
}

WorkerHandle::~WorkerHandle() {
  if (conn_) conn_->shutdown_gracefully();
}

int WorkerHandle::pid() const { return conn_ ? conn_->pid : -1; }

void WorkerHandle::kill() {
  alive_ = false;
  if (conn_) conn_->terminate();
}

Response WorkerHandle::request(const Request& request, std::chrono::milliseconds timeout) {
  if (!alive_) throw Error(ErrorCode::kWorkerLost, "worker is no longer running");
  const std::uint64_t id = next_id_++;
  try {
    write_message(*conn_->stream, {id, to_body(request)});
    Message reply = read_message(*conn_->stream, Clock::now() + timeout);
    auto response = as_response(reply.body);
    if (!response) {
      throw Error(ErrorCode::kMalformedFrame, "worker sent a request-typed message");
    }
    const bool unattributed_error =
        reply.id == 0 && std::holds_alternative<ProtocolError>(*response);
    if (reply.id != id && !unattributed_error) {
      throw Error(ErrorCode::kMalformedFrame, "response id " + std::to_string(reply.id) +
                                                  " does not match request " +
                                                  std::to_string(id));
    }
    return *response;
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::kWorkerLost:
      case ErrorCode::kMalformedFrame:
      case ErrorCode::kVersionMismatch:
      case ErrorCode::kFrameTooLarge:
        kill();
        throw Error(ErrorCode::kWorkerLost, e.what());
      default:
        throw;
    }
  }
}

CapabilitiesOk WorkerHandle::capabilities() {
  Response r = request(Capabilities{}, options_.health_timeout);
  if (const auto* ok = std::get_if<CapabilitiesOk>(&r)) return *ok;
  kill();
  throw Error(ErrorCode::kWorkerLost, "unexpected reply to capabilities");
}

Response WorkerHandle::load_candidate(const std::string& module_source) {
  return request(LoadCandidate{module_source}, options_.compile_timeout);
}

Response WorkerHandle::run_test(const testing::TestCase& test_case,
                                const testing::TolerancePolicy& policy) {
  return request(RunTest{test_case, policy}, options_.test_timeout);
}

WorkerLease::WorkerLease(WorkerPool* pool, std::size_t slot, WorkerHandle* handle)
    : pool_(pool), slot_(slot), handle_(handle) {}

WorkerLease::WorkerLease(WorkerLease&& other) noexcept
    : pool_(other.pool_), slot_(other.slot_), handle_(other.handle_) {
  other.pool_ = nullptr;
  other.handle_ = nullptr;
}

WorkerLease& WorkerLease::operator=(WorkerLease&& other) noexcept {
  if (this != &other) {
    release();
    pool_ = other.pool_;
    slot_ = other.slot_;
    handle_ = other.handle_;
    other.pool_ = nullptr;
    other.handle_ = nullptr;
  }
  return *this;
}

WorkerLease::~WorkerLease() { release(); }

void WorkerLease::release() {
  if (pool_) pool_->give_back(slot_);
  pool_ = nullptr;
  handle_ = nullptr;
}

WorkerPool::WorkerPool(std::vector<WorkerSpec> specs, PoolOptions options)
    : options_(options) {
  if (specs.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "worker pool needs at least one worker spec");
  }
  for (auto& spec : specs) slots_.push_back(Slot{std::move(spec), nullptr});
}

WorkerPool::~WorkerPool() { shutdown(); }

void WorkerPool::shutdown() {
  std::vector<std::unique_ptr<WorkerHandle>> doomed;
  {
    std::lock_guard lock(mutex_);
    for (auto& slot : slots_) {
      if (!slot.leased && slot.handle) doomed.push_back(std::move(slot.handle));
    }
  }
  doomed.clear();
}

int WorkerPool::restarts() const {
  std::lock_guard lock(mutex_);
  return restarts_;
}

std::vector<int> WorkerPool::worker_pids() const {
  std::lock_guard lock(mutex_);
  std::vector<int> pids;
  for (const auto& slot : slots_) {
    if (slot.handle && slot.handle->pid() > 0) pids.push_back(slot.handle->pid());
  }
  return pids;
}

WorkerHandle* WorkerPool::prepare(Slot& slot, std::unique_lock<std::mutex>& lock) {
  while (true) {
    if (slot.handle && slot.handle->alive()) {
      WorkerHandle* handle = slot.handle.get();
      lock.unlock();
      bool healthy = true;
      try {
        handle->capabilities();
      } catch (const Error&) {
        healthy = false;
      }
      lock.lock();
      if (healthy) return handle;
    }
    std::unique_ptr<WorkerHandle> dead = std::move(slot.handle);
    if (slot.started) {
      if (restarts_ >= options_.restart_cap) {
        slot.broken = true;
        slot.leased = false;
        lock.unlock();
        dead.reset();
        lock.lock();
        cv_.notify_all();
        return nullptr;
      }
      ++restarts_;
    }
    slot.started = true;
    lock.unlock();
    dead.reset();
    std::unique_ptr<WorkerHandle> fresh;
    try {
      fresh = std::make_unique<WorkerHandle>(slot.spec, options_);
    } catch (const Error&) {
    }
    lock.lock();
    if (fresh) {
      slot.handle = std::move(fresh);
      return slot.handle.get();
    }
  }
}

WorkerLease WorkerPool::lease() {
  std::unique_lock lock(mutex_);
  const auto deadline = Clock::now() + options_.lease_timeout;
  while (true) {
    bool any_usable = false;
    std::optional<std::size_t> pick;
    for (std::size_t i = 0; i < slots_.size(); ++i) {
      if (slots_[i].broken) continue;
      any_usable = true;
      if (slots_[i].leased) continue;
      // Prefer warm workers over cold slots.
      if (!pick || (slots_[i].handle && !slots_[*pick].handle)) pick = i;
    }
    if (!any_usable) {
      throw Error(ErrorCode::kWorkerSpawnFailed,
                  "every worker slot failed and the restart cap is reached");
    }
    if (pick) {
      Slot& slot = slots_[*pick];
      slot.leased = true;
      if (WorkerHandle* handle = prepare(slot, lock)) {
        return WorkerLease(this, *pick, handle);
      }
      continue;
    }
    if (cv_.wait_until(lock, deadline) == std::cv_status::timeout) {
      throw Error(ErrorCode::kPoolExhausted, "no worker became available within the lease timeout");
    }
  }
}

void WorkerPool::give_back(std::size_t slot) {
  {
    std::lock_guard lock(mutex_);
    slots_[slot].leased = false;
  }
  cv_.notify_one();
}

}  // namespace opforge::protocol
