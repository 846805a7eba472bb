#pragma once

#include <chrono>
#include <condition_variable>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "opforge/mock_worker.hpp"
#include "opforge/protocol.hpp"

namespace opforge::protocol {

/// How to reach one worker slot.
///  kSubprocess: spawn `command` plus the standard worker flags and talk over
///               its stdin/stdout, or over TCP when `use_tcp` is set.
///  kRemote:     connect to an already-running worker at host:port.
///  kInProcess:  run a MockWorkerEngine on a thread over a socket pair.
struct WorkerSpec {
  enum class Kind { kSubprocess, kRemote, kInProcess };

  Kind kind = Kind::kInProcess;
  std::vector<std::string> command;
  Backend backend = Backend::kMock;
  std::string mock_script_path;
  bool use_tcp = false;
  std::string host = "127.0.0.1";
  int port = 0;
  MockScript in_process_script;

  /// Full argv for a subprocess spawn, with `--transport` set to `transport`.
  std::vector<std::string> spawn_argv(const std::string& transport) const;
};

struct PoolOptions {
  std::chrono::milliseconds lease_timeout{std::chrono::minutes(10)};
  std::chrono::milliseconds health_timeout{std::chrono::seconds(30)};
  std::chrono::milliseconds compile_timeout{std::chrono::seconds(300)};
  std::chrono::milliseconds test_timeout{std::chrono::seconds(120)};
  /// Respawns allowed across the whole pool after the initial starts.
  int restart_cap = 16;
};

class WorkerConnection;

/// One live worker. Requests are strictly serial. Any transport failure,
/// timeout or id mismatch kills the worker and throws Error(kWorkerLost).
class WorkerHandle {
 public:
  WorkerHandle(const WorkerSpec& spec, const PoolOptions& options);
  ~WorkerHandle();
  WorkerHandle(const WorkerHandle&) = delete;
  WorkerHandle& operator=(const WorkerHandle&) = delete;

  CapabilitiesOk capabilities();
  Response load_candidate(const std::string& module_source);
  Response run_test(const testing::TestCase& test_case,
                    const testing::TolerancePolicy& policy);
  Response request(const Request& request, std::chrono::milliseconds timeout);

  bool alive() const { return alive_; }
  Backend backend() const { return backend_; }
  /// Child pid for subprocess workers, -1 otherwise.
  int pid() const;
  /// Forcibly terminates the worker (fault injection and teardown).
  void kill();

 private:
  std::unique_ptr<WorkerConnection> conn_;
  PoolOptions options_;
  std::uint64_t next_id_ = 1;
  bool alive_ = true;
  Backend backend_ = Backend::kMock;
};

class WorkerPool;

/// Exclusive use of one worker until destroyed or released.
class WorkerLease {
 public:
  WorkerLease() = default;
  WorkerLease(WorkerPool* pool, std::size_t slot, WorkerHandle* handle);
  WorkerLease(WorkerLease&& other) noexcept;
  WorkerLease& operator=(WorkerLease&& other) noexcept;
  ~WorkerLease();

  WorkerHandle& operator*() const { return *handle_; }
  WorkerHandle* operator->() const { return handle_; }
  explicit operator bool() const { return handle_ != nullptr; }
  Backend backend() const { return handle_->backend(); }
  void release();

 private:
  WorkerPool* pool_ = nullptr;
  std::size_t slot_ = 0;
  WorkerHandle* handle_ = nullptr;
};

/// Fixed set of worker slots shared by sessions. Workers start lazily on
/// first lease, are health-checked with Capabilities before each handout,
/// and dead workers are respawned up to PoolOptions::restart_cap.
class WorkerPool {
 public:
  WorkerPool(std::vector<WorkerSpec> specs, PoolOptions options = {});
  ~WorkerPool();
  WorkerPool(const WorkerPool&) = delete;
  WorkerPool& operator=(const WorkerPool&) = delete;

  /// Throws Error(kPoolExhausted) when no slot frees up within the lease
  /// timeout and Error(kWorkerSpawnFailed) once every slot is unusable.
  WorkerLease lease();

  std::size_t size() const { return slots_.size(); }
  int restarts() const;
  /// Pids of currently running subprocess workers, for fault injection.
  std::vector<int> worker_pids() const;
  void shutdown();

 private:
  friend class WorkerLease;

  struct Slot {
    WorkerSpec spec;
    std::unique_ptr<WorkerHandle> handle;
    bool leased = false;
    bool started = false;
    bool broken = false;
  };

  void give_back(std::size_t slot);
  WorkerHandle* prepare(Slot& slot, std::unique_lock<std::mutex>& lock);

  PoolOptions options_;
  std::vector<Slot> slots_;
  mutable std::mutex mutex_;
  std::condition_variable cv_;
  int restarts_ = 0;
};

}  // namespace opforge::protocol
