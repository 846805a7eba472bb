#include <gtest/gtest.h>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <atomic>
#include <chrono>
#include <fstream>
#include <functional>
#include <thread>

#include "opforge/error.hpp"
#include "opforge/worker_pool.hpp"
#include "test_support.hpp"

namespace p = opforge::protocol;
namespace t = opforge::testing;
using namespace std::chrono_literals;
using opforge::Error;
using opforge::ErrorCode;

namespace {

p::WorkerSpec in_process(const std::string& script_json = "{}") {
  p::WorkerSpec spec;
  spec.kind = p::WorkerSpec::Kind::kInProcess;
  spec.in_process_script = p::load_mock_script(script_json);
  return spec;
}

#ifdef OPFORGE_MOCK_WORKER
p::WorkerSpec subprocess(const std::string& script_path = "", bool tcp = false) {
  p::WorkerSpec spec;
  spec.kind = p::WorkerSpec::Kind::kSubprocess;
  spec.command = {OPFORGE_MOCK_WORKER};
  spec.mock_script_path = script_path;
  spec.use_tcp = tcp;
  return spec;
}
#endif

t::TestCase one_case() {
  return t::make_opinfo_plan("exp", {opforge::Dtype::kFloat32}, 1).cases.front();
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInvalidArgument;
}

}  // namespace

TEST(WorkerSpec, SpawnArgvFollowsContract) {
  p::WorkerSpec spec;
  spec.command = {"python3", "-m", "opforge_worker"};
  spec.backend = p::Backend::kInterpreter;
  spec.mock_script_path = "s.json";
  EXPECT_EQ(spec.spawn_argv("tcp:9000"),
            (std::vector<std::string>{"python3", "-m", "opforge_worker", "--transport",
                                      "tcp:9000", "--backend", "interpreter",
                                      "--mock-script", "s.json"}));
  spec.mock_script_path.clear();
  EXPECT_EQ(spec.spawn_argv("stdio").size(), 7u);
}

TEST(WorkerPool, LeaseIsAnnotatedWithBackend) {
  p::WorkerPool pool({in_process()});
  auto lease = pool.lease();
  EXPECT_EQ(lease.backend(), p::Backend::kMock);
  auto r = lease->load_candidate("def wrapper(x):\n    return x\n");
  EXPECT_TRUE(std::holds_alternative<p::LoadOk>(r));
  r = lease->run_test(one_case(), t::default_tolerances());
  EXPECT_TRUE(std::holds_alternative<p::TestPassed>(r));
}

TEST(WorkerPool, FifthLeaseWaitsForRelease) {
  p::WorkerPool pool({in_process(), in_process(), in_process(), in_process()});
  std::vector<p::WorkerLease> held;
  for (int i = 0; i < 4; ++i) held.push_back(pool.lease());
  std::atomic<bool> got{false};
  std::thread waiter([&] {
    auto lease = pool.lease();
    got = true;
  });
  std::this_thread::sleep_for(100ms);
  EXPECT_FALSE(got.load());
  held.pop_back();
  waiter.join();
  EXPECT_TRUE(got.load());
}

TEST(WorkerPool, LeaseTimesOutWithPoolExhausted) {
  p::PoolOptions options;
  options.lease_timeout = 50ms;
  p::WorkerPool pool({in_process()}, options);
  auto held = pool.lease();
  EXPECT_EQ(code_of([&] { pool.lease(); }), ErrorCode::kPoolExhausted);
}

TEST(WorkerPool, RunTestBeforeLoadIsAnsweredNotFatal) {
  p::WorkerPool pool({in_process()});
  auto lease = pool.lease();
  auto r = lease->run_test(one_case(), t::default_tolerances());
  EXPECT_TRUE(std::holds_alternative<p::ProtocolError>(r));
  EXPECT_TRUE(lease->alive());
}

TEST(WorkerPool, DyingInProcessWorkerIsLostThenReplaced) {
  p::WorkerPool pool({in_process(R"({"rules":[{"when":"load","match":"DIE","action":"die"}]})")});
  {
    auto lease = pool.lease();
    EXPECT_EQ(code_of([&] { lease->load_candidate("DIE"); }), ErrorCode::kWorkerLost);
    EXPECT_FALSE(lease->alive());
  }
  auto lease = pool.lease();
  EXPECT_TRUE(lease->alive());
  EXPECT_EQ(pool.restarts(), 1);
}

TEST(WorkerPool, HungWorkerTimesOut) {
  p::PoolOptions options;
  options.compile_timeout = 100ms;
  p::WorkerPool pool({in_process(R"({"rules":[{"when":"load","match":"HANG","action":"hang"}]})")},
                     options);
  auto lease = pool.lease();
  const auto start = std::chrono::steady_clock::now();
  EXPECT_EQ(code_of([&] { lease->load_candidate("HANG"); }), ErrorCode::kWorkerLost);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(WorkerPool, RestartCapBreaksSlots) {
  p::PoolOptions options;
  options.restart_cap = 1;
  p::WorkerPool pool({in_process(R"({"rules":[{"when":"load","match":"DIE","action":"die"}]})")},
                     options);
  for (int i = 0; i < 2; ++i) {
    auto lease = pool.lease();
    EXPECT_THROW(lease->load_candidate("DIE"), Error);
  }
  EXPECT_EQ(code_of([&] { pool.lease(); }), ErrorCode::kWorkerSpawnFailed);
}

TEST(WorkerPool, EmptySpecListRejected) {
  EXPECT_THROW(p::WorkerPool({}), Error);
}

TEST(WorkerPool, MissingExecutableIsSpawnFailure) {
  p::WorkerSpec spec;
  spec.kind = p::WorkerSpec::Kind::kSubprocess;
  spec.command = {"/nonexistent/opforge-worker"};
  p::PoolOptions options;
  options.restart_cap = 0;
  p::WorkerPool pool({spec}, options);
  EXPECT_EQ(code_of([&] { pool.lease(); }), ErrorCode::kWorkerSpawnFailed);
}

#ifdef OPFORGE_MOCK_WORKER

TEST(WorkerProcess, StdioWorkerServesRequests) {
  p::WorkerPool pool({subprocess()});
  auto lease = pool.lease();
  EXPECT_EQ(lease.backend(), p::Backend::kMock);
  EXPECT_GT(lease->pid(), 0);
  EXPECT_TRUE(std::holds_alternative<p::LoadOk>(lease->load_candidate("def wrapper(): pass")));
  EXPECT_TRUE(std::holds_alternative<p::TestPassed>(
      lease->run_test(one_case(), t::default_tolerances())));
}

TEST(WorkerProcess, TcpWorkerServesRequests) {
  p::WorkerPool pool({subprocess("", true)});
  auto lease = pool.lease();
  EXPECT_TRUE(std::holds_alternative<p::LoadOk>(lease->load_candidate("def wrapper(): pass")));
}

TEST(WorkerProcess, RemoteSpecConnectsToRunningWorker) {
  // Stand up a worker by hand, then point a remote spec at it.
  const int port = [] {
    auto [fd, bound] = p::listen_tcp(0);
    ::close(fd);
    return bound;
  }();
  auto spec = subprocess("", true);
  const auto argv = spec.spawn_argv("tcp:" + std::to_string(port));
  std::vector<char*> cargv;
  for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
  cargv.push_back(nullptr);
  const pid_t pid = ::fork();
  if (pid == 0) {
    ::execv(cargv[0], cargv.data());
    ::_exit(127);
  }
  p::WorkerSpec remote;
  remote.kind = p::WorkerSpec::Kind::kRemote;
  remote.port = port;
  {
    p::WorkerPool pool({remote});
    auto lease = pool.lease();
    EXPECT_EQ(lease.backend(), p::Backend::kMock);
  }
  ::kill(pid, SIGKILL);
  ::waitpid(pid, nullptr, 0);
}

TEST(WorkerProcess, UnsupportedBackendFailsToSpawn) {
  auto spec = subprocess();
  spec.backend = p::Backend::kJit;
  p::PoolOptions options;
  options.restart_cap = 0;
  p::WorkerPool pool({spec}, options);
  EXPECT_EQ(code_of([&] { pool.lease(); }), ErrorCode::kWorkerSpawnFailed);
}

TEST(WorkerProcess, KillAtEveryProtocolStepIsContained) {
  // Kill the worker process before each step in turn; the caller must see
  // WorkerLost and the pool must hand out a fresh worker afterwards.
  for (int step = 0; step < 3; ++step) {
    p::WorkerPool pool({subprocess()});
    {
      auto lease = pool.lease();
      const int pid = lease->pid();
      ASSERT_GT(pid, 0);
      auto kill_now = [&] {
        ::kill(pid, SIGKILL);
        std::this_thread::sleep_for(20ms);
      };
      ErrorCode code = ErrorCode::kInvalidArgument;
      try {
        if (step == 0) kill_now();
        lease->load_candidate("def wrapper(): pass");
        if (step == 1) kill_now();
        lease->run_test(one_case(), t::default_tolerances());
        if (step == 2) kill_now();
        lease->capabilities();
      } catch (const Error& e) {
        code = e.code();
      }
      EXPECT_EQ(code, ErrorCode::kWorkerLost) << "step " << step;
    }
    auto lease = pool.lease();
    EXPECT_TRUE(std::holds_alternative<p::LoadOk>(lease->load_candidate("def wrapper(): pass")));
    EXPECT_EQ(pool.restarts(), 1);
  }
}

TEST(WorkerProcess, ScriptedDeathIsWorkerLost) {
  opforge::testkit::TempDir dir;
  const auto script = dir.path() / "die.json";
  std::ofstream(script) << R"({"rules":[{"when":"test","match":"DIE","action":"die"}]})";
  p::WorkerPool pool({subprocess(script.string())});
  auto lease = pool.lease();
  ASSERT_TRUE(std::holds_alternative<p::LoadOk>(lease->load_candidate("DIE\ndef wrapper(): pass")));
  EXPECT_EQ(code_of([&] { lease->run_test(one_case(), t::default_tolerances()); }),
            ErrorCode::kWorkerLost);
}

TEST(WorkerProcess, IdleWorkerKilledBetweenLeasesIsRespawned) {
  p::WorkerPool pool({subprocess()});
  int first_pid = 0;
  {
    auto lease = pool.lease();
    first_pid = lease->pid();
  }
  ::kill(first_pid, SIGKILL);
  std::this_thread::sleep_for(20ms);
  auto lease = pool.lease();
  EXPECT_NE(lease->pid(), first_pid);
  EXPECT_EQ(pool.restarts(), 1);
}

#endif
