// Scripted stand-in for the execution worker. Speaks the worker protocol
// over stdio or TCP and answers from a mock script instead of running code.

#include <unistd.h>

#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "opforge/error.hpp"
#include "opforge/mock_worker.hpp"
#include "opforge/util.hpp"

namespace proto = opforge::protocol;

int main(int argc, char** argv) {
  CLI::App app{"opforge mock execution worker"};
  std::string transport = "stdio";
  std::string backend = "mock";
  std::string script_path;
  app.add_option("--transport", transport, "stdio or tcp:PORT");
  app.add_option("--backend", backend, "jit, interpreter or mock");
  app.add_option("--mock-script", script_path, "outcome script (JSON)");
  CLI11_PARSE(app, argc, argv);

  if (backend != "mock") {
    std::cerr << "opforge-mock-worker: backend '" << backend
              << "' needs the Python worker; only 'mock' is available here\n";
    return 2;
  }

  proto::MockScript script;
  try {
    if (!script_path.empty()) {
      script = proto::load_mock_script(opforge::util::read_file(script_path));
    }
  } catch (const opforge::Error& e) {
    std::cerr << "opforge-mock-worker: " << e.what() << "\n";
    return 2;
  }

  std::unique_ptr<proto::FdStream> stream;
  try {
    if (transport == "stdio") {
      stream = std::make_unique<proto::FdStream>(STDIN_FILENO, STDOUT_FILENO, false);
    } else if (transport.rfind("tcp:", 0) == 0) {
      const int port = std::stoi(transport.substr(4));
      auto [listen_fd, bound] = proto::listen_tcp(port);
      (void)bound;
      stream = proto::accept_tcp(listen_fd);
      ::close(listen_fd);
    } else {
      std::cerr << "opforge-mock-worker: unknown transport '" << transport << "'\n";
      return 2;
    }
  } catch (const std::exception& e) {
    std::cerr << "opforge-mock-worker: " << e.what() << "\n";
    return 2;
  }

  proto::MockWorkerEngine engine(std::move(script));
  const auto directive = proto::serve(*stream, engine);
  if (directive == proto::MockWorkerEngine::Directive::kDie) {
    // Simulates a hard crash: no reply, no cleanup.
    ::_exit(137);
  }
  return 0;
}
