// Node daemon: serves one role from a key=value config until SIGINT/SIGTERM.

#include <csignal>
#include <iostream>
#include <thread>

#include "blindvault/node.hpp"

using namespace blindvault;

int main(int argc, char** argv) {
  if (argc != 2 || std::string_view(argv[1]) == "--help" || std::string_view(argv[1]) == "-h") {
    std::cerr << "usage: noded CONFIG\n"
                 "Serves the role named in CONFIG. Prints 'listening HOST:PORT' once ready.\n";
    return argc == 2 ? 0 : exit_code_for(ErrorCode::Usage);
  }

  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);
  std::signal(SIGPIPE, SIG_IGN);

  std::unique_ptr<node::Server> server;
  try {
    server = std::make_unique<node::Server>(node::NodeConfig::load(argv[1]));
  } catch (const Error& e) {
    std::cerr << "noded: startup failed: " << e.what() << '\n';
    return exit_code_for(e.code());
  } catch (const std::exception& e) {
    std::cerr << "noded: startup failed: " << e.what() << '\n';
    return 1;
  }

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server->stop();
  });
  std::cout << "listening " << server->endpoint() << std::endl;
  server->run();
  // run() returns only after stop(); the waiter has consumed its signal.
  waiter.join();
  return 0;
}
