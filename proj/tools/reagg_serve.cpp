// reagg-serve: HTTP front end. Configuration comes from the environment:
//   REAGG_ADDR (default 127.0.0.1), REAGG_PORT (8080), REAGG_WORKERS,
//   REAGG_QUEUE_CAP, REAGG_RESULTS_DIR.

#include <csignal>
#include <cstdlib>
#include <iostream>
#include <string>

#include "reagg/service.hpp"

// After Eigen: httplib pulls in <resolv.h>, whose _res macro clashes with Eigen.
#include <httplib.h>

namespace {

httplib::Server* g_server = nullptr;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

void on_signal(int) {
  if (g_server) g_server->stop();
}

}  // namespace

int main() {
  try {
    reagg::ServiceOptions options;
    options.workers = std::stoul(env_or("REAGG_WORKERS", "0"));
    options.queue_capacity = std::stoul(env_or("REAGG_QUEUE_CAP", "256"));
    options.results_dir = env_or("REAGG_RESULTS_DIR", "");
    const std::string addr = env_or("REAGG_ADDR", "127.0.0.1");
    const int port = std::stoi(env_or("REAGG_PORT", "8080"));

    reagg::JobService service(options);
    httplib::Server server;
    reagg::register_routes(server, service);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "listening on " << addr << ":" << port << "\n";
    if (!server.listen(addr, port)) {
      std::cerr << "cannot bind " << addr << ":" << port << "\n";
      return 1;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
