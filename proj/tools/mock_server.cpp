// Serves a scripted chat-completions endpoint until SIGINT or SIGTERM.

#include <pthread.h>

#include <csignal>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "dcsft/mock_endpoint.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Scripted OpenAI-compatible mock endpoint", "dcsft-mock-server"};
  std::string script;
  int port = 0;
  app.add_option("--script", script, "Mock options JSON")->check(CLI::ExistingFile);
  app.add_option("--port", port, "Port (0 picks a free one)")->capture_default_str();
  CLI11_PARSE(app, argc, argv);

  dcsft::MockEndpointOptions options;
  if (!script.empty()) {
    std::ifstream in(script);
    try {
      options = dcsft::mock_options_from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
      std::cerr << "error: " << script << ": " << e.what() << '\n';
      return 1;
    }
  }

  // Block the signals before the server threads start so only sigwait sees them.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  dcsft::MockEndpoint server(options, port);
  std::cout << server.base_url() << std::endl;
  int received = 0;
  sigwait(&signals, &received);
  server.stop();
  return 0;
}
