// Copyright 2026 The safe-align Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Interactive alignment server. Serves GET /healthz and one alignment loop
// per websocket connection on /session. The bind address comes from
// SAFE_ALIGN_BIND (host:port, default 127.0.0.1:8080).

#include <CLI11.hpp>

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdlib>
#include <iostream>
#include <thread>

#include "safe_align/errors.hpp"
#include "safe_align/session.hpp"

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"safe_align_server: live alignment sessions over websocket"};
  std::string config_path;
  double rate = 10.0;
  std::uint64_t seed = 0;
  app.add_option("--config", config_path, "YAML experiment config (environment, box, keys)")->required();
  app.add_option("--rate", rate, "control steps per second");
  auto* seed_option = app.add_option("--seed", seed, "environment rng seed (default: random per session)");
  CLI11_PARSE(app, argc, argv);

  safe_align::ServerOptions options;
  const char* bind = std::getenv("SAFE_ALIGN_BIND");
  const std::string address = bind ? bind : "127.0.0.1:8080";
  const auto colon = address.rfind(':');
  try {
    if (colon == std::string::npos) throw std::invalid_argument("missing port");
    options.address = address.substr(0, colon);
    options.port = static_cast<unsigned short>(std::stoul(address.substr(colon + 1)));
  } catch (const std::exception&) {
    std::cerr << "error: SAFE_ALIGN_BIND must be host:port, got '" << address << "'\n";
    return 2;
  }

  try {
    options.config = safe_align::load_experiment_config(config_path);
  } catch (const safe_align::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  options.rate_hz = rate;
  if (*seed_option) options.seed = seed;

  try {
    safe_align::SessionServer server(std::move(options));
    const auto port = server.start();
    std::cout << "safe_align_server " << safe_align::library_version() << " listening on "
              << address.substr(0, colon) << ":" << port << std::endl;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    while (!g_stop) std::this_thread::sleep_for(std::chrono::milliseconds(100));
    server.stop();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
