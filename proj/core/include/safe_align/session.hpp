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

#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <string_view>

#include "safe_align/experiment.hpp"

namespace safe_align {

/// Wire protocol version carried in the `v` field of every message.
inline constexpr int kProtocolVersion = 1;

std::string_view library_version();

enum class ClientMessageType { Start, Correct, Reset, Estop, Satisfied };

struct ClientMessage {
  ClientMessageType type = ClientMessageType::Start;
  /// Key id for `correct` messages.
  std::string dir;
  Eigen::VectorXd direction;
};

/// Parses one inbound text frame:
///   {"v":1,"type":"start"|"correct"|"reset"|"estop"|"satisfied","dir":"up"}
/// `v` may be omitted; `dir` is required for `correct` and must be a key of
/// `keys`. Throws InvalidArgument with a client-facing message.
ClientMessage parse_client_message(const std::string& text, const KeyMap& keys);

nlohmann::json error_message(const std::string& message);

/// 0-level segments of g_theta on a grid over the environment's display
/// window (the workspace for the planar robot, angle x rate for the
/// pendulum), each as [[x0, y0], [x1, y1]].
nlohmann::json constraint_contour(const Environment& env, const Eigen::VectorXd& theta, int samples);

struct ServerOptions {
  std::string address = "127.0.0.1";
  /// 0 picks a free port; SessionServer::start returns the bound one.
  unsigned short port = 8080;
  ExperimentConfig config;
  /// State messages per second (one per control step).
  double rate_hz = 10.0;
  int contour_samples = 41;
  /// Environment rng seed; empty draws one per session.
  std::optional<std::uint64_t> seed;
};

/// HTTP + websocket front end. GET /healthz answers {"status","version",
/// "uptime_s"}; a websocket upgrade on /session starts one isolated
/// alignment loop for that connection.
class SessionServer {
 public:
  explicit SessionServer(ServerOptions options);
  ~SessionServer();

  SessionServer(const SessionServer&) = delete;
  SessionServer& operator=(const SessionServer&) = delete;

  /// Binds and starts serving on a background thread; returns the port.
  unsigned short start();
  /// Closes every session and joins all threads. Idempotent.
  void stop();
  /// Blocks until stop() is called from another thread.
  void wait();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace safe_align
