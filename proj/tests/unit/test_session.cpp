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

#include <gtest/gtest.h>

#include <boost/asio/connect.hpp>
#include <boost/asio/ip/tcp.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>
#include <nlohmann/json.hpp>

#include "safe_align/errors.hpp"
#include "safe_align/session.hpp"

using namespace safe_align;
namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
using tcp = boost::asio::ip::tcp;
using nlohmann::json;

namespace {

const std::string kConfigs = SAFE_ALIGN_SOURCE_DIR "/configs/";

class Server {
 public:
  explicit Server(const std::string& config_file, double rate_hz = 200.0) {
    ServerOptions options;
    options.port = 0;
    options.config = load_experiment_config(kConfigs + config_file);
    options.rate_hz = rate_hz;
    options.contour_samples = 11;
    options.seed = 7;
    server_ = std::make_unique<SessionServer>(options);
    port_ = server_->start();
  }
  ~Server() { server_->stop(); }

  unsigned short port() const { return port_; }

 private:
  std::unique_ptr<SessionServer> server_;
  unsigned short port_ = 0;
};

class Client {
 public:
  explicit Client(unsigned short port) : ws_(io_) {
    tcp::resolver resolver(io_);
    boost::asio::connect(ws_.next_layer(), resolver.resolve("127.0.0.1", std::to_string(port)));
    ws_.handshake("127.0.0.1", "/session");
  }
  ~Client() {
    beast::error_code ec;
    ws_.close(websocket::close_code::normal, ec);
  }

  void send(const json& message) { send_text(message.dump()); }
  void send_text(const std::string& text) { ws_.write(boost::asio::buffer(text)); }

  json read() {
    beast::flat_buffer buffer;
    ws_.read(buffer);
    return json::parse(beast::buffers_to_string(buffer.data()));
  }

  /// Reads until a message of the given type arrives, collecting what was skipped.
  json read_until(const std::string& type, std::vector<json>* skipped = nullptr, int limit = 5000) {
    for (int i = 0; i < limit; ++i) {
      json m = read();
      if (m.at("type") == type) return m;
      if (skipped) skipped->push_back(m);
    }
    ADD_FAILURE() << "no '" << type << "' message within " << limit << " messages";
    return {};
  }

 private:
  boost::asio::io_context io_;
  websocket::stream<tcp::socket> ws_;
};

std::pair<unsigned, json> http_get(unsigned short port, const std::string& target) {
  boost::asio::io_context io;
  tcp::socket socket(io);
  tcp::resolver resolver(io);
  boost::asio::connect(socket, resolver.resolve("127.0.0.1", std::to_string(port)));
  http::request<http::empty_body> request{http::verb::get, target, 11};
  request.set(http::field::host, "127.0.0.1");
  http::write(socket, request);
  beast::flat_buffer buffer;
  http::response<http::string_body> response;
  http::read(socket, buffer, response);
  return {response.result_int(), json::parse(response.body())};
}

json correct(const std::string& dir) { return {{"v", 1}, {"type", "correct"}, {"dir", dir}}; }
json command(const std::string& type) { return {{"v", 1}, {"type", type}}; }

}  // namespace

TEST(Protocol, ParsesClientMessages) {
  const KeyMap keys = default_key_map(2);
  EXPECT_EQ(parse_client_message(R"({"v":1,"type":"start"})", keys).type, ClientMessageType::Start);
  EXPECT_EQ(parse_client_message(R"({"type":"estop"})", keys).type, ClientMessageType::Estop);
  const auto m = parse_client_message(R"({"v":1,"type":"correct","dir":"left"})", keys);
  EXPECT_EQ(m.type, ClientMessageType::Correct);
  EXPECT_EQ(m.dir, "left");
  EXPECT_EQ(m.direction, Eigen::VectorXd(Eigen::Vector2d(-1, 0)));
  for (const char* bad : {"{", "[1]", R"({"v":2,"type":"start"})", R"({"v":1})", R"({"type":"jump"})",
                          R"({"type":"correct"})", R"({"type":"correct","dir":"sideways"})"}) {
    try {
      parse_client_message(bad, keys);
      ADD_FAILURE() << bad;
    } catch (const Error& e) {
      EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument) << bad;
    }
  }
}

TEST(Protocol, KeyMaps) {
  const KeyMap scalar = default_key_map(1);
  EXPECT_EQ(scalar.at("up"), Eigen::VectorXd::Ones(1));
  EXPECT_EQ(scalar.at("down"), -Eigen::VectorXd::Ones(1));
  const KeyMap planar = default_key_map(2);
  EXPECT_EQ(planar.at("up"), Eigen::VectorXd(Eigen::Vector2d(0, 1)));
  EXPECT_EQ(planar.at("right"), Eigen::VectorXd(Eigen::Vector2d(1, 0)));
  EXPECT_THROW(default_key_map(3), Error);
}

TEST(Protocol, ErrorMessageShape) {
  const json e = error_message("nope");
  EXPECT_EQ(e.at("type"), "error");
  EXPECT_EQ(e.at("v"), kProtocolVersion);
  EXPECT_EQ(e.at("message"), "nope");
}

TEST(Server, HealthzAndNotFound) {
  Server server("planar_gate_interactive.yaml");
  const auto [status, body] = http_get(server.port(), "/healthz");
  EXPECT_EQ(status, 200u);
  EXPECT_EQ(body.at("status"), "ok");
  EXPECT_EQ(body.at("version"), std::string(library_version()));
  EXPECT_GE(body.at("uptime_s").get<double>(), 0.0);
  const auto [missing, error] = http_get(server.port(), "/nothing");
  EXPECT_EQ(missing, 404u);
  EXPECT_EQ(error.at("type"), "error");
}

TEST(Server, NothingMovesBeforeStart) {
  Server server("planar_gate_interactive.yaml");
  Client client(server.port());
  client.send(correct("up"));
  const json e = client.read();
  EXPECT_EQ(e.at("type"), "error");
  client.send_text("{not json");
  EXPECT_EQ(client.read().at("type"), "error");
}

TEST(Server, StartWithoutCorrectionsKeepsIterationZero) {
  Server server("planar_gate_interactive.yaml");
  Client client(server.port());
  client.send(command("start"));
  for (int i = 0; i < 20; ++i) {
    const json s = client.read_until("state");
    EXPECT_EQ(s.at("iter"), 0);
    EXPECT_EQ(s.at("env"), "planar_gate");
    EXPECT_EQ(s.at("theta").size(), 20u);
    EXPECT_EQ(s.at("robot").size(), 4u);
    EXPECT_EQ(s.at("k_budget"), 1867);
    EXPECT_EQ(s.at("plan").size(), 21u);
    EXPECT_FALSE(s.at("stopped").get<bool>());
    EXPECT_TRUE(s.contains("target"));
    EXPECT_EQ(s.at("v"), 1);
  }
}

TEST(Server, OneCorrectionOneCut) {
  Server server("planar_gate_interactive.yaml");
  Client client(server.port());
  client.send(command("start"));
  const json first = client.read_until("state");
  client.send(correct("up"));
  const json cut = client.read_until("cut_applied");
  EXPECT_EQ(cut.at("iter"), 1);
  EXPECT_EQ(cut.at("dir"), "up");
  EXPECT_EQ(cut.at("correction"), json::array({0.0, 1.0}));
  EXPECT_LT(cut.at("logdet").get<double>(), first.at("logdet").get<double>());
  EXPECT_GE(cut.at("rows").size(), 1u);
  for (const auto& row : cut.at("rows")) EXPECT_EQ(row.at("normal").size(), 20u);
  const json after = client.read_until("state");
  EXPECT_EQ(after.at("iter"), 1);
}

TEST(Server, EmergencyStopHoldsUntilReset) {
  Server server("pendulum_wellspec.yaml");
  Client client(server.port());
  client.send(command("start"));
  client.read_until("state");
  client.send(command("estop"));
  json s;
  do {
    s = client.read_until("state");
  } while (!s.at("stopped").get<bool>());
  const json held = s.at("robot");
  for (int i = 0; i < 5; ++i) EXPECT_EQ(client.read_until("state").at("robot"), held);

  client.send(correct("up"));
  std::vector<json> skipped;
  EXPECT_EQ(client.read_until("error", &skipped).at("type"), "error");
  for (const auto& m : skipped) EXPECT_NE(m.at("type"), "cut_applied");

  client.send(command("reset"));
  do {
    s = client.read_until("state");
  } while (s.at("stopped").get<bool>());
  EXPECT_EQ(s.at("iter"), 0);
  EXPECT_EQ(s.at("env"), "pendulum");
  EXPECT_FALSE(s.contains("target"));
}

TEST(Server, TenCorrectionsRoundTrip) {
  Server server("planar_gate_interactive.yaml");
  Client client(server.port());
  client.send(command("start"));
  double logdet = client.read_until("state").at("logdet").get<double>();
  const std::vector<std::string> dirs = {"up", "right", "down", "left", "up", "up", "right", "down", "left", "right"};
  int cuts = 0;
  for (const auto& dir : dirs) {
    client.send(correct(dir));
    const json cut = client.read_until("cut_applied");
    ++cuts;
    EXPECT_EQ(cut.at("iter"), cuts);
    EXPECT_LT(cut.at("logdet").get<double>(), logdet);
    logdet = cut.at("logdet").get<double>();
  }
  client.send(command("satisfied"));
  std::vector<json> skipped;
  const json outcome = client.read_until("outcome", &skipped);
  for (const auto& m : skipped) EXPECT_NE(m.at("type"), "cut_applied");
  EXPECT_EQ(cuts, 10);
  EXPECT_EQ(outcome.at("kind"), "SatisfiedByHuman");
  EXPECT_EQ(outcome.at("iter"), 10);
  EXPECT_DOUBLE_EQ(outcome.at("logdet").get<double>(), logdet);
}

TEST(Server, SessionsAreIsolated) {
  Server server("planar_gate_interactive.yaml");
  Client a(server.port());
  Client b(server.port());
  a.send(command("start"));
  b.send(command("start"));
  a.read_until("state");
  a.send(correct("up"));
  EXPECT_EQ(a.read_until("cut_applied").at("iter"), 1);
  for (int i = 0; i < 5; ++i) EXPECT_EQ(b.read_until("state").at("iter"), 0);
}

TEST(Server, StopIsIdempotent) {
  ServerOptions options;
  options.port = 0;
  options.config = load_experiment_config(kConfigs + "pendulum_wellspec.yaml");
  SessionServer server(options);
  EXPECT_GT(server.start(), 0);
  server.stop();
  server.stop();
}
