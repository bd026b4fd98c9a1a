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

#include "safe_align/session.hpp"

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/http.hpp>
#include <boost/beast/websocket.hpp>

#include <chrono>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "safe_align/errors.hpp"

namespace safe_align {

namespace beast = boost::beast;
namespace http = beast::http;
namespace websocket = beast::websocket;
namespace net = boost::asio;
using tcp = net::ip::tcp;

std::string_view library_version() { return SAFE_ALIGN_VERSION; }

namespace {

nlohmann::json vec_json(const Eigen::VectorXd& v) {
  return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

std::optional<ClientMessageType> message_type(const std::string& name) {
  if (name == "start") return ClientMessageType::Start;
  if (name == "correct") return ClientMessageType::Correct;
  if (name == "reset") return ClientMessageType::Reset;
  if (name == "estop") return ClientMessageType::Estop;
  if (name == "satisfied") return ClientMessageType::Satisfied;
  return std::nullopt;
}

}  // namespace

ClientMessage parse_client_message(const std::string& text, const KeyMap& keys) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error&) {
    fail(ErrorKind::InvalidArgument, "malformed JSON");
  }
  if (!j.is_object()) fail(ErrorKind::InvalidArgument, "message must be a JSON object");
  if (j.contains("v") && j["v"] != kProtocolVersion) {
    fail(ErrorKind::InvalidArgument, "unsupported protocol version " + j["v"].dump());
  }
  if (!j.contains("type") || !j["type"].is_string()) fail(ErrorKind::InvalidArgument, "missing message type");
  const auto type = message_type(j["type"].get<std::string>());
  if (!type) fail(ErrorKind::InvalidArgument, "unknown message type '" + j["type"].get<std::string>() + "'");

  ClientMessage message;
  message.type = *type;
  if (message.type == ClientMessageType::Correct) {
    if (!j.contains("dir") || !j["dir"].is_string()) fail(ErrorKind::InvalidArgument, "correct needs a dir key");
    message.dir = j["dir"].get<std::string>();
    const auto it = keys.find(message.dir);
    if (it == keys.end()) fail(ErrorKind::InvalidArgument, "unknown direction '" + message.dir + "'");
    message.direction = it->second;
  }
  return message;
}

nlohmann::json error_message(const std::string& message) {
  return {{"type", "error"}, {"v", kProtocolVersion}, {"message", message}};
}

nlohmann::json constraint_contour(const Environment& env, const Eigen::VectorXd& theta, int samples) {
  const BarrierProblem problem = env.problem(theta);
  GridSlice slice;
  slice.fixed = Eigen::VectorXd::Zero(problem.dynamics->state_dim());
  if (const auto* planar = dynamic_cast<const PlanarGateEnv*>(&env)) {
    const double w = planar->params().workspace;
    slice.ranges = {{0, 0.0, w, samples}, {1, 0.0, w, samples}};
  } else {
    slice.ranges = {{0, 0.0, 2.0 * M_PI, samples}, {1, -4.0, 8.0, samples}};
  }
  const auto grid = export_constraint_grid(theta, *problem.constraint, env.horizon(), env.control_dim(), slice);
  nlohmann::json segments = nlohmann::json::array();
  for (const auto& [a, b] : grid.contour) segments.push_back({{a.x(), a.y()}, {b.x(), b.y()}});
  return segments;
}

// ---------------------------------------------------------------------------
// Per-connection plumbing

namespace {

struct SessionClosed {};

// Shared between a websocket connection (io thread) and its alignment loop
// (worker thread). Outbound text goes through `post`, which hands it to the
// connection's executor.
class Channel {
 public:
  std::function<void(std::string)> post;
  std::function<void()> post_close;

  void deliver(ClientMessage message) {
    {
      std::lock_guard lock(mutex_);
      inbox_.push_back(std::move(message));
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lock(mutex_);
      closed_ = true;
    }
    cv_.notify_all();
  }

  void send(const nlohmann::json& message) {
    if (post) post(message.dump());
  }

  /// Next message, or nullopt when the deadline passes first.
  std::optional<ClientMessage> next(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mutex_);
    cv_.wait_until(lock, deadline, [&] { return closed_ || !inbox_.empty(); });
    if (closed_) throw SessionClosed{};
    if (inbox_.empty()) return std::nullopt;
    ClientMessage message = std::move(inbox_.front());
    inbox_.pop_front();
    return message;
  }

  bool closed() {
    std::lock_guard lock(mutex_);
    return closed_;
  }

 private:
  std::mutex mutex_;
  std::condition_variable cv_;
  std::deque<ClientMessage> inbox_;
  bool closed_ = false;
};

// The human at the other end of the socket, polled once per control step.
class SocketSource final : public CorrectionSource {
 public:
  SocketSource(Channel& channel, const ServerOptions& options, int budget)
      : channel_(channel), options_(options), budget_(budget),
        period_(std::chrono::duration_cast<std::chrono::steady_clock::duration>(
            std::chrono::duration<double>(1.0 / options.rate_hz))),
        tick_(std::chrono::steady_clock::now()) {}

  HumanInput poll(const CorrectionContext& context) override {
    send_state(context);
    tick_ += period_;
    const auto now = std::chrono::steady_clock::now();
    if (tick_ < now) tick_ = now;
    while (true) {
      auto message = channel_.next(tick_);
      if (!message) {
        if (!stopped_) return {};
        // Hold position while stopped, still streaming state.
        send_state(context);
        tick_ += period_;
        continue;
      }
      switch (message->type) {
        case ClientMessageType::Start:
          channel_.send(error_message("session already started"));
          break;
        case ClientMessageType::Correct:
          if (stopped_) {
            channel_.send(error_message("robot is stopped; send reset before correcting"));
            break;
          }
          last_dir_ = message->dir;
          return {InputKind::Correction, message->direction};
        case ClientMessageType::Estop:
          stopped_ = true;
          send_state(context);
          break;
        case ClientMessageType::Reset:
          stopped_ = false;
          return {InputKind::Reset, {}};
        case ClientMessageType::Satisfied:
          return {InputKind::Satisfied, {}};
      }
    }
  }

  const std::string& last_dir() const { return last_dir_; }

 private:
  void send_state(const CorrectionContext& context) {
    if (contour_iteration_ != context.state.iteration || contour_.is_null()) {
      contour_ = constraint_contour(context.env, context.state.theta, options_.contour_samples);
      contour_iteration_ = context.state.iteration;
    }
    nlohmann::json plan = nlohmann::json::array();
    const auto& states = context.plan.states;
    for (Eigen::Index k = 0; k < states.cols(); ++k) plan.push_back({states(0, k), states(1, k)});
    nlohmann::json message = {{"type", "state"},
                              {"v", kProtocolVersion},
                              {"env", context.env.name()},
                              {"iter", context.state.iteration},
                              {"k_budget", budget_},
                              {"theta", vec_json(context.state.theta)},
                              {"logdet", context.state.ellipsoid.log_det()},
                              {"rows", context.state.polytope.rows()},
                              {"robot", vec_json(context.env.state())},
                              {"plan", plan},
                              {"contour", contour_},
                              {"env_step", context.env_step},
                              {"stopped", stopped_}};
    if (const auto* planar = dynamic_cast<const PlanarGateEnv*>(&context.env)) {
      message["target"] = {planar->target().x(), planar->target().y()};
    }
    channel_.send(message);
  }

  Channel& channel_;
  const ServerOptions& options_;
  int budget_;
  std::chrono::steady_clock::duration period_;
  std::chrono::steady_clock::time_point tick_;
  bool stopped_ = false;
  std::string last_dir_;
  nlohmann::json contour_;
  int contour_iteration_ = -1;
};

void run_session(Channel& channel, const ServerOptions& options) {
  // Nothing moves until the client asks for it.
  while (true) {
    auto message = channel.next(std::chrono::steady_clock::now() + std::chrono::hours(24));
    if (!message) continue;
    if (message->type == ClientMessageType::Start) break;
    channel.send(error_message("send start first"));
  }

  const ExperimentConfig& config = options.config;
  auto env = make_environment(config);
  AlignmentConfig alignment = config.alignment;
  alignment.rng_seed = options.seed ? *options.seed : std::random_device{}();
  const AlignmentState initial = initial_state(alignment);
  SocketSource source(channel, options, initial.budget);

  AlignmentObserver observer;
  observer.on_cut = [&](const CutInfo& info) {
    const int added = info.after.polytope.rows() - info.before.polytope.rows();
    nlohmann::json rows = nlohmann::json::array();
    for (int i = info.after.polytope.rows() - added; i < info.after.polytope.rows(); ++i) {
      rows.push_back({{"normal", vec_json(info.after.polytope.normals().row(i).transpose())},
                      {"offset", info.after.polytope.offsets()[i]}});
    }
    channel.send({{"type", "cut_applied"},
                  {"v", kProtocolVersion},
                  {"iter", info.after.iteration},
                  {"k_budget", info.after.budget},
                  {"dir", source.last_dir()},
                  {"correction", vec_json(info.after.trace.back().correction)},
                  {"theta", vec_json(info.after.theta)},
                  {"logdet", info.after.ellipsoid.log_det()},
                  {"rows", rows}});
  };

  try {
    const AlignmentResult result = run_alignment(*env, source, alignment, observer);
    const auto& o = result.outcome;
    channel.send({{"type", "outcome"},
                  {"v", kProtocolVersion},
                  {"kind", std::string(to_string(o.kind))},
                  {"iter", o.corrections_used},
                  {"k_budget", result.state.budget},
                  {"env_steps", o.env_steps},
                  {"theta", vec_json(o.final_theta)},
                  {"logdet", result.state.ellipsoid.log_det()}});
  } catch (const SessionClosed&) {
    throw;
  } catch (const std::exception& e) {
    channel.send(error_message(e.what()));
    channel.send({{"type", "outcome"}, {"v", kProtocolVersion}, {"kind", "error"}, {"message", e.what()}});
  }
}

struct ServerState {
  ServerOptions options;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();

  std::mutex mutex;
  std::vector<std::weak_ptr<Channel>> channels;
  std::vector<std::thread> workers;
  bool stopping = false;

  void spawn(const std::shared_ptr<Channel>& channel) {
    std::lock_guard lock(mutex);
    if (stopping) {
      channel->close();
      return;
    }
    channels.push_back(channel);
    workers.emplace_back([this, channel] {
      try {
        run_session(*channel, options);
      } catch (const SessionClosed&) {
        return;
      }
      if (channel->post_close) channel->post_close();
    });
  }
};

class WebsocketSession : public std::enable_shared_from_this<WebsocketSession> {
 public:
  WebsocketSession(tcp::socket&& socket, ServerState& server) : ws_(std::move(socket)), server_(server) {}

  ~WebsocketSession() {
    if (channel_) channel_->close();
  }

  void run(http::request<http::string_body> request) {
    ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
    ws_.async_accept(request, beast::bind_front_handler(&WebsocketSession::on_accept, shared_from_this()));
  }

 private:
  void on_accept(beast::error_code ec) {
    if (ec) return;
    channel_ = std::make_shared<Channel>();
    std::weak_ptr<WebsocketSession> weak = shared_from_this();
    auto executor = ws_.get_executor();
    channel_->post = [weak, executor](std::string text) {
      net::post(executor, [weak, text = std::move(text)]() mutable {
        if (auto self = weak.lock()) self->queue(std::move(text));
      });
    };
    channel_->post_close = [weak, executor] {
      net::post(executor, [weak] {
        if (auto self = weak.lock()) self->close_when_flushed();
      });
    };
    server_.spawn(channel_);
    do_read();
  }

  void do_read() {
    ws_.async_read(buffer_, beast::bind_front_handler(&WebsocketSession::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec) {
      channel_->close();
      return;
    }
    const std::string text = beast::buffers_to_string(buffer_.data());
    buffer_.consume(buffer_.size());
    try {
      channel_->deliver(parse_client_message(text, server_.options.config.keys));
    } catch (const Error& e) {
      queue(error_message(e.what()).dump());
    }
    do_read();
  }

  void queue(std::string text) {
    if (closing_) return;
    outbox_.push_back(std::move(text));
    if (outbox_.size() == 1) do_write();
  }

  void do_write() {
    ws_.text(true);
    ws_.async_write(net::buffer(outbox_.front()),
                    beast::bind_front_handler(&WebsocketSession::on_write, shared_from_this()));
  }

  void on_write(beast::error_code ec, std::size_t) {
    if (ec) {
      channel_->close();
      return;
    }
    outbox_.pop_front();
    if (!outbox_.empty()) {
      do_write();
    } else if (close_requested_) {
      do_close();
    }
  }

  void close_when_flushed() {
    close_requested_ = true;
    if (outbox_.empty()) do_close();
  }

  void do_close() {
    if (closing_) return;
    closing_ = true;
    ws_.async_close(websocket::close_code::normal, [self = shared_from_this()](beast::error_code) {});
  }

  websocket::stream<beast::tcp_stream> ws_;
  ServerState& server_;
  beast::flat_buffer buffer_;
  std::deque<std::string> outbox_;
  std::shared_ptr<Channel> channel_;
  bool close_requested_ = false;
  bool closing_ = false;
};

class HttpConnection : public std::enable_shared_from_this<HttpConnection> {
 public:
  HttpConnection(tcp::socket&& socket, ServerState& server) : stream_(std::move(socket)), server_(server) {}

  void run() {
    net::dispatch(stream_.get_executor(), beast::bind_front_handler(&HttpConnection::do_read, shared_from_this()));
  }

 private:
  void do_read() {
    request_ = {};
    stream_.expires_after(std::chrono::seconds(30));
    http::async_read(stream_, buffer_, request_, beast::bind_front_handler(&HttpConnection::on_read, shared_from_this()));
  }

  void on_read(beast::error_code ec, std::size_t) {
    if (ec == http::error::end_of_stream) {
      stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
      return;
    }
    if (ec) return;
    if (websocket::is_upgrade(request_) && request_.target() == "/session") {
      stream_.expires_never();
      std::make_shared<WebsocketSession>(stream_.release_socket(), server_)->run(std::move(request_));
      return;
    }
    respond();
  }

  void respond() {
    auto response = std::make_shared<http::response<http::string_body>>();
    response->version(request_.version());
    response->keep_alive(request_.keep_alive());
    response->set(http::field::server, "safe_align");
    response->set(http::field::content_type, "application/json");
    if (request_.method() == http::verb::get && request_.target() == "/healthz") {
      const double uptime =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - server_.started).count();
      response->result(http::status::ok);
      response->body() =
          nlohmann::json{{"status", "ok"}, {"version", library_version()}, {"uptime_s", uptime}}.dump();
    } else {
      response->result(http::status::not_found);
      response->body() = error_message("no such endpoint").dump();
    }
    response->prepare_payload();
    http::async_write(stream_, *response,
                      [self = shared_from_this(), response](beast::error_code ec, std::size_t) {
                        if (ec) return;
                        if (!response->keep_alive()) {
                          self->stream_.socket().shutdown(tcp::socket::shutdown_send, ec);
                          return;
                        }
                        self->do_read();
                      });
  }

  beast::tcp_stream stream_;
  ServerState& server_;
  beast::flat_buffer buffer_;
  http::request<http::string_body> request_;
};

}  // namespace

struct SessionServer::Impl {
  ServerState state;
  net::io_context io{1};
  tcp::acceptor acceptor{io};
  std::thread io_thread;
  std::mutex mutex;
  std::condition_variable stopped_cv;
  bool running = false;
  bool stopped = false;

  void accept() {
    acceptor.async_accept(net::make_strand(io), [this](beast::error_code ec, tcp::socket socket) {
      if (!acceptor.is_open()) return;
      if (!ec) std::make_shared<HttpConnection>(std::move(socket), state)->run();
      accept();
    });
  }
};

SessionServer::SessionServer(ServerOptions options) : impl_(std::make_unique<Impl>()) {
  if (!(options.rate_hz > 0)) fail(ErrorKind::InvalidArgument, "rate_hz must be positive");
  if (options.contour_samples < 2) fail(ErrorKind::InvalidArgument, "contour_samples must be >= 2");
  impl_->state.options = std::move(options);
}

SessionServer::~SessionServer() { stop(); }

unsigned short SessionServer::start() {
  auto& o = impl_->state.options;
  const tcp::endpoint endpoint{net::ip::make_address(o.address), o.port};
  impl_->acceptor.open(endpoint.protocol());
  impl_->acceptor.set_option(net::socket_base::reuse_address(true));
  impl_->acceptor.bind(endpoint);
  impl_->acceptor.listen(net::socket_base::max_listen_connections);
  impl_->accept();
  impl_->running = true;
  impl_->io_thread = std::thread([this] { impl_->io.run(); });
  return impl_->acceptor.local_endpoint().port();
}

void SessionServer::stop() {
  std::vector<std::thread> workers;
  {
    std::lock_guard lock(impl_->state.mutex);
    if (impl_->state.stopping) return;
    impl_->state.stopping = true;
    for (auto& weak : impl_->state.channels) {
      if (auto channel = weak.lock()) channel->close();
    }
    workers.swap(impl_->state.workers);
  }
  for (auto& w : workers) w.join();
  if (impl_->running) {
    net::post(impl_->io, [this] {
      beast::error_code ec;
      impl_->acceptor.close(ec);
    });
    impl_->io.stop();
    impl_->io_thread.join();
  }
  {
    std::lock_guard lock(impl_->mutex);
    impl_->stopped = true;
  }
  impl_->stopped_cv.notify_all();
}

void SessionServer::wait() {
  std::unique_lock lock(impl_->mutex);
  impl_->stopped_cv.wait(lock, [&] { return impl_->stopped; });
}

}  // namespace safe_align
