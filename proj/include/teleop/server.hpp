#pragma once

// WebSocket gateway. One io_context thread owns the pipeline; connection
// handlers and the control timer all run on it, so pipeline mutation is
// serialized without locks.

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cstdint>
#include <deque>
#include <memory>
#include <set>
#include <string>
#include <utility>

#include <boost/asio.hpp>
#include <boost/beast/core.hpp>
#include <boost/beast/websocket.hpp>

#include "teleop/error.hpp"
#include "teleop/pipeline.hpp"
#include "teleop/protocol.hpp"

namespace teleop::gateway {

namespace net = boost::asio;
namespace beast = boost::beast;
namespace websocket = beast::websocket;
using tcp = net::ip::tcp;

struct ServerOptions {
  std::string address = "127.0.0.1";
  /// 0 picks an ephemeral port.
  unsigned short port = 0;
  /// Outbound messages held per client before the oldest is dropped.
  std::size_t queue_limit = 8;
  /// SO_SNDBUF for accepted sockets; 0 keeps the system default.
  int send_buffer_bytes = 0;
};

struct ServerStats {
  std::atomic<std::uint64_t> ticks{0};
  std::atomic<std::uint64_t> broadcasts{0};
  std::atomic<std::uint64_t> dropped{0};
  std::atomic<std::uint64_t> frames{0};
  std::atomic<std::uint64_t> rejected{0};
  std::atomic<std::int64_t> max_tick_late_us{0};
  std::atomic<std::size_t> max_queue_depth{0};
  std::atomic<std::size_t> connections{0};
};

/// Bounded outbound queue. The front element may be in flight on the socket
/// and is never dropped; when full, the oldest queued element behind it goes.
class OutboundQueue {
 public:
  explicit OutboundQueue(std::size_t limit) : limit_(std::max<std::size_t>(limit, 2)) {}

  /// Returns the number of messages dropped to make room (0 or 1).
  std::size_t push(std::shared_ptr<const std::string> msg, bool front_in_flight) {
    std::size_t dropped = 0;
    if (items_.size() >= limit_) {
      items_.erase(items_.begin() + (front_in_flight ? 1 : 0));
      dropped = 1;
    }
    items_.push_back(std::move(msg));
    return dropped;
  }

  const std::shared_ptr<const std::string>& front() const { return items_.front(); }
  void pop() { items_.pop_front(); }
  bool empty() const { return items_.empty(); }
  std::size_t size() const { return items_.size(); }
  std::size_t limit() const { return limit_; }

 private:
  std::size_t limit_;
  std::deque<std::shared_ptr<const std::string>> items_;
};

class Server;

class Connection : public std::enable_shared_from_this<Connection> {
 public:
  Connection(Server& server, tcp::socket socket, std::size_t queue_limit);
  ~Connection();

  void begin();
  void send(protocol::Message msg) { send(std::make_shared<const std::string>(protocol::encode(msg))); }
  void send(std::shared_ptr<const std::string> text);
  void close_after_flush(std::string reason);
  void shutdown();

  std::optional<protocol::Role> role;
  std::optional<std::int64_t> last_frame_ms;

 private:
  void read();
  void write();

  Server& server_;
  websocket::stream<beast::tcp_stream> ws_;
  beast::flat_buffer buffer_;
  OutboundQueue queue_;
  bool writing_ = false;
  bool closing_ = false;
  std::string close_reason_;
};

class Server {
 public:
  Server(PipelineConfig config, ServerOptions opts = {})
      : opts_(std::move(opts)), pipeline_(std::move(config)), acceptor_(ioc_), timer_(ioc_) {}

  Server(const Server&) = delete;
  Server& operator=(const Server&) = delete;

  /// Binds and listens. Throws PortInUse when the address is taken.
  void start() {
    beast::error_code ec;
    const tcp::endpoint ep(net::ip::make_address(opts_.address, ec), opts_.port);
    if (ec) throw Error(ErrorCode::InvalidConfig, "bad listen address '" + opts_.address + "'");
    acceptor_.open(ep.protocol(), ec);
    if (!ec) acceptor_.set_option(net::socket_base::reuse_address(true), ec);
    if (!ec) acceptor_.bind(ep, ec);
    if (!ec) acceptor_.listen(net::socket_base::max_listen_connections, ec);
    if (ec) {
      throw Error(ErrorCode::PortInUse,
                  "cannot listen on " + opts_.address + ":" + std::to_string(opts_.port) + ": " + ec.message());
    }
    port_ = acceptor_.local_endpoint().port();
    epoch_ = Clock::now();
    pipeline_.advance_to(0);
    next_broadcast_ms_ = pipeline_.config().command_period_ms;
    next_tick_ = epoch_;
    accept();
    schedule_tick();
  }

  unsigned short port() const { return port_; }

  /// Runs the event loop on the calling thread until stop().
  void run() { ioc_.run(); }

  /// Safe to call from any thread.
  void stop() {
    net::post(ioc_, [this] {
      beast::error_code ec;
      acceptor_.close(ec);
      timer_.cancel();
      for (Connection* c : connections_) c->shutdown();
      ioc_.stop();
    });
  }

  net::io_context& context() { return ioc_; }
  const ServerStats& stats() const { return stats_; }
  const ServerOptions& options() const { return opts_; }

 private:
  friend class Connection;
  using Clock = std::chrono::steady_clock;

  std::int64_t clock_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - epoch_).count();
  }

  void accept() {
    acceptor_.async_accept([this](beast::error_code ec, tcp::socket socket) {
      if (ec) return;
      if (opts_.send_buffer_bytes > 0) {
        socket.set_option(net::socket_base::send_buffer_size(opts_.send_buffer_bytes), ec);
      }
      std::make_shared<Connection>(*this, std::move(socket), opts_.queue_limit)->begin();
      accept();
    });
  }

  void schedule_tick() {
    next_tick_ += std::chrono::milliseconds(pipeline_.config().substep_ms);
    timer_.expires_at(next_tick_);
    timer_.async_wait([this](beast::error_code ec) {
      if (ec) return;
      on_tick();
      schedule_tick();
    });
  }

  void on_tick() {
    const auto late = std::chrono::duration_cast<std::chrono::microseconds>(Clock::now() - next_tick_).count();
    if (late > stats_.max_tick_late_us.load()) stats_.max_tick_late_us = late;
    // A long stall is not caught up substep by substep in wall time; the
    // pipeline still walks every substep inside advance_to.
    if (Clock::now() - next_tick_ > std::chrono::seconds(1)) next_tick_ = Clock::now();
    pipeline_.advance_to(clock_ms());
    ++stats_.ticks;
    if (pipeline_.now_ms() >= next_broadcast_ms_) {
      broadcast();
      const std::int64_t period = pipeline_.config().command_period_ms;
      while (next_broadcast_ms_ <= pipeline_.now_ms()) next_broadcast_ms_ += period;
    }
  }

  void broadcast() {
    auto text = std::make_shared<const std::string>(protocol::encode(protocol::State{protocol::snapshot(pipeline_)}));
    for (Connection* c : connections_) {
      if (c->role) c->send(text);
    }
    ++stats_.broadcasts;
  }

  void handle(Connection& conn, std::string_view text) {
    protocol::Message msg;
    try {
      msg = protocol::decode(text);
    } catch (const Error& e) {
      ++stats_.rejected;
      conn.send(protocol::error_reply(e));
      if (e.code() == ErrorCode::ProtocolVersionMismatch) conn.close_after_flush("protocol version mismatch");
      return;
    }
    if (!conn.role && !std::holds_alternative<protocol::Hello>(msg)) {
      reject(conn, "MalformedMessage", "the first message must be hello");
      return;
    }
    std::visit([&](const auto& m) { on_message(conn, m); }, msg);
  }

  void reject(Connection& conn, std::string code, std::string message) {
    ++stats_.rejected;
    conn.send(protocol::ErrorReply{std::move(code), std::move(message)});
  }

  void on_message(Connection& conn, const protocol::Hello& m) {
    if (conn.role) {
      reject(conn, "MalformedMessage", "hello was already received on this connection");
      return;
    }
    protocol::Welcome w{protocol::Role::observer, 1000.0 / static_cast<double>(pipeline_.config().command_period_ms), ""};
    if (m.role == protocol::Role::operator_) {
      if (operator_ == nullptr) {
        operator_ = &conn;
        w.role = protocol::Role::operator_;
        // Tracker and gesture history belong to whoever held the role before.
        if (had_operator_) pipeline_.reset_operator();
        had_operator_ = true;
      } else {
        w.note = "operator role is taken; connected read-only";
      }
    }
    conn.role = w.role;
    conn.send(w);
  }

  void on_message(Connection& conn, const protocol::FrameMessage& m) {
    if (&conn != operator_) {
      reject(conn, "ReadOnly", "only the operator connection may send frames");
      return;
    }
    if (conn.last_frame_ms && m.frame.t_ms <= *conn.last_frame_ms) {
      reject(conn, "NonMonotonicTimestamp",
             "frame t_ms " + std::to_string(m.frame.t_ms) + " <= previous " + std::to_string(*conn.last_frame_ms));
      return;
    }
    conn.last_frame_ms = m.frame.t_ms;
    // Client clocks are not trusted across reconnects; frames are stamped on
    // arrival with the server clock.
    LandmarkFrame frame = m.frame;
    pipeline_.advance_to(clock_ms());
    frame.t_ms = std::max(pipeline_.now_ms(), last_ingest_ms_ + 1);
    try {
      pipeline_.ingest(frame);
      last_ingest_ms_ = frame.t_ms;
      ++stats_.frames;
    } catch (const Error& e) {
      ++stats_.rejected;
      conn.send(protocol::error_reply(e));
    }
  }

  void on_message(Connection& conn, const protocol::Reset&) {
    if (&conn != operator_) {
      reject(conn, "ReadOnly", "only the operator connection may reset");
      return;
    }
    pipeline_.reset();
    broadcast();
  }

  // Any connected client may stop the arm.
  void on_message(Connection&, const protocol::Estop&) {
    pipeline_.estop();
    broadcast();
  }

  template <class T>
  void on_message(Connection& conn, const T&) {
    reject(conn, "MalformedMessage", "server-to-client message type sent by a client");
  }

  void attach(Connection* c) {
    connections_.insert(c);
    stats_.connections = connections_.size();
  }

  void detach(Connection* c) {
    connections_.erase(c);
    if (operator_ == c) operator_ = nullptr;
    stats_.connections = connections_.size();
  }

  void note_depth(std::size_t depth, std::size_t dropped) {
    stats_.dropped += dropped;
    if (depth > stats_.max_queue_depth.load()) stats_.max_queue_depth = depth;
  }

  // Declared ahead of the io_context: connections still queued on it are
  // destroyed with it and detach themselves from these.
  ServerOptions opts_;
  ServerStats stats_;
  Pipeline pipeline_;
  std::set<Connection*> connections_;
  Connection* operator_ = nullptr;
  bool had_operator_ = false;
  std::int64_t last_ingest_ms_ = -1;
  std::int64_t next_broadcast_ms_ = 0;
  Clock::time_point epoch_{};
  Clock::time_point next_tick_{};
  unsigned short port_ = 0;

  net::io_context ioc_{1};
  tcp::acceptor acceptor_;
  net::steady_timer timer_;
};

inline Connection::Connection(Server& server, tcp::socket socket, std::size_t queue_limit)
    : server_(server), ws_(std::move(socket)), queue_(queue_limit) {
  server_.attach(this);
}

inline Connection::~Connection() { server_.detach(this); }

inline void Connection::begin() {
  ws_.set_option(websocket::stream_base::timeout::suggested(beast::role_type::server));
  ws_.text(true);
  ws_.async_accept([self = shared_from_this()](beast::error_code ec) {
    if (ec) return;
    self->read();
  });
}

inline void Connection::read() {
  ws_.async_read(buffer_, [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->server_.detach(self.get());
      return;
    }
    const std::string text = beast::buffers_to_string(self->buffer_.data());
    self->buffer_.consume(self->buffer_.size());
    self->server_.handle(*self, text);
    if (!self->closing_) self->read();
  });
}

inline void Connection::send(std::shared_ptr<const std::string> text) {
  if (closing_) return;
  const std::size_t dropped = queue_.push(std::move(text), writing_);
  server_.note_depth(queue_.size(), dropped);
  if (!writing_) write();
}

inline void Connection::write() {
  if (queue_.empty()) {
    writing_ = false;
    if (closing_) {
      ws_.async_close(websocket::close_reason(websocket::close_code::policy_error, close_reason_),
                      [self = shared_from_this()](beast::error_code) {});
    }
    return;
  }
  writing_ = true;
  ws_.async_write(net::buffer(*queue_.front()), [self = shared_from_this()](beast::error_code ec, std::size_t) {
    if (ec) {
      self->writing_ = false;
      return;
    }
    self->queue_.pop();
    self->write();
  });
}

inline void Connection::close_after_flush(std::string reason) {
  close_reason_ = std::move(reason);
  closing_ = true;
  if (!writing_) write();
}

inline void Connection::shutdown() {
  beast::error_code ec;
  beast::get_lowest_layer(ws_).socket().close(ec);
}

}  // namespace teleop::gateway
