#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <bit>
#include <cerrno>
#include <charconv>
#include <chrono>
#include <cstdint>
#include <cstring>
#include <memory>
#include <mutex>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "fedtput/error.hpp"
#include "fedtput/federation.hpp"
#include "fedtput/weights_io.hpp"

namespace fedtput::wire {

enum class FrameType : std::uint8_t {
  hello = 0x01,
  config = 0x02,
  global_weights = 0x03,
  local_update = 0x04,
  skip = 0x05,
  round_ack = 0x06,
  shutdown = 0x07,
  error = 0x7F,
};

inline std::string_view frame_type_name(FrameType t) {
  switch (t) {
    case FrameType::hello: return "HELLO";
    case FrameType::config: return "CONFIG";
    case FrameType::global_weights: return "GLOBAL_WEIGHTS";
    case FrameType::local_update: return "LOCAL_UPDATE";
    case FrameType::skip: return "SKIP";
    case FrameType::round_ack: return "ROUND_ACK";
    case FrameType::shutdown: return "SHUTDOWN";
    case FrameType::error: return "ERROR";
  }
  return "?";
}

inline constexpr std::uint32_t kMaxPayload = 1u << 30;

struct Frame {
  FrameType type = FrameType::error;
  std::vector<std::uint8_t> payload;
};

// ---------------------------------------------------------------------------
// Big-endian payload fields

class PayloadWriter {
 public:
  template <typename T>
  PayloadWriter& put(T v) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    const auto u = std::bit_cast<U>(v);
    for (std::size_t i = sizeof(T); i-- > 0;) out_.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
    return *this;
  }
  PayloadWriter& str16(std::string_view s) {
    if (s.size() > 0xFFFF) throw Error(Errc::protocol, "string field too long");
    put(static_cast<std::uint16_t>(s.size()));
    out_.insert(out_.end(), s.begin(), s.end());
    return *this;
  }
  PayloadWriter& bytes(const std::vector<std::uint8_t>& b) {
    out_.insert(out_.end(), b.begin(), b.end());
    return *this;
  }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class PayloadReader {
 public:
  explicit PayloadReader(const std::vector<std::uint8_t>& p) : p_(p) {}

  template <typename T>
  T get() {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
                                 std::conditional_t<sizeof(T) == 4, std::uint32_t,
                                                    std::conditional_t<sizeof(T) == 2, std::uint16_t, std::uint8_t>>>;
    need(sizeof(T));
    U u = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) u = static_cast<U>((u << 8) | p_[pos_++]);
    return std::bit_cast<T>(u);
  }
  std::string str16() {
    const auto n = get<std::uint16_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(p_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> bytes(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> out(p_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                  p_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  std::size_t remaining() const { return p_.size() - pos_; }
  void finish() const {
    if (remaining() != 0) throw Error(Errc::protocol, "trailing bytes in payload");
  }

 private:
  void need(std::size_t n) const {
    if (p_.size() - pos_ < n) throw Error(Errc::protocol, "payload truncated");
  }
  const std::vector<std::uint8_t>& p_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Message payloads

struct ConfigMsg {
  std::uint32_t H = 5;
  std::uint32_t W = 1;
  double sigma = 2.0;
  std::uint32_t epochs = 25;
  std::uint32_t round = 0;
  std::uint64_t seed = 0;
};

struct UpdateMsg {
  std::vector<std::uint8_t> blob;  // FPW1 with global layers only
  std::uint64_t sample_count = 0;
  double train_loss = 0;
  double test_r2 = 0;
  double test_mae = 0;
};

inline Frame hello_frame(std::string_view id) { return {FrameType::hello, PayloadWriter().str16(id).take()}; }
inline Frame skip_frame(std::string_view reason) { return {FrameType::skip, PayloadWriter().str16(reason).take()}; }
inline Frame error_frame(std::string_view msg) { return {FrameType::error, PayloadWriter().str16(msg).take()}; }
inline Frame empty_frame(FrameType t) { return {t, {}}; }

inline Frame config_frame(const ConfigMsg& c) {
  PayloadWriter w;
  w.put(c.H).put(c.W).put(c.sigma).put(c.epochs).put(c.round).put(c.seed);
  return {FrameType::config, w.take()};
}

inline ConfigMsg parse_config(const Frame& f) {
  PayloadReader r(f.payload);
  ConfigMsg c;
  c.H = r.get<std::uint32_t>();
  c.W = r.get<std::uint32_t>();
  c.sigma = r.get<double>();
  c.epochs = r.get<std::uint32_t>();
  c.round = r.get<std::uint32_t>();
  c.seed = r.get<std::uint64_t>();
  r.finish();
  return c;
}

inline Frame update_frame(const UpdateMsg& u) {
  PayloadWriter w;
  w.bytes(u.blob).put(u.sample_count).put(u.train_loss).put(u.test_r2).put(u.test_mae);
  return {FrameType::local_update, w.take()};
}

inline UpdateMsg parse_update(const Frame& f) {
  constexpr std::size_t tail = 8 * 4;
  if (f.payload.size() < tail) throw Error(Errc::protocol, "LOCAL_UPDATE payload too short");
  PayloadReader r(f.payload);
  UpdateMsg u;
  u.blob = r.bytes(f.payload.size() - tail);
  u.sample_count = r.get<std::uint64_t>();
  u.train_loss = r.get<double>();
  u.test_r2 = r.get<double>();
  u.test_mae = r.get<double>();
  return u;
}

inline std::string parse_text(const Frame& f) {
  PayloadReader r(f.payload);
  auto s = r.str16();
  r.finish();
  return s;
}

// ---------------------------------------------------------------------------
// Frame log

struct LoggedFrame {
  std::string peer;  // client id, or "" before HELLO
  bool to_server = false;
  Frame frame;
};

class FrameLog {
 public:
  void add(std::string peer, bool to_server, const Frame& f) {
    std::lock_guard lock(mu_);
    frames_.push_back({std::move(peer), to_server, f});
  }
  std::vector<LoggedFrame> frames() const {
    std::lock_guard lock(mu_);
    return frames_;
  }

 private:
  mutable std::mutex mu_;
  std::vector<LoggedFrame> frames_;
};

// ---------------------------------------------------------------------------
// Sockets

class Socket {
 public:
  Socket() = default;
  explicit Socket(int fd) : fd_(fd) {}
  Socket(Socket&& o) noexcept : fd_(std::exchange(o.fd_, -1)) {}
  Socket& operator=(Socket&& o) noexcept {
    if (this != &o) {
      close();
      fd_ = std::exchange(o.fd_, -1);
    }
    return *this;
  }
  Socket(const Socket&) = delete;
  Socket& operator=(const Socket&) = delete;
  ~Socket() { close(); }

  int fd() const { return fd_; }
  bool valid() const { return fd_ >= 0; }
  void close() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  void send_all(const std::uint8_t* p, std::size_t n) {
    while (n > 0) {
      const auto k = ::send(fd_, p, n, MSG_NOSIGNAL);
      if (k < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol, std::string("send: ") + std::strerror(errno));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

  // Blocks until n bytes arrived or the deadline passed.
  void recv_exact(std::uint8_t* p, std::size_t n, std::chrono::steady_clock::time_point deadline) {
    while (n > 0) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) throw Error(Errc::protocol, "timed out waiting for peer");
      pollfd pfd{fd_, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol, std::string("poll: ") + std::strerror(errno));
      }
      if (rc == 0) continue;
      const auto k = ::recv(fd_, p, n, 0);
      if (k == 0) throw Error(Errc::protocol, "connection closed by peer");
      if (k < 0) {
        if (errno == EINTR) continue;
        throw Error(Errc::protocol, std::string("recv: ") + std::strerror(errno));
      }
      p += k;
      n -= static_cast<std::size_t>(k);
    }
  }

 private:
  int fd_ = -1;
};

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  if (f.payload.size() > kMaxPayload) throw Error(Errc::protocol, "frame too large");
  std::vector<std::uint8_t> out;
  out.reserve(5 + f.payload.size());
  const auto n = static_cast<std::uint32_t>(f.payload.size());
  for (int i = 3; i >= 0; --i) out.push_back(static_cast<std::uint8_t>(n >> (8 * i)));
  out.push_back(static_cast<std::uint8_t>(f.type));
  out.insert(out.end(), f.payload.begin(), f.payload.end());
  return out;
}

inline void send_frame(Socket& s, const Frame& f) {
  const auto bytes = encode_frame(f);
  s.send_all(bytes.data(), bytes.size());
}

inline Frame recv_frame(Socket& s, std::chrono::steady_clock::time_point deadline) {
  std::uint8_t head[5];
  s.recv_exact(head, 5, deadline);
  const std::uint32_t n = (std::uint32_t{head[0]} << 24) | (std::uint32_t{head[1]} << 16) |
                          (std::uint32_t{head[2]} << 8) | std::uint32_t{head[3]};
  if (n > kMaxPayload) throw Error(Errc::protocol, "frame length " + std::to_string(n) + " exceeds limit");
  const auto type = static_cast<FrameType>(head[4]);
  switch (type) {
    case FrameType::hello:
    case FrameType::config:
    case FrameType::global_weights:
    case FrameType::local_update:
    case FrameType::skip:
    case FrameType::round_ack:
    case FrameType::shutdown:
    case FrameType::error: break;
    default: throw Error(Errc::protocol, "unknown frame type " + std::to_string(head[4]));
  }
  Frame f{type, std::vector<std::uint8_t>(n)};
  if (n) s.recv_exact(f.payload.data(), n, deadline);
  return f;
}

struct Endpoint {
  std::string host;
  std::uint16_t port = 0;
};

/// "host:port"; the host may be empty for the wildcard address.
inline Endpoint parse_endpoint(std::string_view s) {
  const auto colon = s.rfind(':');
  if (colon == std::string_view::npos) throw Error(Errc::invalid_argument, "address must be host:port");
  Endpoint e{std::string(s.substr(0, colon)), 0};
  const auto port = s.substr(colon + 1);
  unsigned v = 0;
  auto [ptr, ec] = std::from_chars(port.data(), port.data() + port.size(), v);
  if (ec != std::errc() || ptr != port.data() + port.size() || v > 65535)
    throw Error(Errc::invalid_argument, "bad port in " + std::string(s));
  e.port = static_cast<std::uint16_t>(v);
  return e;
}

namespace detail {

inline addrinfo* resolve(const Endpoint& e, bool passive) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  if (passive) hints.ai_flags = AI_PASSIVE;
  addrinfo* res = nullptr;
  const auto port = std::to_string(e.port);
  const int rc = ::getaddrinfo(e.host.empty() ? nullptr : e.host.c_str(), port.c_str(), &hints, &res);
  if (rc != 0) throw Error(Errc::protocol, "cannot resolve " + e.host + ": " + ::gai_strerror(rc));
  return res;
}

inline void no_delay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace detail

class Listener {
 public:
  explicit Listener(const Endpoint& e) {
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> res(detail::resolve(e, true), ::freeaddrinfo);
    sock_ = Socket(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (!sock_.valid()) throw Error(Errc::protocol, std::string("socket: ") + std::strerror(errno));
    int one = 1;
    ::setsockopt(sock_.fd(), SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(sock_.fd(), res->ai_addr, res->ai_addrlen) != 0)
      throw Error(Errc::protocol, "bind " + e.host + ":" + std::to_string(e.port) + ": " + std::strerror(errno));
    if (::listen(sock_.fd(), 64) != 0) throw Error(Errc::protocol, std::string("listen: ") + std::strerror(errno));
  }

  std::uint16_t port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof addr;
    ::getsockname(sock_.fd(), reinterpret_cast<sockaddr*>(&addr), &len);
    return ntohs(addr.sin_port);
  }

  std::optional<Socket> accept(std::chrono::steady_clock::time_point deadline) {
    for (;;) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
      if (left.count() <= 0) return std::nullopt;
      pollfd pfd{sock_.fd(), POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
      if (rc < 0 && errno != EINTR) throw Error(Errc::protocol, std::string("poll: ") + std::strerror(errno));
      if (rc <= 0) continue;
      const int fd = ::accept(sock_.fd(), nullptr, nullptr);
      if (fd < 0) {
        if (errno == EINTR || errno == ECONNABORTED) continue;
        throw Error(Errc::protocol, std::string("accept: ") + std::strerror(errno));
      }
      detail::no_delay(fd);
      return Socket(fd);
    }
  }

 private:
  Socket sock_;
};

/// Connects, retrying until the deadline so clients may start before the server.
inline Socket connect_to(const Endpoint& e, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    std::unique_ptr<addrinfo, decltype(&::freeaddrinfo)> res(detail::resolve(e, false), ::freeaddrinfo);
    Socket s(::socket(res->ai_family, res->ai_socktype, res->ai_protocol));
    if (!s.valid()) throw Error(Errc::protocol, std::string("socket: ") + std::strerror(errno));
    if (::connect(s.fd(), res->ai_addr, res->ai_addrlen) == 0) {
      detail::no_delay(s.fd());
      return s;
    }
    if (std::chrono::steady_clock::now() >= deadline)
      throw Error(Errc::protocol, "connect " + e.host + ":" + std::to_string(e.port) + ": " + std::strerror(errno));
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  }
}

// ---------------------------------------------------------------------------
// Aggregator

struct ServerOptions {
  std::size_t client_count = 1;
  std::chrono::milliseconds registration_timeout{120000};
  std::chrono::milliseconds round_timeout{120000};
};

/// Server side of the protocol, usable as the round driver's executor.
class NetworkExecutor : public ClientExecutor {
 public:
  NetworkExecutor(Listener& listener, RoundConfig cfg, ServerOptions opts, FrameLog* log = nullptr)
      : listener_(listener), cfg_(std::move(cfg)), opts_(opts), log_(log) {}

  ~NetworkExecutor() override { shutdown(); }

  /// Waits for client_count distinct HELLOs. Duplicate ids receive ERROR.
  std::vector<std::string> accept_clients() {
    const auto deadline = std::chrono::steady_clock::now() + opts_.registration_timeout;
    while (peers_.size() < opts_.client_count) {
      auto sock = listener_.accept(deadline);
      if (!sock)
        throw Error(Errc::protocol, "registration timed out with " + std::to_string(peers_.size()) + " of " +
                                        std::to_string(opts_.client_count) + " clients");
      try {
        Frame f = recv_frame(*sock, deadline);
        if (log_) log_->add("", true, f);
        if (f.type != FrameType::hello) {
          reply_error(*sock, "", "expected HELLO");
          continue;
        }
        const auto id = parse_text(f);
        if (id.empty() || peers_.count(id)) {
          reply_error(*sock, id, "duplicate client id " + id);
          continue;
        }
        peers_.emplace(id, Peer{std::move(*sock), true});
      } catch (const Error&) {
        continue;  // peer vanished during HELLO
      }
    }
    std::vector<std::string> ids;
    for (const auto& [id, p] : peers_) ids.push_back(id);
    return ids;
  }

  void on_join(const std::string& client_id, const GlobalState&) override {
    if (!peers_.count(client_id)) throw Error(Errc::protocol, "client " + client_id + " is not connected");
  }

  std::vector<LocalUpdate> run_round(std::size_t round, const ParamSet& theta_g,
                                     const std::vector<std::string>& participants) override {
    const auto blob = encode_params(theta_g);
    ConfigMsg cm{static_cast<std::uint32_t>(cfg_.H), static_cast<std::uint32_t>(cfg_.W), cfg_.sigma,
                 static_cast<std::uint32_t>(cfg_.epochs_local), static_cast<std::uint32_t>(round), cfg_.seed};
    std::vector<LocalUpdate> out(participants.size());
    std::vector<std::thread> threads;
    const auto deadline = std::chrono::steady_clock::now() + opts_.round_timeout;
    for (std::size_t i = 0; i < participants.size(); ++i) {
      out[i].client_id = participants[i];
      threads.emplace_back([&, i] { out[i] = exchange(participants[i], cm, blob, theta_g, deadline); });
    }
    for (auto& t : threads) t.join();
    return out;
  }

  void shutdown() {
    for (auto& [id, p] : peers_)
      if (p.alive) {
        try {
          send_logged(id, p.sock, empty_frame(FrameType::shutdown));
        } catch (const Error&) {
        }
        p.alive = false;
        p.sock.close();
      }
  }

 private:
  struct Peer {
    Socket sock;
    bool alive = true;
  };

  void send_logged(const std::string& id, Socket& s, const Frame& f) {
    if (log_) log_->add(id, false, f);
    send_frame(s, f);
  }

  void reply_error(Socket& s, const std::string& id, const std::string& msg) {
    try {
      send_logged(id, s, error_frame(msg));
    } catch (const Error&) {
    }
  }

  LocalUpdate exchange(const std::string& id, const ConfigMsg& cm, const std::vector<std::uint8_t>& blob,
                       const ParamSet& theta_g, std::chrono::steady_clock::time_point deadline) {
    LocalUpdate up;
    up.client_id = id;
    up.status = UpdateStatus::dropped;
    auto& peer = peers_.at(id);
    if (!peer.alive) {
      up.reason = "connection lost earlier";
      return up;
    }
    try {
      send_logged(id, peer.sock, config_frame(cm));
      send_logged(id, peer.sock, {FrameType::global_weights, blob});
      Frame f = recv_frame(peer.sock, deadline);
      if (log_) log_->add(id, true, f);
      if (f.type == FrameType::skip) {
        up.status = UpdateStatus::skip;
        up.reason = parse_text(f);
      } else if (f.type == FrameType::local_update) {
        auto msg = parse_update(f);
        ParamSet cand;
        try {
          cand = decode_params(msg.blob);
        } catch (const Error& e) {
          throw Error(Errc::shape_mismatch, std::string("undecodable update: ") + e.what());
        }
        if (!same_shape(cand, theta_g)) throw Error(Errc::shape_mismatch, "update does not match global shape");
        up.status = UpdateStatus::ok;
        up.candidate = std::move(cand);
        up.sample_count = msg.sample_count;
        up.train_loss = msg.train_loss;
        up.test_r2 = msg.test_r2;
        up.test_mae = msg.test_mae;
      } else if (f.type == FrameType::error) {
        throw Error(Errc::protocol, "client error: " + parse_text(f));
      } else {
        throw Error(Errc::protocol, std::string("unexpected ") + std::string(frame_type_name(f.type)));
      }
      send_logged(id, peer.sock, empty_frame(FrameType::round_ack));
    } catch (const Error& e) {
      reply_error(peer.sock, id, e.what());
      peer.alive = false;
      peer.sock.close();
      up = LocalUpdate{};
      up.client_id = id;
      up.status = UpdateStatus::dropped;
      up.reason = e.what();
    }
    return up;
  }

  Listener& listener_;
  RoundConfig cfg_;
  ServerOptions opts_;
  FrameLog* log_;
  std::map<std::string, Peer> peers_;
};

// ---------------------------------------------------------------------------
// Client

struct ClientOptions {
  std::chrono::milliseconds connect_timeout{30000};
  std::chrono::milliseconds idle_timeout{600000};
};

/// Participates until SHUTDOWN. The client joins from its local copy of the
/// bootstrap model; CONFIG overrides the windowing, epochs and seed of cfg.
/// Returns the number of rounds served.
inline std::size_t run_client(const Endpoint& server, ClientState& cs, const ModelWeights& bootstrap,
                              RoundConfig cfg, const TrainConfig& tcfg, ClientOptions opts = {},
                              FrameLog* log = nullptr) {
  join(cs, bootstrap);
  Socket s = connect_to(server, std::chrono::steady_clock::now() + opts.connect_timeout);
  auto send = [&](const Frame& f) {
    if (log) log->add(cs.client_id, true, f);
    send_frame(s, f);
  };
  send(hello_frame(cs.client_id));
  ConfigMsg pending;
  bool have_config = false;
  std::size_t rounds = 0;
  for (;;) {
    Frame f = recv_frame(s, std::chrono::steady_clock::now() + opts.idle_timeout);
    if (log) log->add(cs.client_id, false, f);
    switch (f.type) {
      case FrameType::config:
        pending = parse_config(f);
        have_config = true;
        break;
      case FrameType::global_weights: {
        if (!have_config) throw Error(Errc::protocol, "GLOBAL_WEIGHTS before CONFIG");
        const bool window_changed = cfg.H != pending.H || cfg.W != pending.W || cfg.sigma != pending.sigma;
        cfg.H = pending.H;
        cfg.W = pending.W;
        cfg.sigma = pending.sigma;
        cfg.epochs_local = pending.epochs;
        cfg.seed = pending.seed;
        if (window_changed) cs.prepared.reset();
        const ParamSet theta_g = decode_params(f.payload);
        LocalUpdate up;
        try {
          up = client_local_round(cs, theta_g, cfg, tcfg, pending.round);
        } catch (const Error& e) {
          send(error_frame(e.what()));
          throw;
        }
        if (up.status == UpdateStatus::skip) {
          send(skip_frame(up.reason));
        } else {
          send(update_frame({encode_params(up.candidate), up.sample_count, up.train_loss, up.test_r2, up.test_mae}));
        }
        have_config = false;
        break;
      }
      case FrameType::round_ack: ++rounds; break;
      case FrameType::shutdown: return rounds;
      case FrameType::error: throw Error(Errc::protocol, "server error: " + parse_text(f));
      default: throw Error(Errc::protocol, std::string("unexpected ") + std::string(frame_type_name(f.type)));
    }
  }
}

}  // namespace fedtput::wire
