#include "explore/protocol.hpp"

#include <algorithm>
#include <arpa/inet.h>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sstream>
#include <sys/socket.h>
#include <unistd.h>

namespace explore::protocol {

FdChannel::FdChannel(int read_fd, int write_fd, bool owns_fds) : read_fd_(read_fd), write_fd_(write_fd), owns_(owns_fds) {}

FdChannel::~FdChannel() {
  if (!owns_) return;
  ::close(read_fd_);
  if (write_fd_ != read_fd_) ::close(write_fd_);
}

bool FdChannel::send_line(std::string_view line) {
  std::string data(line);
  data += '\n';
  std::size_t sent = 0;
  while (sent < data.size()) {
    ssize_t n = ::send(write_fd_, data.data() + sent, data.size() - sent, MSG_NOSIGNAL);
    if (n < 0 && errno == ENOTSOCK) n = ::write(write_fd_, data.data() + sent, data.size() - sent);
    if (n < 0) {
      if (errno == EINTR) continue;
      return false;
    }
    sent += static_cast<std::size_t>(n);
  }
  return true;
}

Received FdChannel::receive_line(std::chrono::milliseconds timeout) {
  using clock = std::chrono::steady_clock;
  const bool forever = timeout.count() <= 0;
  const auto deadline = clock::now() + timeout;
  while (true) {
    if (const auto nl = buffer_.find('\n'); nl != std::string::npos) {
      Received r{ReceiveStatus::ok, buffer_.substr(0, nl)};
      buffer_.erase(0, nl + 1);
      if (!r.line.empty() && r.line.back() == '\r') r.line.pop_back();
      return r;
    }
    if (eof_) return {ReceiveStatus::closed, {}};
    int wait_ms = -1;
    if (!forever) {
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - clock::now()).count();
      if (left <= 0) return {ReceiveStatus::timeout, {}};
      wait_ms = static_cast<int>(std::min<long long>(left, 1 << 30));
    }
    pollfd p{read_fd_, POLLIN, 0};
    const int rc = ::poll(&p, 1, wait_ms);
    if (rc < 0) {
      if (errno == EINTR) continue;
      return {ReceiveStatus::closed, {}};
    }
    if (rc == 0) return {ReceiveStatus::timeout, {}};
    char buf[4096];
    const ssize_t n = ::read(read_fd_, buf, sizeof buf);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      eof_ = true;
    } else if (n == 0) {
      eof_ = true;
    } else {
      buffer_.append(buf, static_cast<std::size_t>(n));
    }
  }
}

Endpoint parse_endpoint(std::string_view text) {
  Endpoint e;
  if (text == "stdio") {
    e.kind = Endpoint::Kind::stdio;
    return e;
  }
  if (!text.starts_with("tcp:")) throw std::invalid_argument("endpoint must be stdio or tcp:HOST:PORT");
  const std::string_view rest = text.substr(4);
  const auto colon = rest.rfind(':');
  if (colon == std::string_view::npos || colon == 0) throw std::invalid_argument("endpoint must be tcp:HOST:PORT");
  e.host = std::string(rest.substr(0, colon));
  const std::string port(rest.substr(colon + 1));
  std::size_t used = 0;
  long value = -1;
  try {
    value = std::stol(port, &used);
  } catch (const std::exception&) {
  }
  if (used != port.size() || value < 0 || value > 65535) throw std::invalid_argument("bad port '" + port + "'");
  e.port = static_cast<std::uint16_t>(value);
  return e;
}

std::string to_string(const Endpoint& e) {
  return e.kind == Endpoint::Kind::stdio ? "stdio" : "tcp:" + e.host + ":" + std::to_string(e.port);
}

namespace {

sockaddr_in resolve(const std::string& host, std::uint16_t port) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (const int rc = ::getaddrinfo(host.c_str(), nullptr, &hints, &res); rc != 0)
    throw TransportError("cannot resolve " + host + ": " + ::gai_strerror(rc));
  sockaddr_in addr = *reinterpret_cast<sockaddr_in*>(res->ai_addr);
  ::freeaddrinfo(res);
  addr.sin_port = htons(port);
  return addr;
}

}  // namespace

std::unique_ptr<FdChannel> connect_tcp(const std::string& host, std::uint16_t port) {
  const sockaddr_in addr = resolve(host, port);
  const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  if (::connect(fd, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0) {
    const int err = errno;
    ::close(fd);
    throw TransportError("connect " + host + ":" + std::to_string(port) + ": " + std::strerror(err));
  }
  const int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  return std::make_unique<FdChannel>(fd);
}

TcpListener::TcpListener(const std::string& host, std::uint16_t port) {
  const sockaddr_in addr = resolve(host, port);
  fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (fd_ < 0) throw TransportError(std::string("socket: ") + std::strerror(errno));
  const int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
  if (::bind(fd_, reinterpret_cast<const sockaddr*>(&addr), sizeof addr) != 0 || ::listen(fd_, 4) != 0) {
    const int err = errno;
    ::close(fd_);
    throw TransportError("bind " + host + ":" + std::to_string(port) + ": " + std::strerror(err));
  }
  sockaddr_in bound{};
  socklen_t len = sizeof bound;
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<FdChannel> TcpListener::accept() {
  while (true) {
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd >= 0) {
      const int one = 1;
      ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
      return std::make_unique<FdChannel>(fd);
    }
    if (errno != EINTR) throw TransportError(std::string("accept: ") + std::strerror(errno));
  }
}

Message parse_message(std::string_view line) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) throw ProtocolError(code::malformed, "not valid JSON");
  if (!j.is_object()) throw ProtocolError(code::malformed, "message is not an object");
  if (!j.contains("v") || !j["v"].is_number_integer()) throw ProtocolError(code::malformed, "missing integer field v");
  if (j["v"].get<long long>() != kProtocolVersion)
    throw ProtocolError(code::unsupported_version, "expected v=" + std::to_string(kProtocolVersion));
  if (!j.contains("type") || !j["type"].is_string()) throw ProtocolError(code::malformed, "missing string field type");
  const std::string type = j["type"].get<std::string>();
  static const char* const known[] = {"reset", "graph", "action", "episode_end", "error"};
  if (std::find(std::begin(known), std::end(known), type) == std::end(known))
    throw ProtocolError(code::unknown_type, "unknown message type '" + type + "'");
  return {type, std::move(j)};
}

EpisodeSummary summarize(const EpisodeLog& log) {
  EpisodeSummary s;
  if (!log.terminal) return s;
  s.reason = log.terminal->reason;
  s.steps = log.terminal->steps;
  s.coverage = log.terminal->coverage;
  s.distance = log.terminal->distance;
  s.map_error = log.terminal->map_error;
  return s;
}

std::optional<double> last_reward(const EpisodeLog& log) {
  if (log.decisions.empty()) return std::nullopt;
  return log.decisions.back().reward.normalized;
}

namespace {

std::string head(std::string_view type) {
  return "{\"v\":" + std::to_string(kProtocolVersion) + ",\"type\":\"" + std::string(type) + "\"";
}

std::string optional_number(std::optional<double> v) { return v ? format_number(*v) : "null"; }

}  // namespace

std::string make_reset(int episode, std::uint64_t seed) {
  return head("reset") + ",\"episode\":" + std::to_string(episode) + ",\"seed\":" + std::to_string(seed) + "}";
}

std::string make_graph(int episode, int step, const ExplorationGraph& graph, std::optional<double> reward_prev) {
  std::string out = head("graph") + ",\"episode\":" + std::to_string(episode) + ",\"step\":" + std::to_string(step) + ',';
  append_graph_fields(out, graph);
  out += ",\"reward_prev\":" + optional_number(reward_prev) + ",\"done\":false}";
  return out;
}

std::string make_action(int node_id) { return head("action") + ",\"node_id\":" + std::to_string(node_id) + "}"; }

std::string make_episode_end(int episode, std::optional<double> reward_prev, const EpisodeSummary& m) {
  return head("episode_end") + ",\"episode\":" + std::to_string(episode) + ",\"reward_prev\":" +
         optional_number(reward_prev) + ",\"metrics\":{\"reason\":\"" + to_string(m.reason) +
         "\",\"steps\":" + std::to_string(m.steps) + ",\"coverage\":" + format_number(m.coverage) +
         ",\"distance\":" + format_number(m.distance) + ",\"map_error\":" + format_number(m.map_error) +
         "},\"done\":true}";
}

std::string make_error(std::string_view code, std::string_view detail) {
  nlohmann::ordered_json j;
  j["v"] = kProtocolVersion;
  j["type"] = "error";
  j["code"] = std::string(code);
  j["detail"] = std::string(detail);
  return j.dump();
}

int action_node_id(const Message& m) {
  if (!m.body.contains("node_id") || !m.body["node_id"].is_number_integer())
    throw ProtocolError(code::malformed, "action needs an integer node_id");
  const long long id = m.body["node_id"].get<long long>();
  if (id < std::numeric_limits<int>::min() || id > std::numeric_limits<int>::max())
    throw ProtocolError(code::bad_action, "node id out of range");
  return static_cast<int>(id);
}

namespace {

bool is_candidate(const DecisionContext& ctx, int id) {
  return std::any_of(ctx.candidates.begin(), ctx.candidates.end(), [&](const CandidateAction& c) { return c.node_id == id; });
}

std::string peer_error_detail(const Message& m) {
  const std::string c = m.body.value("code", std::string("?"));
  const std::string d = m.body.value("detail", std::string());
  return "peer error " + c + (d.empty() ? "" : ": " + d);
}

}  // namespace

PolicyReply external_select(LineChannel& channel, const DecisionContext& ctx, std::chrono::milliseconds timeout) {
  if (!channel.send_line(make_graph(ctx.episode, ctx.step, ctx.graph, ctx.reward_prev)))
    return {std::nullopt, "peer disconnected"};
  const Received r = channel.receive_line(timeout);
  if (r.status == ReceiveStatus::closed) return {std::nullopt, "peer disconnected mid-episode"};
  if (r.status == ReceiveStatus::timeout) {
    channel.send_line(make_error(code::timeout, "no action within " + std::to_string(timeout.count()) + " ms"));
    return {std::nullopt, "timed out waiting for an action"};
  }
  try {
    const Message m = parse_message(r.line);
    if (m.type == "error") return {std::nullopt, peer_error_detail(m)};
    if (m.type != "action") throw ProtocolError(code::unexpected_type, "expected action, got " + m.type);
    const int id = action_node_id(m);
    if (!is_candidate(ctx, id)) throw ProtocolError(code::bad_action, "node " + std::to_string(id) + " is not an action");
    return {id, {}};
  } catch (const ProtocolError& e) {
    channel.send_line(make_error(e.code(), e.detail()));
    return {std::nullopt, std::string("protocol error ") + e.what()};
  }
}

namespace {

void write_log(const std::filesystem::path& dir, int k, const EpisodeLog& log) {
  if (dir.empty()) return;
  std::ostringstream name;
  name << "episode_" << std::setw(4) << std::setfill('0') << k;
  std::ofstream(dir / (name.str() + ".jsonl")) << log.to_jsonl();
  std::ofstream timing(dir / (name.str() + ".timing.csv"));
  log.write_timing_csv(timing);
}

}  // namespace

std::vector<EpisodeLog> run_external_episodes(const GroundTruthWorld& world, const EpisodeConfig& base, int episodes,
                                              LineChannel& channel, const std::filesystem::path& out_dir,
                                              std::chrono::milliseconds timeout) {
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::vector<EpisodeLog> logs;
  const ExternalPolicy policy = [&](const DecisionContext& ctx) { return external_select(channel, ctx, timeout); };
  for (int k = 0; k < episodes; ++k) {
    EpisodeConfig cfg = base;
    cfg.policy = PolicyKind::external;
    cfg.episode = k;
    cfg.seed = base.seed + static_cast<std::uint64_t>(k);
    if (!channel.send_line(make_reset(k, cfg.seed))) break;
    EpisodeLog log = run_episode(world, cfg, &policy);
    const bool ok = channel.send_line(make_episode_end(k, last_reward(log), summarize(log)));
    write_log(out_dir, k, log);
    const bool aborted = log.terminal && log.terminal->reason == TerminalReason::abort;
    logs.push_back(std::move(log));
    if (!ok || aborted) break;
  }
  return logs;
}

SessionStats serve_session(LineChannel& channel, const GroundTruthWorld& world, const EpisodeConfig& base,
                           const SessionOptions& options) {
  SessionStats stats;
  bool closed = false;
  auto reply_error = [&](const std::string& c, const std::string& detail) {
    ++stats.errors;
    if (!channel.send_line(make_error(c, detail))) closed = true;
    if (stats.errors >= options.max_errors) stats.dropped = true;
  };

  const ExternalPolicy policy = [&](const DecisionContext& ctx) -> PolicyReply {
    if (!channel.send_line(make_graph(ctx.episode, ctx.step, ctx.graph, ctx.reward_prev))) {
      closed = true;
      return {std::nullopt, "peer disconnected"};
    }
    while (true) {
      const Received r = channel.receive_line(options.action_timeout);
      if (r.status == ReceiveStatus::closed) {
        closed = true;
        return {std::nullopt, "peer disconnected mid-episode"};
      }
      if (r.status == ReceiveStatus::timeout) {
        reply_error(code::timeout, "no action within " + std::to_string(options.action_timeout.count()) + " ms");
        return {std::nullopt, "timed out waiting for an action"};
      }
      try {
        const Message m = parse_message(r.line);
        if (m.type != "action") throw ProtocolError(code::unexpected_type, "expected action, got " + m.type);
        const int id = action_node_id(m);
        if (!is_candidate(ctx, id)) throw ProtocolError(code::bad_action, "node " + std::to_string(id) + " is not an action");
        return {id, {}};
      } catch (const ProtocolError& e) {
        reply_error(e.code(), e.detail());
        if (closed || stats.dropped) return {std::nullopt, "session dropped after protocol errors"};
      }
    }
  };

  while (!closed && !stats.dropped) {
    const Received r = channel.receive_line(options.idle_timeout);
    if (r.status == ReceiveStatus::closed) break;
    if (r.status == ReceiveStatus::timeout) {
      reply_error(code::timeout, "no reset received");
      break;
    }
    try {
      const Message m = parse_message(r.line);
      if (m.type != "reset") throw ProtocolError(code::unexpected_type, "expected reset, got " + m.type);
      const auto& b = m.body;
      if (!b.contains("episode") || !b["episode"].is_number_integer() || !b.contains("seed") ||
          !b["seed"].is_number_unsigned())
        throw ProtocolError(code::malformed, "reset needs integer episode and non-negative integer seed");
      EpisodeConfig cfg = base;
      cfg.policy = PolicyKind::external;
      cfg.episode = b["episode"].get<int>();
      cfg.seed = b["seed"].get<std::uint64_t>();
      if (cfg.episode < 0) throw ProtocolError(code::malformed, "episode must be >= 0");
      const EpisodeLog log = run_episode(world, cfg, &policy);
      ++stats.episodes;
      if (closed) break;
      if (!channel.send_line(make_episode_end(cfg.episode, last_reward(log), summarize(log)))) break;
    } catch (const ProtocolError& e) {
      reply_error(e.code(), e.detail());
    }
  }
  return stats;
}

void serve_endpoint(const Endpoint& endpoint, const GroundTruthWorld& world, const EpisodeConfig& base,
                    const SessionOptions& options, int max_sessions) {
  if (endpoint.kind == Endpoint::Kind::stdio) {
    FdChannel channel(STDIN_FILENO, STDOUT_FILENO, false);
    serve_session(channel, world, base, options);
    return;
  }
  TcpListener listener(endpoint.host, endpoint.port);
  for (int served = 0; max_sessions <= 0 || served < max_sessions; ++served) {
    auto channel = listener.accept();
    serve_session(*channel, world, base, options);
  }
}

}  // namespace explore::protocol
