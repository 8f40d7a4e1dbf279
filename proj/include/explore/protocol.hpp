#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "explore/runner.hpp"

// Newline-delimited JSON messages between the simulator and a policy peer.
// Field names and ordering are listed in the README.
namespace explore::protocol {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::chrono::milliseconds kDefaultTimeout{30000};
inline constexpr int kMaxSessionErrors = 3;

enum class ReceiveStatus { ok, timeout, closed };

struct Received {
  ReceiveStatus status = ReceiveStatus::closed;
  std::string line;  // without the trailing newline
};

class LineChannel {
 public:
  virtual ~LineChannel() = default;
  /// False when the peer is gone.
  virtual bool send_line(std::string_view line) = 0;
  virtual Received receive_line(std::chrono::milliseconds timeout) = 0;
};

/// Line channel over a socket or a pair of pipe descriptors.
class FdChannel : public LineChannel {
 public:
  FdChannel(int read_fd, int write_fd, bool owns_fds);
  explicit FdChannel(int socket_fd) : FdChannel(socket_fd, socket_fd, true) {}
  ~FdChannel() override;
  FdChannel(const FdChannel&) = delete;
  FdChannel& operator=(const FdChannel&) = delete;

  bool send_line(std::string_view line) override;
  Received receive_line(std::chrono::milliseconds timeout) override;

 private:
  int read_fd_;
  int write_fd_;
  bool owns_;
  bool eof_ = false;
  std::string buffer_;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Endpoint {
  enum class Kind { tcp, stdio };
  Kind kind = Kind::tcp;
  std::string host = "127.0.0.1";
  std::uint16_t port = 7788;
};

/// "stdio" or "tcp:HOST:PORT".
Endpoint parse_endpoint(std::string_view text);
std::string to_string(const Endpoint& e);

std::unique_ptr<FdChannel> connect_tcp(const std::string& host, std::uint16_t port);

class TcpListener {
 public:
  /// Port 0 picks a free port; see port().
  TcpListener(const std::string& host, std::uint16_t port);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  std::unique_ptr<FdChannel> accept();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

/// Error codes carried by error messages.
namespace code {
inline constexpr const char* malformed = "malformed";
inline constexpr const char* unsupported_version = "unsupported_version";
inline constexpr const char* unknown_type = "unknown_type";
inline constexpr const char* unexpected_type = "unexpected_type";
inline constexpr const char* bad_action = "bad_action";
inline constexpr const char* timeout = "timeout";
}  // namespace code

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(std::string code, const std::string& detail)
      : std::runtime_error(code + ": " + detail), code_(std::move(code)), detail_(detail) {}
  const std::string& code() const { return code_; }
  const std::string& detail() const { return detail_; }

 private:
  std::string code_;
  std::string detail_;
};

struct Message {
  std::string type;
  nlohmann::json body;
};

/// Parses one line; throws ProtocolError (malformed, unsupported_version, unknown_type).
Message parse_message(std::string_view line);

struct EpisodeSummary {
  TerminalReason reason = TerminalReason::abort;
  int steps = 0;
  double coverage = 0.0;
  double distance = 0.0;
  double map_error = 0.0;
};

EpisodeSummary summarize(const EpisodeLog& log);
/// Normalized reward of the last decision, if any.
std::optional<double> last_reward(const EpisodeLog& log);

std::string make_reset(int episode, std::uint64_t seed);
std::string make_graph(int episode, int step, const ExplorationGraph& graph, std::optional<double> reward_prev);
std::string make_action(int node_id);
std::string make_episode_end(int episode, std::optional<double> reward_prev, const EpisodeSummary& metrics);
std::string make_error(std::string_view code, std::string_view detail);

/// Action node id from an action message; throws ProtocolError(malformed) when absent.
int action_node_id(const Message& m);

/// Client side of one decision: push the graph, wait for an action and map it to a candidate.
/// Any protocol failure sends an error reply (when the peer is still there) and aborts.
PolicyReply external_select(LineChannel& channel, const DecisionContext& context,
                            std::chrono::milliseconds timeout = kDefaultTimeout);

/// Runs episodes with decisions delegated to the peer: reset, graphs, episode_end per episode.
std::vector<EpisodeLog> run_external_episodes(const GroundTruthWorld& world, const EpisodeConfig& base, int episodes,
                                              LineChannel& channel, const std::filesystem::path& out_dir,
                                              std::chrono::milliseconds timeout = kDefaultTimeout);

struct SessionOptions {
  std::chrono::milliseconds action_timeout = kDefaultTimeout;
  /// Wait for the next reset; zero or negative waits indefinitely.
  std::chrono::milliseconds idle_timeout{0};
  int max_errors = kMaxSessionErrors;
};

struct SessionStats {
  int episodes = 0;
  int errors = 0;
  bool dropped = false;  // ended by the error limit
};

/// Serves one peer: each reset runs an episode on `world` whose decisions come from the peer.
/// Returns when the peer closes or after max_errors error replies.
SessionStats serve_session(LineChannel& channel, const GroundTruthWorld& world, const EpisodeConfig& base,
                           const SessionOptions& options = {});

/// stdio: one session on stdin/stdout. tcp: sessions one connection at a time;
/// max_sessions > 0 stops after that many.
void serve_endpoint(const Endpoint& endpoint, const GroundTruthWorld& world, const EpisodeConfig& base,
                    const SessionOptions& options = {}, int max_sessions = 0);

}  // namespace explore::protocol
