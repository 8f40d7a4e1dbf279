#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "explore/exploration_graph.hpp"
#include "explore/planning.hpp"
#include "explore/policies.hpp"
#include "explore/slam.hpp"
#include "explore/world.hpp"

namespace explore {

inline constexpr int kLogSchemaVersion = 1;
inline constexpr const char* kCodeVersion = "explore 1.0.0";

enum class PolicyKind { nf, random, em, external };

const char* to_string(PolicyKind kind);
PolicyKind parse_policy(std::string_view name);

struct SlamParams {
  int k_overlap = 5;            // shared cells between consecutive scans needed for a scan-matching factor
  double ssm_sigma_scale = 0.5;  // scan-matching noise relative to odometry
  double sigma_prior = 1e-3;
  int max_iters = 50;
};

struct EpisodeConfig {
  std::string env_name;
  PolicyKind policy = PolicyKind::nf;
  std::uint64_t seed = 0;
  int episode = 0;
  int max_steps = 200;
  double coverage_target = 0.85;
  double alpha = 0.05;
  NoiseParams noise;
  SensorParams sensor;
  LoopClosureParams loop;
  SlamParams slam;
  PlannerOptions planner;
  int min_frontier_size = 2;
  int max_controls_per_action = 400;
  bool check_invariants = false;

  /// Throws std::invalid_argument on out-of-range values.
  void validate() const;
  BeliefParams belief_params() const;
};

enum class TerminalReason { coverage, no_frontiers, max_steps, abort };

const char* to_string(TerminalReason reason);
TerminalReason parse_terminal_reason(std::string_view name);

struct DecisionRecord {
  int step = 0;
  std::string graph;  // canonical wire text
  int action = -1;
  std::size_t candidate_count = 0;
  RewardBreakdown reward;
  Pose2 true_pose;
  Pose2 est_pose;
  double coverage = 0.0;
  double map_error = 0.0;
  double distance = 0.0;
  double wall_time_s = 0.0;  // not part of the JSONL log
};

struct LoopClosureCounts {
  int ssm = 0;
  int pm = 0;
  int sm = 0;
};

struct TerminalRecord {
  TerminalReason reason = TerminalReason::abort;
  std::string detail;
  int steps = 0;
  double coverage = 0.0;
  double distance = 0.0;
  double map_error = 0.0;
  std::size_t occupancy_mismatch = 0;
  LoopClosureCounts loop_closures;
  std::vector<Pose2> trajectory_true;
  std::vector<Pose2> trajectory_est;
  std::vector<std::string> invariant_violations;
};

struct EpisodeLog {
  EpisodeConfig config;
  std::vector<DecisionRecord> decisions;
  std::optional<TerminalRecord> terminal;
  std::vector<std::string> warnings;

  /// One JSON object per line: header, decisions, terminal.
  std::string to_jsonl() const;
  static EpisodeLog from_jsonl(std::istream& in);
  void write_timing_csv(std::ostream& out) const;
};

struct DecisionContext {
  int episode = 0;
  int step = 0;
  const ExplorationGraph& graph;
  std::span<const CandidateAction> candidates;
  std::optional<double> reward_prev;
};

/// Chosen action node id, or nullopt with a diagnostic to abort the episode.
struct PolicyReply {
  std::optional<int> node_id;
  std::string diagnostic;
};

using ExternalPolicy = std::function<PolicyReply(const DecisionContext&)>;

/// Runs one episode: sense, SLAM update, mapping, frontiers, exploration graph, policy,
/// reward, and step-by-step path execution, until coverage, no frontiers, or max_steps.
EpisodeLog run_episode(const GroundTruthWorld& world, const EpisodeConfig& config,
                       const ExternalPolicy* external = nullptr);

struct Metrics {
  TerminalReason reason = TerminalReason::abort;
  int steps = 0;
  double map_error = 0.0;  // mean absolute trajectory position error at termination
  std::size_t occupancy_mismatch = 0;
  double total_distance = 0.0;
  double final_coverage = 0.0;
  std::vector<std::pair<double, double>> coverage_curve;  // (distance, coverage)
  LoopClosureCounts loop_closures;
  std::vector<double> decision_wall_time_s;
};

/// Throws std::runtime_error for a log without a terminal record.
Metrics compute_metrics(const EpisodeLog& log);

double mean_position_error(std::span<const Pose2> estimated, std::span<const Pose2> truth);

/// Runs `episodes` episodes (seed + k, episode k) on up to `parallel` threads, writing
/// episode_NNNN.jsonl and episode_NNNN.timing.csv into `out_dir` when it is non-empty.
std::vector<EpisodeLog> run_episodes(const GroundTruthWorld& world, const EpisodeConfig& base, int episodes,
                                     int parallel, const std::filesystem::path& out_dir);

}  // namespace explore
