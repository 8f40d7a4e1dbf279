#pragma once

#include <cstddef>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "explore/exploration_graph.hpp"
#include "explore/mapping.hpp"
#include "explore/planning.hpp"
#include "explore/slam.hpp"
#include "explore/world.hpp"

namespace explore {

struct CandidateAction {
  int node_id = 0;
  PlannedPath path;
  double cost = 0.0;  // == path.length_m
};

struct CandidateSet {
  std::vector<CandidateAction> candidates;  // ordered by node id
  std::vector<std::string> warnings;
};

/// One planned candidate per action node; frontiers unreachable from `start_cell` are dropped
/// with a warning. A single Dijkstra tree serves every goal.
CandidateSet enumerate_candidates(const ExplorationGraph& graph, const OccupancyGrid& grid, CellIndex start_cell,
                                  const PlannerOptions& planner = {});

/// Index of the cheapest candidate; ties go to the smaller node id.
std::size_t nearest_frontier_select(std::span<const CandidateAction> candidates);
std::size_t random_select(std::span<const CandidateAction> candidates, std::mt19937_64& rng);

struct BeliefParams {
  NoiseParams noise;
  SensorParams sensor;
  LoopClosureParams loop;
  double alpha = 0.05;           // reward weight per meter of travel
  double step = 0.0;             // waypoint spacing; <= 0 means the map resolution
  double ssm_sigma_scale = 0.5;  // sequential scan matching noise relative to odometry; <= 0 disables
};

/// Value copy of everything the forward simulation reads. The last pose is the current one.
struct BeliefSnapshot {
  OccupancyGrid grid;
  VirtualMap vmap;
  std::vector<Pose2> poses;
  std::vector<Eigen::Matrix3d> marginals;
  std::map<int, std::size_t> object_first_seen;
  BeliefParams params;

  const Pose2& current_pose() const { return poses.back(); }
  const Eigen::Matrix3d& current_cov() const { return marginals.back(); }
};

struct BeliefPrediction {
  std::vector<Eigen::Vector2d> waypoints;
  std::vector<Eigen::Matrix3d> covariances;  // one per waypoint
  VirtualMap vmap;
  double utility = 0.0;  // U' of the predicted virtual map
  int predicted_loop_closures = 0;
};

/// Per-step process noise used by the prediction: odometry fused with sequential scan
/// matching, scaled by step length / resolution.
Eigen::Matrix3d sequential_step_noise(const BeliefParams& params, double step_length, double resolution);

BeliefPrediction belief_forward_simulate(const BeliefSnapshot& snapshot, const CandidateAction& candidate);

struct RawReward {
  double u0 = 0.0;
  double u_prime = 0.0;
  double cost = 0.0;
  double alpha = 0.0;
  double raw = 0.0;
};

RawReward raw_reward(const BeliefSnapshot& snapshot, const CandidateAction& candidate);
/// Raw rewards for all candidates, in candidate order.
std::vector<RawReward> raw_rewards(const BeliefSnapshot& snapshot, std::span<const CandidateAction> candidates);

/// Index of the highest raw reward; ties go to the smaller node id.
std::size_t argmax_reward(std::span<const double> raws, std::span<const CandidateAction> candidates);
std::size_t em_select(std::span<const CandidateAction> candidates, const BeliefSnapshot& snapshot);

enum class RewardRange { nearest_is_best, other_is_best };  // [-1, 0] and [-1, 1]

const char* to_string(RewardRange r);

struct RewardBreakdown {
  double u0 = 0.0;
  double u_prime = 0.0;
  double cost = 0.0;
  double alpha = 0.0;
  double raw = 0.0;
  double normalized = 0.0;
  RewardRange range = RewardRange::nearest_is_best;

  bool within_range() const;
};

/// Linear normalization of `raws[chosen]` over the candidate pool, projected to [-1, 0] when the
/// nearest frontier holds the maximum raw reward and to [-1, 1] otherwise (r = 1 when all equal).
double normalize_reward(std::span<const double> raws, std::size_t chosen, std::size_t nearest,
                        RewardRange* range = nullptr);

RewardBreakdown normalized_reward(std::span<const RawReward> raws, std::span<const CandidateAction> candidates,
                                  std::size_t chosen);
RewardBreakdown normalized_reward(const BeliefSnapshot& snapshot, std::span<const CandidateAction> candidates,
                                  std::size_t chosen);

}  // namespace explore
