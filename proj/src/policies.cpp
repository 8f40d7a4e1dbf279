#include "explore/policies.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace explore {

CandidateSet enumerate_candidates(const ExplorationGraph& graph, const OccupancyGrid& grid, CellIndex start_cell,
                                  const PlannerOptions& planner) {
  CandidateSet out;
  if (graph.actions.empty()) return out;
  const ShortestPathTree tree(grid, start_cell, planner);
  std::vector<int> actions(graph.actions);
  std::sort(actions.begin(), actions.end());
  for (int id : actions) {
    const GraphNode& node = graph.node(id);
    const auto goal = grid.geometry.cell_at(node.position);
    std::optional<PlannedPath> path;
    if (goal) path = tree.path_to(*goal);
    if (!path) {
      out.warnings.push_back("frontier node " + std::to_string(id) + " is unreachable; dropped");
      continue;
    }
    path->goal_frontier_id = id;
    const double cost = path->length_m;
    out.candidates.push_back({id, std::move(*path), cost});
  }
  return out;
}

std::size_t nearest_frontier_select(std::span<const CandidateAction> candidates) {
  if (candidates.empty()) throw std::invalid_argument("nearest_frontier_select: no candidates");
  std::size_t best = 0;
  for (std::size_t k = 1; k < candidates.size(); ++k) {
    const auto& c = candidates[k];
    const auto& b = candidates[best];
    if (c.cost < b.cost || (c.cost == b.cost && c.node_id < b.node_id)) best = k;
  }
  return best;
}

std::size_t random_select(std::span<const CandidateAction> candidates, std::mt19937_64& rng) {
  if (candidates.empty()) throw std::invalid_argument("random_select: no candidates");
  std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
  return pick(rng);
}

Eigen::Matrix3d sequential_step_noise(const BeliefParams& params, double step_length, double resolution) {
  Eigen::Matrix3d q = Eigen::Vector3d(params.noise.sigma_trans * params.noise.sigma_trans,
                                      params.noise.sigma_trans * params.noise.sigma_trans,
                                      params.noise.sigma_rot * params.noise.sigma_rot)
                          .asDiagonal();
  if (params.ssm_sigma_scale > 0.0) {
    const double s2 = params.ssm_sigma_scale * params.ssm_sigma_scale;
    q *= s2 / (1.0 + s2);
  }
  return q * (step_length / resolution);
}

namespace {

Eigen::Matrix3d fuse(const Eigen::Matrix3d& cov, const Eigen::Matrix3d& other) {
  const Eigen::Matrix3d info = cov.inverse() + other.inverse();
  Eigen::Matrix3d out = info.inverse();
  return 0.5 * (out + out.transpose());
}

Eigen::Matrix3d covariance_of(double sigma_trans, double sigma_rot) {
  return Eigen::Vector3d(sigma_trans * sigma_trans, sigma_trans * sigma_trans, sigma_rot * sigma_rot).asDiagonal();
}

}  // namespace

BeliefPrediction belief_forward_simulate(const BeliefSnapshot& snapshot, const CandidateAction& candidate) {
  const GridGeometry& g = snapshot.grid.geometry;
  const BeliefParams& params = snapshot.params;
  const double step = params.step > 0.0 ? params.step : g.resolution;
  const Eigen::Vector2d start = snapshot.current_pose().translation();

  std::vector<Eigen::Vector2d> polyline{start};
  for (std::size_t k = 1; k < candidate.path.cells.size(); ++k) polyline.push_back(g.center(candidate.path.cells[k]));
  double total = 0.0;
  for (std::size_t k = 1; k < polyline.size(); ++k) total += (polyline[k] - polyline[k - 1]).norm();

  BeliefPrediction out;
  if (total < 1e-12) {
    out.waypoints.push_back(start);
  } else {
    std::size_t seg = 1;
    double seg_start = 0.0;
    for (double s = step;; s += step) {
      const bool last = s >= total - 1e-9;
      const double at = last ? total : s;
      while (seg + 1 < polyline.size() && seg_start + (polyline[seg] - polyline[seg - 1]).norm() < at) {
        seg_start += (polyline[seg] - polyline[seg - 1]).norm();
        ++seg;
      }
      const Eigen::Vector2d a = polyline[seg - 1], b = polyline[seg];
      const double len = (b - a).norm();
      const double t = len > 0.0 ? std::clamp((at - seg_start) / len, 0.0, 1.0) : 1.0;
      out.waypoints.push_back(a + t * (b - a));
      if (last) break;
    }
  }

  const LoopClosurePredictor predictor(snapshot.poses, snapshot.grid, snapshot.object_first_seen, params.loop,
                                       params.sensor);
  std::set<int> in_view;
  for (int o : predictor.visible_objects(start)) in_view.insert(o);

  const Eigen::Matrix3d r_pm = covariance_of(params.loop.sigma_pm_trans, params.loop.sigma_pm_rot);
  const Eigen::Matrix3d r_sm = covariance_of(params.loop.sigma_sm_trans, params.loop.sigma_sm_rot);
  out.vmap = snapshot.vmap;
  Eigen::Matrix3d cov = snapshot.current_cov();
  Eigen::Vector2d prev = start;
  std::vector<int> objects;
  for (const Eigen::Vector2d& wp : out.waypoints) {
    const double d = (wp - prev).norm();
    const std::vector<CellIndex> cells = predicted_visible_cells(snapshot.grid, wp, params.sensor, &objects);
    if (d > 0.0) {
      const double heading = std::atan2(wp.y() - prev.y(), wp.x() - prev.x());
      const Eigen::Matrix3d j = compose_jacobian_first(Pose2(prev.x(), prev.y(), heading), Pose2(d, 0.0, 0.0));
      cov = j * cov * j.transpose() + sequential_step_noise(params, d, g.resolution);
      if (auto pm = predictor.predict_pm(wp)) {
        cov = fuse(cov, snapshot.marginals[*pm] + r_pm);
        ++out.predicted_loop_closures;
      }
      for (int o : objects) {
        if (!in_view.insert(o).second) continue;
        const auto it = snapshot.object_first_seen.find(o);
        if (it == snapshot.object_first_seen.end() || it->second >= predictor.eligible_count()) continue;
        cov = fuse(cov, snapshot.marginals[it->second] + r_sm);
        ++out.predicted_loop_closures;
      }
    }
    update_virtual_map(out.vmap, cov.topLeftCorner<2, 2>(), cells, params.noise.sigma_range);
    out.covariances.push_back(cov);
    prev = wp;
  }
  out.utility = map_utility(out.vmap);
  return out;
}

namespace {

RawReward raw_reward_with(double u0, const BeliefSnapshot& snapshot, const CandidateAction& candidate) {
  RawReward r;
  r.u0 = u0;
  r.u_prime = belief_forward_simulate(snapshot, candidate).utility;
  r.cost = candidate.cost;
  r.alpha = snapshot.params.alpha;
  r.raw = r.u0 - r.u_prime - r.alpha * r.cost;
  return r;
}

}  // namespace

RawReward raw_reward(const BeliefSnapshot& snapshot, const CandidateAction& candidate) {
  return raw_reward_with(map_utility(snapshot.vmap), snapshot, candidate);
}

std::vector<RawReward> raw_rewards(const BeliefSnapshot& snapshot, std::span<const CandidateAction> candidates) {
  const double u0 = map_utility(snapshot.vmap);
  std::vector<RawReward> out;
  out.reserve(candidates.size());
  for (const CandidateAction& c : candidates) out.push_back(raw_reward_with(u0, snapshot, c));
  return out;
}

std::size_t argmax_reward(std::span<const double> raws, std::span<const CandidateAction> candidates) {
  if (raws.empty() || raws.size() != candidates.size()) throw std::invalid_argument("argmax_reward: empty or mismatched input");
  std::size_t best = 0;
  for (std::size_t k = 1; k < raws.size(); ++k)
    if (raws[k] > raws[best] || (raws[k] == raws[best] && candidates[k].node_id < candidates[best].node_id)) best = k;
  return best;
}

std::size_t em_select(std::span<const CandidateAction> candidates, const BeliefSnapshot& snapshot) {
  if (candidates.empty()) throw std::invalid_argument("em_select: no candidates");
  std::vector<double> raws;
  for (const RawReward& r : raw_rewards(snapshot, candidates)) raws.push_back(r.raw);
  return argmax_reward(raws, candidates);
}

const char* to_string(RewardRange r) { return r == RewardRange::nearest_is_best ? "[-1,0]" : "[-1,1]"; }

bool RewardBreakdown::within_range() const {
  const double hi = range == RewardRange::nearest_is_best ? 0.0 : 1.0;
  return normalized >= -1.0 - 1e-12 && normalized <= hi + 1e-12;
}

double normalize_reward(std::span<const double> raws, std::size_t chosen, std::size_t nearest, RewardRange* range) {
  if (raws.empty()) throw std::invalid_argument("normalize_reward: empty reward pool");
  if (chosen >= raws.size() || nearest >= raws.size()) throw std::out_of_range("normalize_reward: index out of range");
  const auto [lo_it, hi_it] = std::minmax_element(raws.begin(), raws.end());
  const double lo = *lo_it, hi = *hi_it;
  const double r = hi == lo ? 1.0 : (raws[chosen] - lo) / (hi - lo);
  if (raws[nearest] == hi) {
    if (range) *range = RewardRange::nearest_is_best;
    return r - 1.0;
  }
  if (range) *range = RewardRange::other_is_best;
  return 2.0 * r - 1.0;
}

RewardBreakdown normalized_reward(std::span<const RawReward> raws, std::span<const CandidateAction> candidates,
                                  std::size_t chosen) {
  if (candidates.empty()) throw std::invalid_argument("normalized_reward: no candidates");
  std::vector<double> values;
  for (const RawReward& r : raws) values.push_back(r.raw);
  RewardBreakdown out;
  const RawReward& c = raws[chosen];
  out.u0 = c.u0;
  out.u_prime = c.u_prime;
  out.cost = c.cost;
  out.alpha = c.alpha;
  out.raw = c.raw;
  out.normalized = normalize_reward(values, chosen, nearest_frontier_select(candidates), &out.range);
  return out;
}

RewardBreakdown normalized_reward(const BeliefSnapshot& snapshot, std::span<const CandidateAction> candidates,
                                  std::size_t chosen) {
  const std::vector<RawReward> raws = raw_rewards(snapshot, candidates);
  return normalized_reward(raws, candidates, chosen);
}

}  // namespace explore
