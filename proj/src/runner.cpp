#include "explore/runner.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <stdexcept>
#include <thread>

#include <Eigen/Eigenvalues>
#include <nlohmann/json.hpp>

namespace explore {

const char* to_string(PolicyKind kind) {
  switch (kind) {
    case PolicyKind::nf: return "nf";
    case PolicyKind::random: return "random";
    case PolicyKind::em: return "em";
    case PolicyKind::external: return "external";
  }
  return "unknown";
}

PolicyKind parse_policy(std::string_view name) {
  if (name == "nf") return PolicyKind::nf;
  if (name == "random") return PolicyKind::random;
  if (name == "em") return PolicyKind::em;
  if (name == "external") return PolicyKind::external;
  throw std::invalid_argument("unknown policy '" + std::string(name) + "'");
}

const char* to_string(TerminalReason reason) {
  switch (reason) {
    case TerminalReason::coverage: return "coverage";
    case TerminalReason::no_frontiers: return "no_frontiers";
    case TerminalReason::max_steps: return "max_steps";
    case TerminalReason::abort: return "abort";
  }
  return "unknown";
}

TerminalReason parse_terminal_reason(std::string_view name) {
  if (name == "coverage") return TerminalReason::coverage;
  if (name == "no_frontiers") return TerminalReason::no_frontiers;
  if (name == "max_steps") return TerminalReason::max_steps;
  if (name == "abort") return TerminalReason::abort;
  throw std::invalid_argument("unknown terminal reason '" + std::string(name) + "'");
}

void EpisodeConfig::validate() const {
  if (!(coverage_target > 0.0 && coverage_target <= 1.0)) throw std::invalid_argument("coverage_target must be in (0, 1]");
  if (max_steps < 1) throw std::invalid_argument("max_steps must be >= 1");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw std::invalid_argument("alpha must be finite and >= 0");
  if (noise.sigma_trans < 0 || noise.sigma_rot < 0 || noise.sigma_range < 0)
    throw std::invalid_argument("noise sigmas must be >= 0");
  if (!(sensor.max_range > 0) || sensor.n_beams < 1) throw std::invalid_argument("sensor range and beam count must be positive");
  if (min_frontier_size < 1) throw std::invalid_argument("min_frontier_size must be >= 1");
}

BeliefParams EpisodeConfig::belief_params() const {
  BeliefParams p;
  p.noise = noise;
  p.sensor = sensor;
  p.loop = loop;
  p.alpha = alpha;
  p.ssm_sigma_scale = slam.ssm_sigma_scale;
  return p;
}

double mean_position_error(std::span<const Pose2> estimated, std::span<const Pose2> truth) {
  if (estimated.size() != truth.size()) throw std::invalid_argument("trajectory lengths differ");
  if (estimated.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < estimated.size(); ++i) sum += distance(estimated[i], truth[i]);
  return sum / static_cast<double>(estimated.size());
}

namespace {

bool is_psd(const Eigen::MatrixXd& m, double tol = 1e-9) {
  if (!m.allFinite()) return false;
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * std::max(1.0, m.cwiseAbs().maxCoeff())) return false;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  return es.eigenvalues().minCoeff() >= -tol;
}

class Episode {
 public:
  Episode(const GroundTruthWorld& world, const EpisodeConfig& cfg, const ExternalPolicy* external)
      : world_(world),
        cfg_(cfg),
        external_(external),
        rng_(cfg.seed),
        grid_(OccupancyGrid::unknown(world.grid)),
        vmap_(VirtualMap::initial(world.grid)),
        explored_(world.grid.size(), 0),
        free_total_(world.free_cell_count()) {
    log_.config = cfg;
    odom_info_ = diagonal_information(std::max(cfg.noise.sigma_trans, 1e-6), std::max(cfg.noise.sigma_rot, 1e-6));
    const double s = cfg.slam.ssm_sigma_scale;
    ssm_info_ = diagonal_information(std::max(cfg.noise.sigma_trans * s, 1e-6), std::max(cfg.noise.sigma_rot * s, 1e-6));
  }

  EpisodeLog run() {
    const Pose2 start = world_.start_poses[static_cast<std::size_t>(cfg_.episode) % world_.start_poses.size()];
    true_poses_.push_back(start);
    slam_.add_pose(start);
    slam_.add_factor(make_prior(0, start, diagonal_information(cfg_.slam.sigma_prior, cfg_.slam.sigma_prior)));
    sense(0);

    std::optional<double> reward_prev;
    int step = 0;
    while (true) {
      if (coverage() >= cfg_.coverage_target) return finish(TerminalReason::coverage);
      if (step >= cfg_.max_steps) return finish(TerminalReason::max_steps);
      const auto t0 = std::chrono::steady_clock::now();

      const std::vector<Eigen::Matrix3d> marginals = slam_.all_marginals();
      const std::vector<Frontier> frontiers = extract_frontiers(grid_, cfg_.min_frontier_size);
      const auto start_cell = current_cell();
      if (!start_cell) return finish(TerminalReason::no_frontiers, "no free cell near the current estimate");
      const ShortestPathTree tree(grid_, *start_cell, cfg_.planner);
      std::vector<std::optional<PlannedPath>> plans;
      for (const Frontier& f : frontiers) plans.push_back(tree.path_to(f.waypoint_cell));
      const LoopClosurePredictor predictor(slam_.poses(), grid_, object_first_seen_, cfg_.loop, cfg_.sensor);
      const ExplorationGraph graph = build_graph(slam_, marginals, vmap_, frontiers, plans, predictor);
      if (cfg_.check_invariants) check_decision(graph, marginals);
      if (graph.actions.empty()) return finish(TerminalReason::no_frontiers);

      CandidateSet set = enumerate_candidates(graph, grid_, *start_cell, cfg_.planner);
      for (auto& w : set.warnings) log_.warnings.push_back("step " + std::to_string(step) + ": " + w);
      if (set.candidates.empty()) return finish(TerminalReason::no_frontiers);
      const auto& candidates = set.candidates;

      BeliefSnapshot snapshot{grid_, vmap_, slam_.poses(), marginals, object_first_seen_, cfg_.belief_params()};
      const std::vector<RawReward> raws = raw_rewards(snapshot, candidates);
      std::size_t chosen = 0;
      switch (cfg_.policy) {
        case PolicyKind::nf: chosen = nearest_frontier_select(candidates); break;
        case PolicyKind::random: chosen = random_select(candidates, rng_); break;
        case PolicyKind::em: {
          std::vector<double> values;
          for (const RawReward& r : raws) values.push_back(r.raw);
          chosen = argmax_reward(values, candidates);
          break;
        }
        case PolicyKind::external: {
          if (!external_) return finish(TerminalReason::abort, "external policy requested without a connection");
          const PolicyReply reply = (*external_)(DecisionContext{cfg_.episode, step, graph, candidates, reward_prev});
          if (!reply.node_id) return finish(TerminalReason::abort, reply.diagnostic);
          const auto it = std::find_if(candidates.begin(), candidates.end(),
                                       [&](const CandidateAction& c) { return c.node_id == *reply.node_id; });
          if (it == candidates.end())
            return finish(TerminalReason::abort, "external policy chose non-action node " + std::to_string(*reply.node_id));
          chosen = static_cast<std::size_t>(it - candidates.begin());
          break;
        }
      }
      const RewardBreakdown reward = normalized_reward(raws, candidates, chosen);
      if (cfg_.check_invariants && !reward.within_range())
        violation("step " + std::to_string(step) + ": normalized reward outside its range");
      reward_prev = reward.normalized;

      DecisionRecord rec;
      rec.step = step;
      rec.graph = serialize_graph(graph);
      rec.action = candidates[chosen].node_id;
      rec.candidate_count = candidates.size();
      rec.reward = reward;
      rec.true_pose = true_poses_.back();
      rec.est_pose = slam_.poses().back();
      rec.coverage = coverage();
      rec.map_error = mean_position_error(slam_.poses(), true_poses_);
      rec.distance = distance_;
      rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      log_.decisions.push_back(std::move(rec));
      ++step;

      execute(candidates[chosen].path);
    }
  }

 private:
  double coverage() const {
    return free_total_ == 0 ? 1.0 : static_cast<double>(explored_count_) / static_cast<double>(free_total_);
  }

  std::optional<CellIndex> current_cell() const {
    const Pose2& est = slam_.poses().back();
    const auto c = grid_.geometry.cell_at(est.translation());
    if (c && grid_.is_free(*c)) return c;
    return nearest_free_cell(grid_, est.translation());
  }

  void violation(std::string what) { violations_.push_back(std::move(what)); }

  void sense(std::size_t i) {
    history_.push_back(simulate_scan(world_, true_poses_[i], cfg_.sensor));
    const ScanResult& scan = history_.back();

    if (i > 0) {
      const ScanResult& prev = history_[i - 1];
      std::vector<CellIndex> a(prev.observed_free), b(scan.observed_free);
      a.insert(a.end(), prev.observed_occupied.begin(), prev.observed_occupied.end());
      b.insert(b.end(), scan.observed_occupied.begin(), scan.observed_occupied.end());
      std::sort(a.begin(), a.end());
      std::sort(b.begin(), b.end());
      std::vector<CellIndex> shared;
      std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(shared));
      if (static_cast<int>(shared.size()) >= cfg_.slam.k_overlap && cfg_.slam.ssm_sigma_scale > 0.0) {
        const double s = cfg_.slam.ssm_sigma_scale;
        const Pose2 z = noisy_between(true_poses_[i - 1], true_poses_[i], cfg_.noise.sigma_trans * s,
                                      cfg_.noise.sigma_rot * s, rng_);
        slam_.add_factor(make_between(FactorKind::ssm, i - 1, i, z, ssm_info_));
        ++counts_.ssm;
      }
      for (const Factor& f : detect_loop_closures(slam_, i, history_, true_poses_, cfg_.loop, rng_)) {
        slam_.add_factor(f);
        (f.kind == FactorKind::pm ? counts_.pm : counts_.sm)++;
      }
    }
    const OptimizeResult opt = slam_.optimize(cfg_.slam.max_iters);
    if (cfg_.check_invariants) {
      for (std::size_t k = 1; k < opt.accepted_costs.size(); ++k)
        if (opt.accepted_costs[k] > opt.accepted_costs[k - 1])
          violation("pose " + std::to_string(i) + ": optimizer accepted a cost increase");
    }
    const Eigen::Matrix3d cov = slam_.marginal_covariance(i).cov;
    if (cfg_.check_invariants && !is_psd(cov)) violation("pose " + std::to_string(i) + ": marginal not PSD");

    const Pose2& est = slam_.pose(i);
    integrate_scan(grid_, est, scan);
    const std::vector<CellIndex> cells = scan_cells_in_estimate(grid_.geometry, est, scan).all();
    const double before = cfg_.check_invariants ? map_utility(vmap_) : 0.0;
    update_virtual_map(vmap_, cov.topLeftCorner<2, 2>(), cells, cfg_.noise.sigma_range);
    for (int o : scan.observed_objects) object_first_seen_.emplace(o, i);

    const double cov_before = coverage();
    for (CellIndex c : scan.observed_free)
      if (!explored_[c]) {
        explored_[c] = 1;
        ++explored_count_;
      }
    if (cfg_.check_invariants) {
      const double after = map_utility(vmap_);
      if (after > before) violation("pose " + std::to_string(i) + ": map utility increased");
      if (coverage() < cov_before) violation("pose " + std::to_string(i) + ": coverage decreased");
      const double det0 = std::pow(0.2, 4);
      for (CellIndex c : cells) {
        const Eigen::Matrix2d& m = vmap_.cov[c];
        if (!is_psd(m) || m.determinant() > det0 * (1.0 + 1e-12))
          violation("pose " + std::to_string(i) + ": virtual landmark " + std::to_string(c) + " invalid");
      }
    }
  }

  bool move(const Control& u) {
    const MotionResult m = apply_motion(world_, true_poses_.back(), u, cfg_.noise, rng_);
    const std::size_t prev = slam_.pose_count() - 1;
    const std::size_t i = slam_.add_pose(compose(slam_.pose(prev), m.odometry));
    slam_.add_factor(make_between(FactorKind::odometry, prev, i, m.odometry, odom_info_));
    true_poses_.push_back(m.true_pose);
    distance_ += m.travelled;
    ++controls_;
    sense(i);
    return m.collided;
  }

  void execute(PlannedPath path) {
    const GridGeometry& g = grid_.geometry;
    const CellIndex goal = path.cells.back();
    controls_ = 0;
    std::size_t k = 1;
    while (k < path.cells.size()) {
      if (controls_ >= cfg_.max_controls_per_action || coverage() >= cfg_.coverage_target) return;
      const Pose2 est = slam_.poses().back();
      const Eigen::Vector2d target = g.center(path.cells[k]);
      const Eigen::Vector2d delta = target - est.translation();
      const double d = delta.norm();
      if (d > 1e-9) {
        const double misalign = wrap_angle(std::atan2(delta.y(), delta.x()) - est.theta);
        if (std::abs(misalign) > 0.05) {
          if (move({0.0, misalign})) return;
          continue;
        }
      }
      // Translate, then turn toward the following cell.
      double turn = 0.0;
      if (k + 1 < path.cells.size()) {
        const Pose2 expected = compose(est, Pose2(d, 0.0, 0.0));
        const Eigen::Vector2d next = g.center(path.cells[k + 1]) - expected.translation();
        turn = wrap_angle(std::atan2(next.y(), next.x()) - expected.theta);
      }
      if (move({d, turn})) return;
      ++k;

      const bool blocked = std::any_of(path.cells.begin() + static_cast<std::ptrdiff_t>(k), path.cells.end(),
                                       [&](CellIndex c) { return !grid_.is_free(c); });
      if (blocked && k < path.cells.size()) {
        const auto start = current_cell();
        if (!start) return;
        auto replanned = plan_path(grid_, *start, goal, cfg_.planner);
        if (!replanned || !grid_.is_free(goal)) return;
        path = std::move(*replanned);
        k = 1;
      }
    }
  }

  void check_decision(const ExplorationGraph& graph, const std::vector<Eigen::Matrix3d>& marginals) {
    const std::string at = "decision " + std::to_string(log_.decisions.size()) + ": ";
    for (std::size_t i = 0; i < marginals.size(); ++i)
      if (!is_psd(marginals[i])) violation(at + "marginal of pose " + std::to_string(i) + " not PSD");
    for (const std::string& e : validate_graph(graph)) violation(at + e);
    std::set<std::pair<int, int>> factor_pairs, edge_pairs;
    const int poses = static_cast<int>(slam_.pose_count());
    for (const Factor& f : slam_.factors())
      if (f.is_binary())
        factor_pairs.emplace(static_cast<int>(std::min(f.from, f.to)), static_cast<int>(std::max(f.from, f.to)));
    for (const GraphEdge& e : graph.edges)
      if (e.u < poses && e.v < poses) edge_pairs.emplace(std::min(e.u, e.v), std::max(e.u, e.v));
    if (factor_pairs != edge_pairs) violation(at + "pose-pose edges do not mirror the factor graph");
    if (graph.current_node() != poses - 1) violation(at + "current node is not the latest pose");
  }

  EpisodeLog finish(TerminalReason reason, std::string detail = {}) {
    TerminalRecord t;
    t.reason = reason;
    t.detail = std::move(detail);
    t.steps = static_cast<int>(log_.decisions.size());
    t.coverage = coverage();
    t.distance = distance_;
    t.trajectory_true = true_poses_;
    t.trajectory_est = slam_.poses();
    t.map_error = mean_position_error(t.trajectory_est, t.trajectory_true);
    for (CellIndex c = 0; c < grid_.geometry.size(); ++c) {
      if (grid_.at(c) == Occupancy::unknown) continue;
      if ((grid_.at(c) == Occupancy::occupied) != world_.is_occupied(c)) ++t.occupancy_mismatch;
    }
    t.loop_closures = counts_;
    t.invariant_violations = violations_;
    log_.terminal = std::move(t);
    return std::move(log_);
  }

  const GroundTruthWorld& world_;
  EpisodeConfig cfg_;
  const ExternalPolicy* external_;
  std::mt19937_64 rng_;
  FactorGraph slam_;
  std::vector<Pose2> true_poses_;
  std::vector<ScanResult> history_;
  OccupancyGrid grid_;
  VirtualMap vmap_;
  std::map<int, std::size_t> object_first_seen_;
  std::vector<std::uint8_t> explored_;
  std::size_t explored_count_ = 0;
  std::size_t free_total_;
  double distance_ = 0.0;
  int controls_ = 0;
  LoopClosureCounts counts_;
  Eigen::Matrix3d odom_info_;
  Eigen::Matrix3d ssm_info_;
  std::vector<std::string> violations_;
  EpisodeLog log_;
};

using ojson = nlohmann::ordered_json;

ojson pose_json(const Pose2& p) { return ojson::array({p.x, p.y, p.theta}); }

Pose2 pose_from(const nlohmann::json& j) { return Pose2(j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()); }

ojson config_json(const EpisodeConfig& c) {
  ojson j;
  j["env"] = c.env_name;
  j["policy"] = to_string(c.policy);
  j["seed"] = c.seed;
  j["episode"] = c.episode;
  j["max_steps"] = c.max_steps;
  j["coverage_target"] = c.coverage_target;
  j["alpha"] = c.alpha;
  j["noise"] = {{"sigma_trans", c.noise.sigma_trans}, {"sigma_rot", c.noise.sigma_rot}, {"sigma_range", c.noise.sigma_range}};
  j["sensor"] = {{"max_range", c.sensor.max_range}, {"n_beams", c.sensor.n_beams}, {"fov", c.sensor.fov}};
  j["loop"] = {{"r_pm", c.loop.r_pm},
               {"gap_min", c.loop.gap_min},
               {"sigma_pm_trans", c.loop.sigma_pm_trans},
               {"sigma_pm_rot", c.loop.sigma_pm_rot},
               {"sigma_sm_trans", c.loop.sigma_sm_trans},
               {"sigma_sm_rot", c.loop.sigma_sm_rot}};
  j["slam"] = {{"k_overlap", c.slam.k_overlap},
               {"ssm_sigma_scale", c.slam.ssm_sigma_scale},
               {"sigma_prior", c.slam.sigma_prior},
               {"max_iters", c.slam.max_iters}};
  j["planner"] = {{"dilation", c.planner.dilation}};
  j["min_frontier_size"] = c.min_frontier_size;
  j["max_controls_per_action"] = c.max_controls_per_action;
  return j;
}

EpisodeConfig config_from(const nlohmann::json& j) {
  EpisodeConfig c;
  c.env_name = j.value("env", "");
  c.policy = parse_policy(j.at("policy").get<std::string>());
  c.seed = j.at("seed").get<std::uint64_t>();
  c.episode = j.at("episode").get<int>();
  c.max_steps = j.at("max_steps").get<int>();
  c.coverage_target = j.at("coverage_target").get<double>();
  c.alpha = j.at("alpha").get<double>();
  const auto& n = j.at("noise");
  c.noise = {n.at("sigma_trans").get<double>(), n.at("sigma_rot").get<double>(), n.at("sigma_range").get<double>()};
  const auto& s = j.at("sensor");
  c.sensor = {s.at("max_range").get<double>(), s.at("n_beams").get<int>(), s.at("fov").get<double>()};
  const auto& l = j.at("loop");
  c.loop = {l.at("r_pm").get<double>(),          l.at("gap_min").get<int>(),
            l.at("sigma_pm_trans").get<double>(), l.at("sigma_pm_rot").get<double>(),
            l.at("sigma_sm_trans").get<double>(), l.at("sigma_sm_rot").get<double>()};
  const auto& sl = j.at("slam");
  c.slam = {sl.at("k_overlap").get<int>(), sl.at("ssm_sigma_scale").get<double>(), sl.at("sigma_prior").get<double>(),
            sl.at("max_iters").get<int>()};
  c.planner.dilation = j.at("planner").at("dilation").get<int>();
  c.min_frontier_size = j.at("min_frontier_size").get<int>();
  c.max_controls_per_action = j.at("max_controls_per_action").get<int>();
  return c;
}

}  // namespace

EpisodeLog run_episode(const GroundTruthWorld& world, const EpisodeConfig& config, const ExternalPolicy* external) {
  config.validate();
  return Episode(world, config, external).run();
}

std::string EpisodeLog::to_jsonl() const {
  std::string out;
  ojson header;
  header["type"] = "header";
  header["schema"] = kLogSchemaVersion;
  header["code_version"] = kCodeVersion;
  header["config"] = config_json(config);
  out += header.dump() + '\n';
  for (const DecisionRecord& d : decisions) {
    ojson j;
    j["type"] = "decision";
    j["step"] = d.step;
    j["graph"] = ojson::parse(d.graph);
    j["action"] = d.action;
    j["candidates"] = d.candidate_count;
    j["reward"] = {{"U0", d.reward.u0},         {"U_prime", d.reward.u_prime}, {"cost", d.reward.cost},
                   {"alpha", d.reward.alpha},   {"raw", d.reward.raw},         {"normalized", d.reward.normalized},
                   {"range", to_string(d.reward.range)}};
    j["true_pose"] = pose_json(d.true_pose);
    j["est_pose"] = pose_json(d.est_pose);
    j["coverage"] = d.coverage;
    j["map_error"] = d.map_error;
    j["distance"] = d.distance;
    out += j.dump() + '\n';
  }
  for (const std::string& w : warnings) {
    ojson j;
    j["type"] = "warning";
    j["detail"] = w;
    out += j.dump() + '\n';
  }
  if (terminal) {
    const TerminalRecord& t = *terminal;
    ojson j;
    j["type"] = "terminal";
    j["reason"] = to_string(t.reason);
    j["detail"] = t.detail;
    j["steps"] = t.steps;
    j["coverage"] = t.coverage;
    j["distance"] = t.distance;
    j["map_error"] = t.map_error;
    j["occupancy_mismatch"] = t.occupancy_mismatch;
    j["loop_closures"] = {{"ssm", t.loop_closures.ssm}, {"pm", t.loop_closures.pm}, {"sm", t.loop_closures.sm}};
    ojson tt = ojson::array(), te = ojson::array();
    for (const Pose2& p : t.trajectory_true) tt.push_back(pose_json(p));
    for (const Pose2& p : t.trajectory_est) te.push_back(pose_json(p));
    j["trajectory_true"] = tt;
    j["trajectory_est"] = te;
    j["invariant_violations"] = t.invariant_violations;
    out += j.dump() + '\n';
  }
  return out;
}

EpisodeLog EpisodeLog::from_jsonl(std::istream& in) {
  EpisodeLog log;
  std::string line;
  bool have_header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
      const std::string type = j.at("type").get<std::string>();
      if (type == "header") {
        if (j.at("schema").get<int>() != kLogSchemaVersion) throw std::runtime_error("unsupported log schema");
        log.config = config_from(j.at("config"));
        have_header = true;
      } else if (type == "decision") {
        DecisionRecord d;
        d.step = j.at("step").get<int>();
        d.graph = serialize_graph(graph_from_json(j.at("graph")));
        d.action = j.at("action").get<int>();
        d.candidate_count = j.at("candidates").get<std::size_t>();
        const auto& r = j.at("reward");
        d.reward.u0 = r.at("U0").get<double>();
        d.reward.u_prime = r.at("U_prime").get<double>();
        d.reward.cost = r.at("cost").get<double>();
        d.reward.alpha = r.at("alpha").get<double>();
        d.reward.raw = r.at("raw").get<double>();
        d.reward.normalized = r.at("normalized").get<double>();
        d.reward.range = r.at("range").get<std::string>() == "[-1,0]" ? RewardRange::nearest_is_best : RewardRange::other_is_best;
        d.true_pose = pose_from(j.at("true_pose"));
        d.est_pose = pose_from(j.at("est_pose"));
        d.coverage = j.at("coverage").get<double>();
        d.map_error = j.at("map_error").get<double>();
        d.distance = j.at("distance").get<double>();
        log.decisions.push_back(std::move(d));
      } else if (type == "warning") {
        log.warnings.push_back(j.at("detail").get<std::string>());
      } else if (type == "terminal") {
        TerminalRecord t;
        t.reason = parse_terminal_reason(j.at("reason").get<std::string>());
        t.detail = j.at("detail").get<std::string>();
        t.steps = j.at("steps").get<int>();
        t.coverage = j.at("coverage").get<double>();
        t.distance = j.at("distance").get<double>();
        t.map_error = j.at("map_error").get<double>();
        t.occupancy_mismatch = j.at("occupancy_mismatch").get<std::size_t>();
        const auto& lc = j.at("loop_closures");
        t.loop_closures = {lc.at("ssm").get<int>(), lc.at("pm").get<int>(), lc.at("sm").get<int>()};
        for (const auto& p : j.at("trajectory_true")) t.trajectory_true.push_back(pose_from(p));
        for (const auto& p : j.at("trajectory_est")) t.trajectory_est.push_back(pose_from(p));
        t.invariant_violations = j.at("invariant_violations").get<std::vector<std::string>>();
        log.terminal = std::move(t);
      } else {
        throw std::runtime_error("unknown record type '" + type + "'");
      }
    } catch (const std::exception& e) {
      throw std::runtime_error("log line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw std::runtime_error("log has no header record");
  return log;
}

void EpisodeLog::write_timing_csv(std::ostream& out) const {
  out << "step,wall_time_s\n";
  for (const DecisionRecord& d : decisions) out << d.step << ',' << d.wall_time_s << '\n';
}

Metrics compute_metrics(const EpisodeLog& log) {
  if (!log.terminal) throw std::runtime_error("truncated episode log: no terminal record");
  const TerminalRecord& t = *log.terminal;
  Metrics m;
  m.reason = t.reason;
  m.steps = t.steps;
  m.map_error = mean_position_error(t.trajectory_est, t.trajectory_true);
  m.occupancy_mismatch = t.occupancy_mismatch;
  m.total_distance = t.distance;
  m.final_coverage = t.coverage;
  m.loop_closures = t.loop_closures;
  for (const DecisionRecord& d : log.decisions) {
    m.coverage_curve.emplace_back(d.distance, d.coverage);
    if (d.wall_time_s > 0.0) m.decision_wall_time_s.push_back(d.wall_time_s);
  }
  m.coverage_curve.emplace_back(t.distance, t.coverage);
  return m;
}

std::vector<EpisodeLog> run_episodes(const GroundTruthWorld& world, const EpisodeConfig& base, int episodes,
                                     int parallel, const std::filesystem::path& out_dir) {
  std::vector<EpisodeLog> logs(static_cast<std::size_t>(std::max(episodes, 0)));
  if (!out_dir.empty()) std::filesystem::create_directories(out_dir);
  std::mutex mutex;
  std::size_t next = 0;
  std::exception_ptr failure;
  auto worker = [&] {
    while (true) {
      std::size_t k;
      {
        std::lock_guard lock(mutex);
        if (next >= logs.size() || failure) return;
        k = next++;
      }
      try {
        EpisodeConfig cfg = base;
        cfg.episode = static_cast<int>(k);
        cfg.seed = base.seed + k;
        EpisodeLog log = run_episode(world, cfg);
        if (!out_dir.empty()) {
          std::ostringstream name;
          name << "episode_" << std::setw(4) << std::setfill('0') << k;
          std::ofstream(out_dir / (name.str() + ".jsonl")) << log.to_jsonl();
          std::ofstream timing(out_dir / (name.str() + ".timing.csv"));
          log.write_timing_csv(timing);
        }
        logs[k] = std::move(log);
      } catch (...) {
        std::lock_guard lock(mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const int threads = std::clamp(parallel, 1, std::max(episodes, 1));
  std::vector<std::thread> pool;
  for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return logs;
}

}  // namespace explore
