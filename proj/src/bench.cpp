#include "explore/bench.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <stdexcept>

namespace explore {

BeliefSnapshot BenchState::snapshot() const { return {grid, vmap, slam.poses(), marginals, {}, params}; }

BenchState make_bench_state(int openings) {
  if (openings < 1 || openings > 32) throw std::invalid_argument("openings must be in [1, 32]");
  const GridGeometry g{40, 40, 0.5};
  BenchState s;
  s.grid = OccupancyGrid::unknown(g);
  s.vmap = VirtualMap::initial(g);
  s.planner.dilation = 0;

  // Room interior [lo, hi) in cells, wall ring just outside it.
  const int lo = 4, hi = 36;
  for (int r = lo - 1; r <= hi; ++r)
    for (int c = lo - 1; c <= hi; ++c) {
      const bool wall = r == lo - 1 || r == hi || c == lo - 1 || c == hi;
      s.grid.cells[g.index(c, r)] = wall ? Occupancy::occupied : Occupancy::free;
    }
  // Gaps three cells wide, evenly spaced along the perimeter walk.
  const int side = hi - lo;
  const int perimeter = 4 * side;
  for (int k = 0; k < openings; ++k) {
    const int at = (perimeter * k) / openings + side / (2 * openings) + 4;
    for (int d = -1; d <= 1; ++d) {
      const int p = at + d;
      const int edge = p / side, off = p % side;
      int c = 0, r = 0;
      switch (edge) {
        case 0: c = lo + off; r = lo - 1; break;
        case 1: c = hi; r = lo + off; break;
        case 2: c = hi - 1 - off; r = hi; break;
        default: c = lo - 1; r = hi - 1 - off; break;
      }
      s.grid.cells[g.index(c, r)] = Occupancy::free;
    }
  }

  // The robot visited every opening before returning to the middle, so each frontier is
  // both reachable and loop-predicted and enters the graph as an action.
  const std::vector<Frontier> frontiers = extract_frontiers(s.grid);
  std::vector<Pose2> path;
  for (const Frontier& f : frontiers) {
    const int c = std::clamp(g.col_of(f.waypoint_cell), lo, hi - 1);
    const int r = std::clamp(g.row_of(f.waypoint_cell), lo, hi - 1);
    path.emplace_back(g.center(g.index(c, r)).x(), g.center(g.index(c, r)).y(), 0.0);
  }
  const double mid = 0.5 * (lo + hi) * g.resolution;
  for (int i = 0; i < 6; ++i) path.emplace_back(mid - 2.0 + 0.5 * i, mid, 0.0);

  const Eigen::Matrix3d info = diagonal_information(0.01, 0.0014);
  s.slam.add_pose(path[0]);
  s.slam.add_factor(make_prior(0, path[0], diagonal_information(1e-3, 1e-3)));
  for (std::size_t i = 1; i < path.size(); ++i) {
    s.slam.add_pose(path[i]);
    s.slam.add_factor(make_between(FactorKind::odometry, i - 1, i, between(path[i - 1], path[i]), info));
  }
  s.slam.optimize();
  s.marginals = s.slam.all_marginals();
  s.start_cell = *g.cell_at(s.slam.poses().back().translation());
  const std::vector<Eigen::Matrix2d> covs = [&] {
    std::vector<Eigen::Matrix2d> out;
    for (const auto& m : s.marginals) out.push_back(m.topLeftCorner<2, 2>());
    return out;
  }();
  for (std::size_t i = 0; i < covs.size(); ++i) {
    std::vector<int> unused;
    const auto cells = predicted_visible_cells(s.grid, s.slam.pose(i).translation(), s.params.sensor, &unused);
    update_virtual_map(s.vmap, covs[i], cells, s.params.noise.sigma_range);
  }

  const ShortestPathTree tree(s.grid, s.start_cell, s.planner);
  std::vector<std::optional<PlannedPath>> plans;
  for (const Frontier& f : frontiers) plans.push_back(tree.path_to(f.waypoint_cell));
  const std::map<int, std::size_t> first_seen;
  const LoopClosurePredictor predictor(s.slam.poses(), s.grid, first_seen, s.params.loop, s.params.sensor);
  s.graph = build_graph(s.slam, s.marginals, s.vmap, frontiers, plans, predictor);
  return s;
}

std::vector<BenchRow> bench_decision_time(std::span<const int> counts, int repetitions) {
  if (repetitions < 1) throw std::invalid_argument("repetitions must be >= 1");
  using clock = std::chrono::steady_clock;
  std::vector<BenchRow> rows;
  for (int n : counts) {
    const BenchState s = make_bench_state(n);
    const BeliefSnapshot snap = s.snapshot();
    BenchRow row;
    row.candidates = static_cast<int>(s.graph.actions.size());
    double em = 0.0, nf = 0.0;
    std::size_t sink = 0;
    for (int rep = 0; rep < repetitions; ++rep) {
      auto t0 = clock::now();
      {
        const CandidateSet set = enumerate_candidates(s.graph, s.grid, s.start_cell, s.planner);
        sink += em_select(set.candidates, snap);
      }
      auto t1 = clock::now();
      {
        const CandidateSet set = enumerate_candidates(s.graph, s.grid, s.start_cell, s.planner);
        sink += nearest_frontier_select(set.candidates);
      }
      auto t2 = clock::now();
      em += std::chrono::duration<double>(t1 - t0).count();
      nf += std::chrono::duration<double>(t2 - t1).count();
    }
    row.em_mean_s = em / repetitions;
    row.nf_mean_s = nf / repetitions;
    if (sink == static_cast<std::size_t>(-1)) row.candidates = -1;
    rows.push_back(row);
  }
  return rows;
}

void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows) {
  out << "candidates,em_mean_s,nf_mean_s\n";
  for (const BenchRow& r : rows) out << r.candidates << ',' << r.em_mean_s << ',' << r.nf_mean_s << '\n';
}

}  // namespace explore
