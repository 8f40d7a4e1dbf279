#pragma once

#include <iosfwd>
#include <span>
#include <vector>

#include "explore/exploration_graph.hpp"
#include "explore/mapping.hpp"
#include "explore/planning.hpp"
#include "explore/policies.hpp"
#include "explore/slam.hpp"

namespace explore {

/// A mapped square room whose wall has `openings` gaps into unknown space, one frontier each,
/// with a pose graph that visits each opening and then parks in the middle.
struct BenchState {
  OccupancyGrid grid;
  VirtualMap vmap;
  FactorGraph slam;
  std::vector<Eigen::Matrix3d> marginals;
  ExplorationGraph graph;
  CellIndex start_cell = 0;
  PlannerOptions planner;
  BeliefParams params;

  BeliefSnapshot snapshot() const;
};

BenchState make_bench_state(int openings);

struct BenchRow {
  int candidates = 0;
  double em_mean_s = 0.0;
  double nf_mean_s = 0.0;
};

/// Mean wall time of one decision (candidate enumeration plus selection) per candidate count.
std::vector<BenchRow> bench_decision_time(std::span<const int> counts, int repetitions = 20);

/// Header: candidates,em_mean_s,nf_mean_s
void write_bench_csv(std::ostream& out, std::span<const BenchRow> rows);

}  // namespace explore
