#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "explore/exploration_graph.hpp"

using namespace explore;

namespace {

const GridGeometry kGeom{20, 10, 0.5};

struct Scenario {
  FactorGraph slam;
  std::vector<Eigen::Matrix3d> marginals;
  OccupancyGrid grid = OccupancyGrid::unknown(kGeom);
  VirtualMap vmap = VirtualMap::initial(kGeom);
  std::vector<Frontier> frontiers;
  std::vector<std::optional<PlannedPath>> plans;
  std::map<int, std::size_t> first_seen;

  void pose_chain(int n, double spacing) {
    for (int i = 0; i < n; ++i) {
      slam.add_pose(Pose2(0.25 + spacing * i, 0.25, 0.0));
      marginals.push_back(0.01 * (i + 1) * Eigen::Matrix3d::Identity());
      if (i == 0) slam.add_factor(make_prior(0, slam.pose(0), Eigen::Matrix3d::Identity()));
      else
        slam.add_factor(make_between(FactorKind::odometry, static_cast<std::size_t>(i - 1), static_cast<std::size_t>(i),
                                     Pose2(spacing, 0, 0), Eigen::Matrix3d::Identity()));
    }
  }
  void frontier(double x, double y, double plan_length) {
    Frontier f;
    f.id = static_cast<int>(frontiers.size());
    f.waypoint_cell = *kGeom.cell_at({x, y});
    f.waypoint = {x, y};
    f.cells = {f.waypoint_cell};
    frontiers.push_back(f);
    PlannedPath p;
    p.length_m = plan_length;
    p.goal_frontier_id = f.id;
    plans.emplace_back(p);
  }
  ExplorationGraph build() const {
    const LoopClosurePredictor predictor(slam.poses(), grid, first_seen, LoopClosureParams{}, SensorParams{});
    return build_graph(slam, marginals, vmap, frontiers, plans, predictor);
  }
};

int edges_of(const ExplorationGraph& g, int node) {
  int n = 0;
  for (const GraphEdge& e : g.edges) n += (e.u == node || e.v == node) ? 1 : 0;
  return n;
}

bool has_edge(const ExplorationGraph& g, int a, int b) {
  for (const GraphEdge& e : g.edges)
    if ((e.u == a && e.v == b) || (e.u == b && e.v == a)) return true;
  return false;
}

ExplorationGraph random_graph(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> pos(-20.0, 20.0), var(0.0, 2.0);
  std::uniform_int_distribution<int> poses(1, 8), fronts(0, 4);
  const int n = poses(rng), m = fronts(rng);
  ExplorationGraph g;
  std::vector<Eigen::Vector2d> p;
  for (int i = 0; i < n + m; ++i) p.emplace_back(pos(rng), pos(rng));
  const Pose2 current(p[static_cast<std::size_t>(n - 1)].x(), p[static_cast<std::size_t>(n - 1)].y(), 0.3);
  for (int i = 0; i < n + m; ++i) {
    const NodeKind kind = i < n - 1 ? NodeKind::past_pose : i == n - 1 ? NodeKind::current_pose : NodeKind::frontier;
    Eigen::Matrix2d cov;
    const double a = var(rng), b = var(rng);
    cov << a, 0.1 * std::sqrt(a * b), 0.1 * std::sqrt(a * b), b;
    g.nodes.push_back({i, kind, p[static_cast<std::size_t>(i)],
                       compute_node_features(kind, p[static_cast<std::size_t>(i)], cov, current)});
  }
  auto edge = [&](int u, int v) { g.edges.push_back({u, v, (p[static_cast<std::size_t>(u)] - p[static_cast<std::size_t>(v)]).norm()}); };
  for (int i = 1; i < n; ++i) edge(i - 1, i);
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int f = n; f < n + m; ++f) {
    edge(pick(rng), f);
    g.actions.push_back(f);
  }
  return g;
}

}  // namespace

TEST_CASE("node features") {
  const Pose2 origin(0, 0, 0.7);
  const NodeFeatures self = compute_node_features(NodeKind::current_pose, {0, 0}, Eigen::Matrix2d::Identity(), origin);
  CHECK(self(1) == 0.0);
  CHECK(self(2) == 0.0);
  CHECK(self(3) == 0.0);
  CHECK(self(0) == 2.0);

  const NodeFeatures f = compute_node_features(NodeKind::frontier, {3, 4}, 0.04 * Eigen::Matrix2d::Identity(), origin);
  CHECK(f(0) == doctest::Approx(0.08));
  CHECK(f(1) == doctest::Approx(5.0));
  CHECK(f(2) == doctest::Approx(0.9273).epsilon(1e-4));
  CHECK(f(3) == 1.0);

  const NodeFeatures behind = compute_node_features(NodeKind::past_pose, {-1, 0}, Eigen::Matrix2d::Identity(), origin);
  CHECK(behind(2) == doctest::Approx(std::numbers::pi));
  CHECK(behind(3) == -1.0);
}

TEST_CASE("minimal graph") {
  Scenario s;
  s.pose_chain(1, 1.0);
  s.frontier(2.25, 0.25, 2.0);
  const ExplorationGraph g = s.build();
  CHECK(g.nodes.size() == 2);
  REQUIRE(g.edges.size() == 1);
  CHECK(g.actions == std::vector<int>{1});
  CHECK(g.current_node() == 0);
  CHECK(g.edges[0].weight == doctest::Approx(2.0));
  CHECK(validate_graph(g).empty());
  CHECK(serialize_graph(g) ==
        R"({"v":1,"nodes":[{"id":0,"kind":"current_pose","pos":[0.25,0.25],"feat":[0.02,0,0,0]},)"
        R"({"id":1,"kind":"frontier","pos":[2.25,0.25],"feat":[0.08,2,0,1]}],"edges":[[0,1,2]],"actions":[1]})");
}

TEST_CASE("pose chain with a loop closure and the nearest frontier") {
  Scenario s;
  s.pose_chain(5, 1.0);
  s.slam.add_factor(make_between(FactorKind::pm, 0, 4, Pose2(4, 0, 0), Eigen::Matrix3d::Identity()));
  s.frontier(4.25, 3.75, 3.5);
  s.frontier(9.25, 4.75, 9.0);  // farther and no loop predicted: excluded
  const ExplorationGraph g = s.build();
  CHECK(g.nodes.size() == 6);
  CHECK(g.edges.size() == 6);
  CHECK(g.actions == std::vector<int>{5});
  CHECK(has_edge(g, 0, 4));
  CHECK(has_edge(g, 4, 5));
  CHECK(g.node(4).kind == NodeKind::current_pose);
  CHECK(g.node(0).features(3) == -1.0);
  CHECK(g.node(2).features(0) == doctest::Approx(0.06));
  CHECK(validate_graph(g).empty());
}

TEST_CASE("a loop-closing frontier links to the pose it revisits") {
  Scenario s;
  s.pose_chain(8, 1.0);  // poses 0..2 are old enough to close loops
  s.frontier(7.25, 2.25, 1.0);
  s.frontier(2.25, 0.75, 6.0);  // 0.5 m from pose 2
  const ExplorationGraph g = s.build();
  REQUIRE(g.nodes.size() == 10);
  CHECK(g.actions == std::vector<int>{8, 9});
  CHECK(has_edge(g, 7, 8));
  CHECK(edges_of(g, 8) == 1);
  CHECK(has_edge(g, 2, 9));
  CHECK(edges_of(g, 9) == 1);
  CHECK(validate_graph(g).empty());

  SUBCASE("nearest and loop-closing gets both edges") {
    Scenario t;
    t.pose_chain(8, 1.0);
    t.frontier(1.25, 0.75, 0.5);
    const ExplorationGraph h = t.build();
    CHECK(has_edge(h, 7, 8));
    CHECK(has_edge(h, 1, 8));
  }
  SUBCASE("unreachable frontiers are never included") {
    Scenario t;
    t.pose_chain(8, 1.0);
    t.frontier(7.25, 2.25, 1.0);
    t.frontier(2.25, 0.75, 6.0);
    t.plans[1].reset();
    CHECK(t.build().nodes.size() == 9);
    t.plans[0].reset();
    const ExplorationGraph none = t.build();
    CHECK(none.actions.empty());
    CHECK(none.nodes.size() == 8);
  }
}

TEST_CASE("segment matching prediction sees labelled objects through unknown space") {
  Scenario s;
  s.pose_chain(8, 1.0);
  const CellIndex obj = kGeom.index(2, 8);
  s.grid.cells[obj] = Occupancy::occupied;
  s.grid.object_label[obj] = 3;
  s.first_seen[3] = 1;
  s.frontier(7.25, 2.25, 1.0);
  s.frontier(1.25, 3.25, 6.0);  // 1.1 m from the object, more than r_pm from every pose
  const ExplorationGraph g = s.build();
  CHECK(g.actions == std::vector<int>{8, 9});
  CHECK(has_edge(g, 1, 9));

  s.first_seen[3] = 5;  // first seen too recently
  CHECK(s.build().actions == std::vector<int>{8});
}

TEST_CASE("pose-pose edges mirror the binary factors") {
  Scenario s;
  s.pose_chain(6, 0.5);
  s.slam.add_factor(make_between(FactorKind::sm, 1, 5, Pose2(2, 0, 0), Eigen::Matrix3d::Identity()));
  s.slam.add_factor(make_between(FactorKind::ssm, 2, 3, Pose2(0.5, 0, 0), Eigen::Matrix3d::Identity()));
  s.frontier(3.25, 2.25, 2.0);
  const ExplorationGraph g = s.build();
  std::set<std::pair<int, int>> pairs, edges;
  for (const Factor& f : s.slam.factors())
    if (f.is_binary()) pairs.emplace(static_cast<int>(f.from), static_cast<int>(f.to));
  for (const GraphEdge& e : g.edges)
    if (e.v < 6) edges.emplace(std::min(e.u, e.v), std::max(e.u, e.v));
  CHECK(pairs == edges);
}

TEST_CASE("serialization round trip") {
  std::mt19937_64 rng(1000);
  for (int k = 0; k < 1000; ++k) {
    const ExplorationGraph g = random_graph(rng);
    REQUIRE(validate_graph(g).empty());
    const std::string text = serialize_graph(g);
    const ExplorationGraph back = deserialize_graph(text);
    CHECK(serialize_graph(back) == text);
    REQUIRE(back.nodes.size() == g.nodes.size());
    CHECK(back.actions == g.actions);
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      CHECK(back.nodes[i].kind == g.nodes[i].kind);
      CHECK((back.nodes[i].position - g.nodes[i].position).cwiseAbs().maxCoeff() <= 1e-7);
      CHECK((back.nodes[i].features - g.nodes[i].features).cwiseAbs().maxCoeff() <= 1e-7);
    }
  }
}

TEST_CASE("parse errors") {
  const std::string good =
      R"({"v":1,"nodes":[{"id":0,"kind":"current_pose","pos":[0,0],"feat":[0,0,0,0]},)"
      R"({"id":1,"kind":"frontier","pos":[1,0],"feat":[0.1,1,0,1]}],"edges":[[0,1,1]],"actions":[1]})";
  CHECK(deserialize_graph(good).nodes.size() == 2);

  auto location = [](const std::string& text) {
    try {
      deserialize_graph(text);
    } catch (const GraphFormatError& e) {
      return e.location();
    }
    return std::string("none");
  };
  std::string bad_flag = good;
  bad_flag.replace(bad_flag.find("0.1,1,0,1"), 9, "0.1,1,0,2");
  CHECK(location(bad_flag) == "/nodes/1/feat/3");
  CHECK(location(good.substr(0, 30)).rfind("byte ", 0) == 0);
  std::string bad_weight = good;
  bad_weight.replace(bad_weight.find("[0,1,1]"), 7, "[0,1,3]");
  CHECK_THROWS_WITH_AS(deserialize_graph(bad_weight), doctest::Contains("weight"), GraphFormatError);
  std::string bad_version = good;
  bad_version.replace(5, 1, "2");
  CHECK(location(bad_version) == "/v");
  std::string no_edges = good;
  no_edges.replace(no_edges.find("\"edges\""), 7, "\"edgez\"");
  CHECK(location(no_edges) == "/edges");
}
