#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "explore/world.hpp"

using namespace explore;

namespace {

constexpr double kPi = std::numbers::pi;

const char* kEmpty4 = R"({"size_m": [4, 4], "resolution": 0.5, "start_poses": [[1.75, 1.75, 0]]})";

std::size_t interior_occupied(const GroundTruthWorld& w) {
  std::size_t n = 0;
  for (int r = 1; r + 1 < w.grid.rows; ++r)
    for (int c = 1; c + 1 < w.grid.cols; ++c) n += w.is_occupied(w.grid.index(c, r));
  return n;
}

// Cells crossed by a segment, found by dense sampling.
std::set<CellIndex> sampled_cells(const GridGeometry& g, Eigen::Vector2d from, Eigen::Vector2d dir, double len) {
  std::set<CellIndex> out;
  const int n = 20000;
  for (int k = 0; k <= n; ++k) {
    const auto c = g.cell_at(from + dir * (len * k / n));
    if (!c) break;
    out.insert(*c);
  }
  return out;
}

}  // namespace

TEST_CASE("empty config has only the boundary occupied") {
  const GroundTruthWorld w = load_environment(kEmpty4);
  CHECK(w.grid.cols == 8);
  CHECK(w.grid.rows == 8);
  CHECK(interior_occupied(w) == 0);
  CHECK(w.free_cell_count() == 36);
  for (int c = 0; c < 8; ++c) {
    CHECK(w.is_occupied(w.grid.index(c, 0)));
    CHECK(w.is_occupied(w.grid.index(c, 7)));
    CHECK(w.is_occupied(w.grid.index(0, c)));
    CHECK(w.is_occupied(w.grid.index(7, c)));
  }
}

TEST_CASE("a 1 m box at the center rasterizes to four cells of one object") {
  const GroundTruthWorld w = load_environment(R"({"size_m": [4, 4], "resolution": 0.5,
      "objects": [{"id": 7, "rect": [1.5, 1.5, 2.5, 2.5]}], "start_poses": [[0.75, 0.75, 0]]})");
  CHECK(interior_occupied(w) == 4);
  REQUIRE(w.objects.size() == 1);
  CHECK(w.objects[0].id == 7);
  const std::vector<CellIndex> expected{w.grid.index(3, 3), w.grid.index(4, 3), w.grid.index(3, 4), w.grid.index(4, 4)};
  auto cells = w.objects[0].cells;
  std::sort(cells.begin(), cells.end());
  CHECK(cells == expected);
  for (CellIndex c : expected) CHECK(w.object_at[c] == 7);
}

TEST_CASE("configuration errors name their location") {
  auto where = [](const char* text) {
    try {
      load_environment(text);
    } catch (const EnvironmentError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(where(R"({"size_m": [4, 4], "resolution": 0.5, "objects": [{"id": 1, "rect": [1.5, 1.5, 2.5, 2.5]}],
                  "start_poses": [[2.0, 2.0, 0]]})")
            .find("start_poses[0]: start pose occupied") != std::string::npos);
  CHECK(where(R"({"size_m": [4, 4], "resolution": 0.5, "start_poses": [[1, 1, 0]],})").find("byte") != std::string::npos);
  CHECK(where(R"({"size_m": [4, 4], "resolution": 0.3, "start_poses": [[1, 1, 0]]})").find("size_m[0]") != std::string::npos);
  CHECK(where(R"({"size_m": [4, 4], "resolution": 0.5})").find("start_poses") != std::string::npos);
  CHECK(where(R"({"size_m": [1, 1], "resolution": 0.5, "start_poses": [[0.25, 0.25, 0]]})").find("zero free cells") !=
        std::string::npos);
  CHECK(where(R"({"size_m": [4, 4], "resolution": 0.5, "objects": [{"id": 1, "rect": [1.1, 1.1, 1.4, 1.4]},
                  {"id": 1, "rect": [2, 2, 2.6, 2.6]}], "start_poses": [[0.75, 0.75, 0]]})")
            .find("objects[1]") != std::string::npos);
}

TEST_CASE("zero-noise motion is exact composition") {
  const GroundTruthWorld w = load_environment(R"({"size_m": [20, 20], "resolution": 0.5, "start_poses": [[10, 10, 0]]})");
  const NoiseParams none{0.0, 0.0, 0.0};
  std::mt19937_64 rng(1);

  const MotionResult still = apply_motion(w, Pose2(3, 3, 0.2), {0.0, 0.0}, none, rng);
  CHECK(still.true_pose == Pose2(3, 3, 0.2));
  CHECK(still.odometry == Pose2(0, 0, 0));

  const MotionResult turn = apply_motion(w, Pose2(1, 1, 0), {1.0, kPi / 2}, none, rng);
  CHECK(turn.true_pose.x == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(turn.true_pose.y == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(turn.true_pose.theta == doctest::Approx(kPi / 2).epsilon(1e-15));

  std::uniform_real_distribution<double> pos(8.0, 12.0), ang(-kPi, kPi), fwd(-2.0, 2.0);
  for (int k = 0; k < 100; ++k) {
    const Pose2 p(pos(rng), pos(rng), ang(rng));
    const Control u{fwd(rng), ang(rng)};
    const MotionResult m = apply_motion(w, p, u, none, rng);
    const double x = p.x + u.forward * std::cos(p.theta);
    const double y = p.y + u.forward * std::sin(p.theta);
    CHECK(m.true_pose.x == doctest::Approx(x).epsilon(1e-12));
    CHECK(m.true_pose.y == doctest::Approx(y).epsilon(1e-12));
    CHECK(std::abs(wrap_angle(m.true_pose.theta - (p.theta + u.rotate))) < 1e-12);
    CHECK_FALSE(m.collided);
    CHECK(m.odometry.x == doctest::Approx(u.forward));
  }
}

TEST_CASE("seeded motion noise is reproducible") {
  const GroundTruthWorld w = load_environment(kEmpty4);
  auto run = [&](std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<Pose2> out;
    Pose2 p(1.25, 1.25, 0.0);
    for (int k = 0; k < 10; ++k) {
      const MotionResult m = apply_motion(w, p, {0.1, 0.05}, NoiseParams{}, rng);
      p = m.true_pose;
      out.push_back(p);
      out.push_back(m.odometry);
    }
    return out;
  };
  CHECK(run(42) == run(42));
  CHECK(run(42) != run(43));
}

TEST_CASE("motion into a wall stops at the last free point") {
  const GroundTruthWorld w = load_environment(kEmpty4);
  std::mt19937_64 rng(3);
  const MotionResult m = apply_motion(w, Pose2(1.75, 1.75, 0.0), {5.0, 0.0}, NoiseParams{0, 0, 0}, rng);
  CHECK(m.collided);
  CHECK(w.is_free_at(m.true_pose.translation()));
  CHECK(m.true_pose.x < 3.5);
  CHECK(m.true_pose.x > 3.5 - 0.5 / 16.0 - 1e-12);
  CHECK(m.travelled == doctest::Approx(m.true_pose.x - 1.75));
  CHECK(m.odometry.x == doctest::Approx(m.travelled));
}

TEST_CASE("ray walk visits the cells a dense sampling of the segment crosses") {
  const GridGeometry g{40, 30, 0.25};
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> ux(0.1, 9.9), uy(0.1, 7.4), ang(-kPi, kPi), len(0.5, 6.0);
  for (int k = 0; k < 200; ++k) {
    const Eigen::Vector2d from(ux(rng), uy(rng));
    const double a = ang(rng);
    const Eigen::Vector2d dir(std::cos(a), std::sin(a));
    const double l = len(rng);
    std::vector<CellIndex> walked;
    double last_t = -1.0;
    bool monotone = true;
    walk_ray(g, from, dir, l, [&](CellIndex c, double t) {
      walked.push_back(c);
      monotone = monotone && t >= last_t;
      last_t = t;
      return true;
    });
    CHECK(monotone);
    const std::set<CellIndex> oracle = sampled_cells(g, from, dir, l);
    const std::set<CellIndex> got(walked.begin(), walked.end());
    CHECK(got.size() == walked.size());
    // The walk may include one extra cell entered exactly at the end of the segment.
    for (CellIndex c : oracle) CHECK(got.count(c) == 1);
    CHECK(got.size() <= oracle.size() + 1);
    for (std::size_t i = 1; i < walked.size(); ++i) {
      const int dc = std::abs(g.col_of(walked[i]) - g.col_of(walked[i - 1]));
      const int dr = std::abs(g.row_of(walked[i]) - g.row_of(walked[i - 1]));
      CHECK(dc + dr == 1);
    }
  }
}

TEST_CASE("scan against a wall 1 m ahead") {
  const GroundTruthWorld w = load_environment(R"({"size_m": [6, 6], "resolution": 0.5,
      "walls": [[3.1, 0.5, 3.4, 5.5]], "start_poses": [[2.0, 2.25, 0]]})");
  const Pose2 pose(2.0, 2.25, 0.0);
  const ScanResult s = simulate_scan(w, pose, SensorParams{});
  const auto beam = std::find_if(s.beams.begin(), s.beams.end(), [](const Beam& b) { return std::abs(b.angle) < 1e-12; });
  REQUIRE(beam != s.beams.end());
  CHECK(beam->hit);
  // The wall face is at x = 3.0, 1 m ahead.
  CHECK(std::abs(beam->range - 1.0) <= 0.25);
  const CellIndex wall = w.grid.index(6, 4);
  CHECK(std::binary_search(s.observed_occupied.begin(), s.observed_occupied.end(), wall));
  CHECK(s.beams.size() == 180);
}

TEST_CASE("scan in an empty room sees max range everywhere it can") {
  const GroundTruthWorld w = load_environment(R"({"size_m": [12, 12], "resolution": 0.5, "start_poses": [[6.25, 6.25, 0]]})");
  const ScanResult s = simulate_scan(w, Pose2(6.25, 6.25, 0.3), SensorParams{});
  for (const Beam& b : s.beams) {
    CHECK_FALSE(b.hit);
    CHECK(b.range == doctest::Approx(3.0));
  }
  CHECK(s.observed_occupied.empty());
  for (CellIndex c : s.observed_free) CHECK_FALSE(w.is_occupied(c));
}

TEST_CASE("objects beyond range are not observed") {
  const GroundTruthWorld w = load_environment(R"({"size_m": [10, 4], "resolution": 0.5,
      "objects": [{"id": 5, "rect": [6.6, 1.6, 6.9, 1.9]}], "start_poses": [[1.25, 1.75, 0]]})");
  const ScanResult far = simulate_scan(w, Pose2(1.25, 1.75, 0.0), SensorParams{});
  CHECK(far.observed_objects.empty());
  const ScanResult near = simulate_scan(w, Pose2(5.25, 1.75, 0.0), SensorParams{});
  CHECK(near.observed_objects == std::vector<int>{5});
}

TEST_CASE("scan cells stay within range and the observed sets are disjoint") {
  std::mt19937_64 rng(5);
  for (int k = 0; k < 20; ++k) {
    const GroundTruthWorld w = load_environment(random_object_config(10.0, 10.0, 0.5, 8, 0.5 + 0.1 * (k % 5), rng));
    std::uniform_real_distribution<double> u(0.5, 9.5), ang(-kPi, kPi);
    for (int t = 0; t < 10; ++t) {
      Pose2 p(u(rng), u(rng), ang(rng));
      if (!w.is_free_at(p.translation())) continue;
      const ScanResult s = simulate_scan(w, p, SensorParams{});
      const double bound = 3.0 + 0.5;
      std::vector<CellIndex> both;
      std::set_intersection(s.observed_free.begin(), s.observed_free.end(), s.observed_occupied.begin(),
                            s.observed_occupied.end(), std::back_inserter(both));
      CHECK(both.empty());
      for (CellIndex c : s.observed_free) CHECK((w.grid.center(c) - p.translation()).norm() <= bound);
      for (CellIndex c : s.observed_occupied) {
        CHECK((w.grid.center(c) - p.translation()).norm() <= bound);
        CHECK(w.is_occupied(c));
      }
      for (const Beam& b : s.beams) CHECK(b.range <= 3.0);
    }
  }
}
