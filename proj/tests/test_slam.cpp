#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "explore/slam.hpp"
#include "slam_oracle.hpp"

using namespace explore;

namespace {

const Eigen::Matrix3d kTight = diagonal_information(1e-3, 1e-3);

std::string error_of(auto&& fn) {
  try {
    fn();
  } catch (const std::exception& e) {
    return e.what();
  }
  return "no error";
}

FactorGraph chain(int n, const Pose2& step, double sigma = 0.1) {
  FactorGraph g;
  g.add_pose(Pose2());
  g.add_factor(make_prior(0, Pose2(), kTight));
  for (int i = 1; i < n; ++i) {
    g.add_pose(compose(g.pose(static_cast<std::size_t>(i - 1)), step));
    g.add_factor(make_between(FactorKind::odometry, static_cast<std::size_t>(i - 1), static_cast<std::size_t>(i), step,
                              diagonal_information(sigma, sigma)));
  }
  return g;
}

}  // namespace

TEST_CASE("factor validation") {
  FactorGraph g;
  for (int i = 0; i < 8; ++i) g.add_pose(Pose2(i, 0, 0));
  CHECK(g.add_factor(make_prior(0, Pose2(), kTight)) == 0);
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::odometry, 3, 5, Pose2(2, 0, 0), kTight)); })
            .find("non-consecutive odometry") != std::string::npos);
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::ssm, 2, 4, Pose2(2, 0, 0), kTight)); })
            .find("non-consecutive ssm") != std::string::npos);
  CHECK(g.add_factor(make_between(FactorKind::pm, 0, 7, Pose2(7, 0, 0), kTight)) == 1);
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::sm, 3, 4, Pose2(1, 0, 0), kTight)); }) != "no error");
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::odometry, 7, 8, Pose2(1, 0, 0), kTight)); })
            .find("out of range") != std::string::npos);
  Eigen::Matrix3d bad = Eigen::Matrix3d::Identity();
  bad(2, 2) = -1.0;
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0), bad)); })
            .find("positive definite") != std::string::npos);
  bad = Eigen::Matrix3d::Identity();
  bad(0, 1) = 0.5;
  CHECK(error_of([&] { g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0), bad)); }) != "no error");
  CHECK(g.factors().size() == 2);
}

TEST_CASE("single pose with a prior sits on the prior mean") {
  FactorGraph g;
  g.add_pose(Pose2(0, 0, 0));
  g.add_factor(make_prior(0, Pose2(1, 2, 0.5), Eigen::Matrix3d::Identity()));
  const OptimizeResult r = g.optimize();
  CHECK(r.converged);
  CHECK(r.final_cost == doctest::Approx(0.0).epsilon(1e-20));
  CHECK(g.pose(0).x == doctest::Approx(1.0));
  CHECK(g.pose(0).y == doctest::Approx(2.0));
  CHECK(g.pose(0).theta == doctest::Approx(0.5));
  const Eigen::Matrix3d cov = g.marginal_covariance(0).cov;
  CHECK((cov - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("exact odometry is reproduced") {
  FactorGraph g;
  g.add_pose(Pose2());
  g.add_pose(Pose2(0.3, -0.2, 0.4));
  g.add_factor(make_prior(0, Pose2(), kTight));
  g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0), Eigen::Matrix3d::Identity()));
  const OptimizeResult r = g.optimize();
  CHECK(r.converged);
  CHECK(r.final_cost < 1e-20);
  CHECK(std::abs(g.pose(1).x - 1.0) < 1e-9);
  CHECK(std::abs(g.pose(1).y) < 1e-9);
  CHECK(std::abs(g.pose(1).theta) < 1e-9);
  CHECK_FALSE(g.stale());
}

TEST_CASE("conflicting loop closure matches the dense oracle") {
  FactorGraph g;
  g.add_pose(Pose2());
  g.add_pose(Pose2(1, 0, 0.5));
  g.add_pose(Pose2(1.5, 1, 1.2));
  g.add_factor(make_prior(0, Pose2(), diagonal_information(0.1, 0.1)));
  g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0.5), diagonal_information(0.1, 0.05)));
  g.add_factor(make_between(FactorKind::odometry, 1, 2, Pose2(1, 0.1, 0.6), diagonal_information(0.1, 0.05)));
  g.add_factor(make_between(FactorKind::pm, 0, 2, Pose2(1.2, 1.1, 1.0), diagonal_information(0.05, 0.02)));
  oracle::RandomGraph rg{g.poses(), g.factors()};
  const oracle::Comparison c = oracle::compare(rg);
  CHECK(c.max_pose_diff <= 1e-6);
  CHECK(c.max_cov_diff <= 1e-8);
  CHECK(c.cost_monotone);
}

TEST_CASE("random graphs match the dense oracle") {
  std::mt19937_64 rng(2024);
  for (int k = 0; k < 100; ++k) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    const oracle::Comparison c = oracle::compare(rg);
    CAPTURE(k);
    CHECK(c.max_pose_diff <= 1e-6);
    CHECK(c.max_cov_diff <= 1e-8);
    CHECK(c.cost_monotone);
  }
}

TEST_CASE("marginals are symmetric and PSD and match the dense inverse of the information") {
  std::mt19937_64 rng(9);
  for (int k = 0; k < 30; ++k) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    FactorGraph g;
    for (const Pose2& p : rg.initial) g.add_pose(p);
    for (const Factor& f : rg.factors) g.add_factor(f);
    g.optimize();
    const Eigen::MatrixXd inv = g.dense_information().inverse();
    const auto all = g.all_marginals();
    for (std::size_t i = 0; i < g.pose_count(); ++i) {
      const Eigen::Matrix3d m = g.marginal_covariance(i).cov;
      CHECK((m - m.transpose()).cwiseAbs().maxCoeff() == 0.0);
      CHECK(Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(m).eigenvalues().minCoeff() >= -1e-9);
      const auto b = 3 * static_cast<Eigen::Index>(i);
      CHECK((m - inv.block<3, 3>(b, b)).cwiseAbs().maxCoeff() < 1e-10);
      CHECK((all[i] - m).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("two-pose chain marginal equals the closed form") {
  FactorGraph g;
  g.add_pose(Pose2());
  g.add_pose(Pose2(1, 0, 0));
  g.add_factor(make_prior(0, Pose2(), Eigen::Matrix3d::Identity()));
  g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0), Eigen::Matrix3d::Identity()));
  g.optimize();
  // x1 = x0 (+) z: Sigma1 = J0 Sigma0 J0^T + J1 Sigma_z J1^T with J0 = [[1,0,0],[0,1,1],[0,0,1]], J1 = I.
  Eigen::Matrix3d j0 = Eigen::Matrix3d::Identity();
  j0(1, 2) = 1.0;
  const Eigen::Matrix3d expected = j0 * j0.transpose() + Eigen::Matrix3d::Identity();
  CHECK((g.marginal_covariance(1).cov - expected).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("unconstrained poses are named") {
  FactorGraph g;
  g.add_pose(Pose2());
  g.add_pose(Pose2(1, 0, 0));
  g.add_pose(Pose2(2, 0, 0));
  g.add_factor(make_prior(0, Pose2(), kTight));
  g.add_factor(make_between(FactorKind::odometry, 0, 1, Pose2(1, 0, 0), kTight));
  CHECK(g.unconstrained_pose() == std::size_t{2});
  try {
    g.optimize();
    FAIL("expected an error");
  } catch (const UnconstrainedPoseError& e) {
    CHECK(e.pose() == 2);
  }
  CHECK_THROWS_AS(g.marginal_covariance(2), UnconstrainedPoseError);

  FactorGraph no_prior;
  no_prior.add_pose(Pose2());
  CHECK_THROWS_AS(no_prior.optimize(), SlamError);
}

TEST_CASE("non-convergence returns the best estimate without throwing") {
  std::mt19937_64 rng(4);
  oracle::RandomGraph rg;
  while (rg.initial.size() < 4) rg = oracle::random_graph(rng);
  FactorGraph g;
  for (const Pose2& p : rg.initial) g.add_pose(p);
  for (const Factor& f : rg.factors) g.add_factor(f);
  const double before = g.total_cost();
  const OptimizeResult r = g.optimize(1);
  CHECK(r.iterations <= 1);
  CHECK(r.final_cost <= before);
  CHECK(r.final_cost == doctest::Approx(g.total_cost()));
}

TEST_CASE("loop closures never grow the marginal determinant") {
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> turn(-0.6, 0.6);
  for (int k = 0; k < 20; ++k) {
    FactorGraph g = chain(8, Pose2(0.5, 0.0, turn(rng)));
    g.optimize();
    std::vector<double> before;
    for (std::size_t j = 0; j < g.pose_count(); ++j) before.push_back(g.marginal_covariance(j).cov.determinant());
    const std::size_t i = static_cast<std::size_t>(k % 4), j = 7;
    g.add_factor(make_between(FactorKind::pm, i, j, between(g.pose(i), g.pose(j)), diagonal_information(0.05, 0.01)));
    g.optimize();
    for (std::size_t p = 0; p < g.pose_count(); ++p)
      CHECK(g.marginal_covariance(p).cov.determinant() <= before[p] + 1e-9);
  }
}

TEST_CASE("loop closure detection") {
  std::mt19937_64 rng(1);
  const LoopClosureParams params;  // r_pm 1.0

  SUBCASE("a straight run has no loop closures") {
    std::vector<Pose2> truth;
    std::vector<ScanResult> history(4);
    FactorGraph g;
    for (int i = 0; i < 4; ++i) {
      truth.emplace_back(0.5 * i, 0, 0);
      g.add_pose(truth.back());
    }
    CHECK(detect_loop_closures(g, 3, history, truth, params, rng).empty());
  }

  SUBCASE("returning near the first pose closes a loop to it") {
    // Square loop of side 1.25 m, 11 poses; pose 10 lands 0.22 m from pose 0.
    std::vector<Pose2> truth;
    const double s = 1.25;
    const std::vector<Eigen::Vector2d> corners{{0, 0}, {s, 0}, {s, s}, {0, s}, {0, 0}};
    for (int i = 0; i <= 10; ++i) {
      const double t = 4.0 * i / 10.0;
      const int seg = std::min(static_cast<int>(t), 3);
      const Eigen::Vector2d p = corners[seg] + (t - seg) * (corners[seg + 1] - corners[seg]);
      truth.emplace_back(p.x(), p.y(), seg * std::numbers::pi / 2);
    }
    truth[10] = Pose2(-0.2, 0.1, 0.0);
    FactorGraph g;
    for (const Pose2& p : truth) g.add_pose(p);
    std::vector<ScanResult> history(11);
    const auto found = detect_loop_closures(g, 10, history, truth, params, rng);
    REQUIRE(found.size() == 1);
    CHECK(found[0].kind == FactorKind::pm);
    CHECK(found[0].from == 0);
    CHECK(found[0].to == 10);
    const Eigen::Matrix3d info = diagonal_information(params.sigma_pm_trans, params.sigma_pm_rot);
    CHECK((found[0].information - info).cwiseAbs().maxCoeff() == 0.0);
    const Pose2 exact = between(truth[0], truth[10]);
    CHECK(std::abs(found[0].measurement.x - exact.x) < 6 * params.sigma_pm_trans);
  }

  SUBCASE("an object seen again links to its first observer") {
    std::vector<Pose2> truth;
    std::vector<ScanResult> history(10);
    FactorGraph g;
    for (int i = 0; i < 10; ++i) {
      truth.emplace_back(2.0 * i, 0, 0);
      g.add_pose(truth.back());
    }
    history[2].observed_objects = {4};
    history[9].observed_objects = {4};
    const auto found = detect_loop_closures(g, 9, history, truth, params, rng);
    REQUIRE(found.size() == 1);
    CHECK(found[0].kind == FactorKind::sm);
    CHECK(found[0].from == 2);
    CHECK(found[0].to == 9);

    // Still in view at the previous pose: same segment, nothing new.
    history[8].observed_objects = {4};
    CHECK(detect_loop_closures(g, 9, history, truth, params, rng).empty());
  }
}

TEST_CASE("noisy_between is unbiased around the true relative pose") {
  std::mt19937_64 rng(3);
  const Pose2 a(1, 2, 0.3), b(2, 2.5, -0.4);
  const Pose2 exact = between(a, b);
  Eigen::Vector3d mean = Eigen::Vector3d::Zero();
  const int n = 20000;
  for (int k = 0; k < n; ++k) {
    const Pose2 z = noisy_between(a, b, 0.05, 0.01, rng);
    mean += Eigen::Vector3d(z.x - exact.x, z.y - exact.y, wrap_angle(z.theta - exact.theta));
  }
  mean /= n;
  CHECK(std::abs(mean(0)) < 4 * 0.05 / std::sqrt(n));
  CHECK(std::abs(mean(2)) < 4 * 0.01 / std::sqrt(n));
}

TEST_CASE("pose graph text round trip") {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 20; ++k) {
    const oracle::RandomGraph rg = oracle::random_graph(rng);
    FactorGraph g;
    for (const Pose2& p : rg.initial) g.add_pose(p);
    for (const Factor& f : rg.factors) g.add_factor(f);
    std::stringstream text;
    write_pose_graph(text, g);
    const FactorGraph back = read_pose_graph(text);
    REQUIRE(back.pose_count() == g.pose_count());
    REQUIRE(back.factors().size() == g.factors().size());
    for (std::size_t i = 0; i < g.pose_count(); ++i) CHECK(back.pose(i) == g.pose(i));
    for (std::size_t i = 0; i < g.factors().size(); ++i) {
      const Factor& a = g.factors()[i];
      const Factor& b = back.factors()[i];
      CHECK(a.kind == b.kind);
      CHECK(a.from == b.from);
      CHECK(a.to == b.to);
      CHECK(a.measurement == b.measurement);
      CHECK(a.information == b.information);
    }
  }
}

TEST_CASE("pose graph reader errors carry line numbers") {
  auto read = [](const std::string& text) {
    std::istringstream in(text);
    return error_of([&] { read_pose_graph(in); });
  };
  CHECK(read("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 2 0 0 0\n").find("line 2") != std::string::npos);
  CHECK(read("VERTEX_SE2 0 0 0 0\nBOGUS 1\n").find("line 2: unknown record BOGUS") != std::string::npos);
  CHECK(read("VERTEX_SE2 0 0 0 0\nVERTEX_SE2 1 1 0 0\nEDGE_SE2 0 1 1 0 0 1 0 0 1 0\n").find("line 3") !=
        std::string::npos);
  CHECK(read("VERTEX_SE2 0 0 0 0\nFIX 0\n") == "no error");
}
