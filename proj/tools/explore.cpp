#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "explore/bench.hpp"
#include "explore/protocol.hpp"
#include "explore/runner.hpp"
#include "explore/world.hpp"

namespace fs = std::filesystem;
using namespace explore;

namespace {

struct RunOptions {
  std::string env;
  std::string policy = "nf";
  std::uint64_t seed = 0;
  int episodes = 1;
  int max_steps = 200;
  double coverage_target = 0.85;
  double alpha = 0.05;
  std::string out;
  int parallel = 1;
  std::string endpoint = "tcp:127.0.0.1:7788";
  bool check_invariants = false;
};

void add_episode_flags(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--env", o.env, "environment config (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("--seed", o.seed, "base seed; episode k uses seed + k");
  cmd->add_option("--max-steps", o.max_steps, "decision steps per episode")->check(CLI::PositiveNumber);
  cmd->add_option("--coverage-target", o.coverage_target, "terminate at this explored fraction")
      ->check(CLI::Range(0.0, 1.0));
  cmd->add_option("--alpha", o.alpha, "travel cost weight per meter")->check(CLI::NonNegativeNumber);
  cmd->add_flag("--check-invariants", o.check_invariants, "record invariant violations in the terminal record");
}

EpisodeConfig make_config(const RunOptions& o) {
  EpisodeConfig cfg;
  cfg.env_name = fs::path(o.env).filename().string();
  cfg.policy = parse_policy(o.policy);
  cfg.seed = o.seed;
  cfg.max_steps = o.max_steps;
  cfg.coverage_target = o.coverage_target;
  cfg.alpha = o.alpha;
  cfg.check_invariants = o.check_invariants;
  cfg.validate();
  return cfg;
}

void print_summary(const std::vector<EpisodeLog>& logs) {
  for (const EpisodeLog& log : logs) {
    const Metrics m = compute_metrics(log);
    std::printf("episode %d seed %llu: %s after %d steps, coverage %.3f, distance %.2f m, map error %.4f m\n",
                log.config.episode, static_cast<unsigned long long>(log.config.seed), to_string(m.reason), m.steps,
                m.final_coverage, m.total_distance, m.map_error);
  }
}

int metrics_command(const std::string& in_dir, const std::string& csv) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.path().extension() == ".jsonl") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .jsonl logs in " + in_dir);
  std::ofstream out(csv);
  if (!out) throw std::runtime_error("cannot write " + csv);
  out << "file,policy,seed,reason,steps,map_error,occupancy_mismatch,total_distance,final_coverage,ssm,pm,sm,"
         "mean_decision_s\n";
  for (const fs::path& f : files) {
    std::ifstream in(f);
    const EpisodeLog log = EpisodeLog::from_jsonl(in);
    Metrics m = compute_metrics(log);
    fs::path timing = f;
    timing.replace_extension(".timing.csv");
    if (std::ifstream t(timing); t) {
      std::string line;
      std::getline(t, line);
      while (std::getline(t, line))
        if (const auto comma = line.find(','); comma != std::string::npos)
          m.decision_wall_time_s.push_back(std::stod(line.substr(comma + 1)));
    }
    double mean_t = 0.0;
    for (double t : m.decision_wall_time_s) mean_t += t;
    if (!m.decision_wall_time_s.empty()) mean_t /= static_cast<double>(m.decision_wall_time_s.size());
    out << f.filename().string() << ',' << to_string(log.config.policy) << ',' << log.config.seed << ','
        << to_string(m.reason) << ',' << m.steps << ',' << m.map_error << ',' << m.occupancy_mismatch << ','
        << m.total_distance << ',' << m.final_coverage << ',' << m.loop_closures.ssm << ',' << m.loop_closures.pm
        << ',' << m.loop_closures.sm << ',' << mean_t << '\n';
  }
  return 0;
}

std::vector<int> parse_counts(const std::string& text) {
  std::vector<int> counts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) counts.push_back(std::stoi(item));
  if (counts.empty()) throw std::invalid_argument("--counts needs at least one value");
  return counts;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"2D active-SLAM exploration simulator"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "run exploration episodes and write JSONL logs");
  add_episode_flags(run_cmd, run);
  run_cmd->add_option("--policy", run.policy, "nf, random, em or external")
      ->check(CLI::IsMember({"nf", "random", "em", "external"}));
  run_cmd->add_option("--episodes", run.episodes, "number of episodes")->check(CLI::PositiveNumber);
  run_cmd->add_option("--out", run.out, "output directory")->required();
  run_cmd->add_option("--parallel", run.parallel, "episodes run concurrently")->check(CLI::PositiveNumber);
  run_cmd->add_option("--endpoint", run.endpoint, "policy peer for --policy external (tcp:HOST:PORT)");

  RunOptions serve;
  serve.policy = "external";
  int max_sessions = 0;
  double timeout_s = 30.0;
  auto* serve_cmd = app.add_subcommand("serve", "serve the policy protocol; each reset starts an episode");
  add_episode_flags(serve_cmd, serve);
  serve_cmd->add_option("--endpoint", serve.endpoint, "tcp:HOST:PORT or stdio");
  serve_cmd->add_option("--max-sessions", max_sessions, "stop after this many connections (0: never)");
  serve_cmd->add_option("--timeout", timeout_s, "seconds to wait for an action")->check(CLI::PositiveNumber);

  std::string metrics_in, metrics_csv;
  auto* metrics_cmd = app.add_subcommand("metrics", "summarize episode logs into a CSV");
  metrics_cmd->add_option("--in", metrics_in, "directory of episode logs")->required()->check(CLI::ExistingDirectory);
  metrics_cmd->add_option("--csv", metrics_csv, "output CSV")->required();

  std::string bench_counts = "2,4,8,16", bench_csv;
  int bench_reps = 20;
  auto* bench_cmd = app.add_subcommand("bench", "time EM and NF decisions against the candidate count");
  bench_cmd->add_option("--counts", bench_counts, "comma-separated candidate counts");
  bench_cmd->add_option("--csv", bench_csv, "output CSV")->required();
  bench_cmd->add_option("--reps", bench_reps, "repetitions per count")->check(CLI::PositiveNumber);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run_cmd) {
      const EpisodeConfig cfg = make_config(run);
      const GroundTruthWorld world = load_environment_file(run.env);
      std::vector<EpisodeLog> logs;
      if (cfg.policy == PolicyKind::external) {
        const protocol::Endpoint ep = protocol::parse_endpoint(run.endpoint);
        if (ep.kind != protocol::Endpoint::Kind::tcp) throw std::invalid_argument("run --policy external needs a tcp endpoint");
        auto channel = protocol::connect_tcp(ep.host, ep.port);
        logs = protocol::run_external_episodes(world, cfg, run.episodes, *channel, run.out);
      } else {
        logs = run_episodes(world, cfg, run.episodes, run.parallel, run.out);
      }
      print_summary(logs);
      return 0;
    }
    if (*serve_cmd) {
      const EpisodeConfig cfg = make_config(serve);
      const GroundTruthWorld world = load_environment_file(serve.env);
      const protocol::Endpoint ep = protocol::parse_endpoint(serve.endpoint);
      protocol::SessionOptions opts;
      opts.action_timeout = std::chrono::milliseconds(static_cast<long long>(timeout_s * 1000.0));
      if (ep.kind == protocol::Endpoint::Kind::tcp)
        std::fprintf(stderr, "serving on %s\n", protocol::to_string(ep).c_str());
      protocol::serve_endpoint(ep, world, cfg, opts, max_sessions);
      return 0;
    }
    if (*metrics_cmd) return metrics_command(metrics_in, metrics_csv);
    if (*bench_cmd) {
      const std::vector<int> counts = parse_counts(bench_counts);
      const std::vector<BenchRow> rows = bench_decision_time(counts, bench_reps);
      std::ofstream out(bench_csv);
      if (!out) throw std::runtime_error("cannot write " + bench_csv);
      write_bench_csv(out, rows);
      write_bench_csv(std::cout, rows);
      return 0;
    }
  } catch (const EnvironmentError& e) {
    std::fprintf(stderr, "environment error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
