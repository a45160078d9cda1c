#pragma once

// Training loop: snapshot, rollouts, probes, filtering, correction, update.

#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "rexsim/config.hpp"
#include "rexsim/correction.hpp"
#include "rexsim/sampling.hpp"
#include "rexsim/stats.hpp"

namespace rexsim {

/// Runs fn(i) for i in [0, n) on up to `workers` threads.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

struct StepSettings {
  int group_size = 5;
  double p = 0.2;
  double retention_alpha = 0.12;
  Budget budget;
  CorrectionParams correction;
  Estimator estimator = Estimator::Corrected;
  int workers = 1;
};

struct StepOutput {
  std::vector<Group> groups;  // on-policy rollouts plus retained probes
  Objective objective;
  ProbeStats probe_stats;
  std::size_t probes_generated = 0;
  std::size_t probes_retained = 0;
};

/// One rollout/probe/filter/correct pass over every question of `env` with
/// the behavior policy `snapshot`; the surrogate is evaluated at `current`.
StepOutput pipeline_step(const Environment& env, const Policy& snapshot, const Policy& current,
                         const PromptPool& pool, const PmfModel& pmf, const StepSettings& s,
                         StepKey key);

StepSettings step_settings(const RunConfig& c);
World build_world(const RunConfig& c);
PromptPool build_pool(const RunConfig& c, const World& w);

struct TrainResult {
  std::vector<stats::MetricsRow> rows;
  double initial_dead_end_rate = 0.0;
  double final_success_rate = 0.0;  // mean over the last final_window rows
  double final_dead_end_rate = 0.0;
  ProbeStats probe_stats;
  std::size_t probes_retained = 0;
  std::vector<Trajectory> last_step;  // every trajectory of the final step
};

/// Writes metrics.csv, summary.json, config.txt and the initial and final
/// checkpoints into `out_dir` unless it is empty.
TrainResult train(const RunConfig& c, const std::string& out_dir);

struct SweepRow {
  std::string value;
  TrainResult result;
};

/// One run per value of `axis` (p, alpha or pool_size), sharing the seed.
std::vector<SweepRow> sweep(const RunConfig& base, std::string_view axis,
                            const std::vector<std::string>& values, const std::string& out_dir);

}  // namespace rexsim
