#include "rexsim/train.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include "json.hpp"

namespace rexsim {

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(1, workers)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < threads; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) {
        try {
          fn(i);
        } catch (...) {
          std::lock_guard lock(failure_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

StepOutput pipeline_step(const Environment& env, const Policy& snapshot, const Policy& current,
                         const PromptPool& pool, const PmfModel& pmf, const StepSettings& s,
                         StepKey key) {
  const std::size_t nq = env.question_count();
  std::vector<Group> groups(nq);
  std::vector<std::vector<Trajectory>> probes(nq);
  std::vector<ProbeStats> pstats(nq);
  parallel_for(nq, s.workers, [&](std::size_t q) {
    const auto qid = static_cast<QuestionId>(q);
    groups[q] = rollout_group(env, snapshot, qid, s.group_size, s.budget, key);
    probes[q] = probe_resample(groups[q], s.p, pool, snapshot, s.budget, key, &pstats[q]);
  });

  StepOutput out;
  std::vector<Trajectory> all;
  std::size_t on_policy = 0;
  for (std::size_t q = 0; q < nq; ++q) {
    on_policy += groups[q].trajectories.size();
    for (auto& t : probes[q]) all.push_back(std::move(t));
    const auto& ps = pstats[q];
    out.probe_stats.attempted += ps.attempted;
    out.probe_stats.generated += ps.generated;
    out.probe_stats.fallback_splices += ps.fallback_splices;
    out.probe_stats.skipped_no_answer += ps.skipped_no_answer;
  }
  out.probes_generated = all.size();
  auto kept = filter_trajectories(all, snapshot, s.budget, s.retention_alpha, on_policy);
  out.probes_retained = kept.size();
  for (auto& t : kept) groups[static_cast<std::size_t>(t.question_id)].trajectories.push_back(std::move(t));

  const Batch batch = prepare_batch(groups, snapshot, s.budget, pmf, s.correction);
  out.objective = surrogate(batch, current, s.correction, s.estimator);
  out.groups = std::move(groups);
  return out;
}

StepSettings step_settings(const RunConfig& c) {
  StepSettings s;
  s.group_size = c.group_size;
  s.p = c.probe_probability();
  s.retention_alpha = c.retention_alpha();
  s.budget = c.budget();
  s.correction = c.correction();
  s.estimator = c.estimator();
  s.workers = c.workers;
  return s;
}

World build_world(const RunConfig& c) { return generate_world(c.world_seed, c.world); }

PromptPool build_pool(const RunConfig& c, const World& w) {
  if (c.pool_file.empty()) return synthetic_pool(w, c.pool_size, c.pool_seed, c.pool_max_words);
  std::ifstream in(c.pool_file);
  if (!in) throw Error(ErrorCode::IoError, "cannot open pool file '" + c.pool_file + "'");
  return PromptPool(read_pool(in), w.vocab().marker(Marker::ThinkOpen));
}

namespace {

double visited_entropy(const Policy& policy, std::span<const Group> groups, const Budget& budget) {
  std::set<ContextState> seen;
  for (const auto& g : groups) {
    for (const auto& t : g.trajectories) {
      if (t.source != Source::OnPolicy) continue;
      const Replay r = replay(policy.env(), t.question_id, t.tokens, budget);
      for (const auto& st : r.steps) {
        if (!st.injected) seen.insert(st.context);
      }
    }
  }
  if (seen.empty()) return 0.0;
  double h = 0.0;
  for (const auto& c : seen) h += policy.entropy(c);
  return h / static_cast<double>(seen.size());
}

void save_checkpoint(const Policy& p, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  p.save(out);
}

double window_mean(const std::vector<stats::MetricsRow>& rows, std::size_t window,
                   double stats::MetricsRow::*field) {
  if (rows.empty()) return 0.0;
  const std::size_t n = std::min(window, rows.size());
  double s = 0.0;
  for (std::size_t i = rows.size() - n; i < rows.size(); ++i) s += rows[i].*field;
  return s / static_cast<double>(n);
}

}  // namespace

TrainResult train(const RunConfig& c, const std::string& out_dir) {
  c.validate();
  const World world = build_world(c);
  const PromptPool pool = build_pool(c, world);
  const PmfModel pmf = build_pmf(pool);
  const StepSettings settings = step_settings(c);
  Policy policy(world, c.temperature);

  std::filesystem::path dir(out_dir);
  std::ofstream metrics;
  if (!out_dir.empty()) {
    std::filesystem::create_directories(dir);
    std::ofstream cfg(dir / "config.txt");
    write_config(cfg, c);
    save_checkpoint(policy, dir / "checkpoint_init.txt");
    metrics.open(dir / "metrics.csv");
    if (!metrics) throw Error(ErrorCode::IoError, "cannot write metrics.csv");
    metrics << stats::kMetricsHeader << '\n';
  }

  TrainResult result;
  const double warmup_steps = c.warmup_ratio * static_cast<double>(c.steps);
  for (std::size_t step = 0; step < c.steps; ++step) {
    const Policy snapshot = policy;
    StepOutput out;
    try {
      out = pipeline_step(world, snapshot, policy, pool, pmf, settings, StepKey{c.seed, step});
    } catch (const Error& e) {
      if (!out_dir.empty() && e.code() == ErrorCode::NonFiniteObjective) {
        save_checkpoint(policy, dir / "checkpoint_abort.txt");
      }
      throw;
    }
    stats::StepDiagnostics d;
    d.entropy = visited_entropy(snapshot, out.groups, settings.budget);
    d.mean_omega = out.objective.diagnostics.mean_omega;
    d.max_omega = out.objective.diagnostics.max_omega;
    d.clip_frac = out.objective.diagnostics.clip_frac;
    d.kl = out.objective.diagnostics.kl;
    d.probes_retained = out.probes_retained;
    const auto row = stats::metrics_step(step, out.groups, d);
    result.rows.push_back(row);
    if (metrics.is_open()) metrics << stats::format_row(row) << '\n';

    result.probe_stats.attempted += out.probe_stats.attempted;
    result.probe_stats.generated += out.probe_stats.generated;
    result.probe_stats.fallback_splices += out.probe_stats.fallback_splices;
    result.probe_stats.skipped_no_answer += out.probe_stats.skipped_no_answer;
    result.probes_retained += out.probes_retained;
    if (step + 1 == c.steps) {
      for (auto& g : out.groups) {
        for (auto& t : g.trajectories) result.last_step.push_back(std::move(t));
      }
    }

    double lr = c.learning_rate;
    if (warmup_steps > 0.0) lr *= std::min(1.0, static_cast<double>(step + 1) / warmup_steps);
    policy.apply_update(out.objective.gradient, lr, c.weight_decay);
  }

  if (!result.rows.empty()) result.initial_dead_end_rate = result.rows.front().dead_end_rate;
  result.final_success_rate = window_mean(result.rows, c.final_window, &stats::MetricsRow::success_rate);
  result.final_dead_end_rate = window_mean(result.rows, c.final_window, &stats::MetricsRow::dead_end_rate);

  if (!out_dir.empty()) {
    save_checkpoint(policy, dir / "checkpoint_final.txt");
    nlohmann::ordered_json j;
    j["steps"] = c.steps;
    j["seed"] = c.seed;
    j["mode"] = std::string(to_string(c.mode));
    j["initial_dead_end_rate"] = result.initial_dead_end_rate;
    j["final_success_rate"] = result.final_success_rate;
    j["final_dead_end_rate"] = result.final_dead_end_rate;
    j["final_window"] = c.final_window;
    j["probes"] = {{"attempted", result.probe_stats.attempted},
                   {"generated", result.probe_stats.generated},
                   {"fallback_splices", result.probe_stats.fallback_splices},
                   {"skipped_no_answer", result.probe_stats.skipped_no_answer},
                   {"retained", result.probes_retained}};
    nlohmann::ordered_json cfg;
    for (const auto& [k, v] : c.to_pairs()) cfg[k] = v;
    j["config"] = cfg;
    std::ofstream s(dir / "summary.json");
    s << j.dump(2) << '\n';
  }
  return result;
}

std::vector<SweepRow> sweep(const RunConfig& base, std::string_view axis,
                            const std::vector<std::string>& values, const std::string& out_dir) {
  std::string key;
  if (axis == "p") key = "p";
  else if (axis == "alpha") key = "alpha";
  else if (axis == "pool_size") key = "pool.size";
  else throw Error(ErrorCode::ConfigError, "unknown sweep axis '" + std::string(axis) + "'");
  if (values.empty()) throw Error(ErrorCode::ConfigError, "sweep needs at least one value");
  std::vector<SweepRow> rows;
  for (const auto& v : values) {
    RunConfig c = base;
    c.set(key, v);
    c.validate();
    const std::string sub = out_dir.empty() ? "" : (std::filesystem::path(out_dir) / (std::string(axis) + "=" + v)).string();
    rows.push_back({v, train(c, sub)});
  }
  if (!out_dir.empty()) {
    std::ofstream rep(std::filesystem::path(out_dir) / "sweep.csv");
    rep << axis << ",final_success_rate,final_dead_end_rate\n";
    for (const auto& r : rows) {
      char buf[256];
      std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g\n", r.value.c_str(), r.result.final_success_rate,
                    r.result.final_dead_end_rate);
      rep << buf;
    }
  }
  return rows;
}

}  // namespace rexsim
