#include <cmath>
#include <numeric>

#include "doctest.h"
#include "rexsim/correction.hpp"

using namespace rexsim;

namespace {

Trajectory make(Source src, std::vector<Token> tokens, std::vector<Segment> segments, double p_each) {
  Trajectory t;
  t.source = src;
  t.tokens = std::move(tokens);
  t.segments = std::move(segments);
  t.behavior_logprobs.assign(t.tokens.size(), std::log(p_each));
  return t;
}

double analytic_kl(const std::vector<double>& p, const std::vector<double>& q) {
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += p[i] * std::log(p[i] / q[i]);
  return s;
}

// Order-1 chain with a random prior; `current` is the prior nudged on every
// row a short rollout can reach.
struct Bench {
  ChainEnv env{ChainParams{3, 3, -1, ChainReward::LastEquals, 2, 1.0, 21, 1}};
  Policy behavior{env};

  std::vector<Group> groups(int G, std::uint64_t seed) const {
    std::vector<Group> out{rollout_group(env, behavior, 0, G, env.budget(), StepKey{seed, 0})};
    return out;
  }
};

void nudge(Policy& pi, const Environment& env, double size, std::uint64_t seed) {
  Rng rng(stream_key({seed}));
  for (Token last = -1; last < static_cast<Token>(env.action_count()); ++last) {
    ContextState c;
    c.recent[0] = last;
    for (double& x : pi.row(c)) x += size * (rng.uniform() - 0.5);
  }
}

}  // namespace

TEST_CASE("importance_ratio") {
  CHECK(importance_ratio(0.3, 0.9, 0.0) == 1.0);
  CHECK(importance_ratio(0.37, 0.37, 0.12) == 1.0);
  CHECK(importance_ratio(0.37, 0.0, 0.12) == 1.12);
  CHECK(std::abs(importance_ratio(0.2, 0.8, 0.25) - 0.625) < 1e-15);
  try {
    importance_ratio(0.0, 0.5, 0.1);
    FAIL("expected DegenerateDensity");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::DegenerateDensity);
  }
  Rng rng(stream_key({8}));
  for (int i = 0; i < 10000; ++i) {
    const double p = rng.uniform() + 1e-6, a = 2 * rng.uniform();
    CHECK(importance_ratio(p, p, a) == 1.0);
    CHECK(importance_ratio(p, 0.0, a) == 1.0 + a);
    CHECK(importance_ratio(p, rng.uniform(), a) > 0.0);
  }
}

TEST_CASE("mixing_coefficients") {
  CHECK(mixing_coefficients(0.0) == std::pair<double, double>{1.0, 0.0});
  CHECK(mixing_coefficients(1.0) == std::pair<double, double>{0.5, 0.5});
  const auto [ct, ce] = mixing_coefficients(0.12);
  CHECK(std::abs(ct - 0.8928571428571429) < 1e-15);
  CHECK(std::abs(ce - 0.10714285714285714) < 1e-15);
  CHECK(std::abs(ct + ce - 1.0) < 1e-15);
}

TEST_CASE("normalize_advantages") {
  const auto a = normalize_advantages(std::vector<double>{1, 0, 0, 1});
  CHECK(a == std::vector<double>{1, -1, -1, 1});
  CHECK(normalize_advantages(std::vector<double>{1, 1, 1}) == std::vector<double>{0, 0, 0});
  const auto b = normalize_advantages(std::vector<double>{1, 0, 0, 1, 0});
  const std::vector<double> expect{1.2247, -0.8165, -0.8165, 1.2247, -0.8165};
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(b[i] - expect[i]) < 1e-4);

  Rng rng(stream_key({9}));
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<double> r(1 + rng.below(10));
    for (double& x : r) x = rng.bernoulli(0.4) ? 1.0 : 0.0;
    const auto adv = normalize_advantages(r);
    const double mean = std::accumulate(adv.begin(), adv.end(), 0.0) / static_cast<double>(adv.size());
    CHECK(std::abs(mean) < 1e-9);
    double var = 0.0;
    for (double x : adv) var += x * x;
    const bool flat = std::all_of(adv.begin(), adv.end(), [](double x) { return x == 0.0; });
    if (!flat) CHECK(std::abs(var / static_cast<double>(adv.size()) - 1.0) < 1e-6);
  }
}

TEST_CASE("kl_estimate") {
  CHECK(kl_estimate(0.4, 0.4) == 0.0);
  CHECK(std::abs(kl_estimate(0.6, 0.3) - (0.5 - std::log(0.5) - 1.0)) < 1e-15);
  CHECK(std::abs(kl_estimate(0.6, 0.3) - 0.19315) < 1e-5);
  CHECK_THROWS_AS(kl_estimate(0.0, 0.3), Error);
  Rng rng(stream_key({10}));
  for (int i = 0; i < 10000; ++i) CHECK(kl_estimate(rng.uniform() + 1e-9, rng.uniform() + 1e-9) >= 0.0);
}

TEST_CASE("kl_estimate averages to the analytic KL") {
  const std::vector<double> p{0.5, 0.3, 0.15, 0.05};
  const std::vector<double> q{0.25, 0.25, 0.25, 0.25};
  Rng rng(stream_key({11}));
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const std::size_t a = rng.categorical(p);
    const double k = kl_estimate(p[a], q[a]);
    s += k;
    s2 += k * k;
  }
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean - analytic_kl(p, q)) < 3 * se);
}

TEST_CASE("probe_density") {
  SUBCASE("origin tokens carry the failure rate") {
    const ChainEnv env(ChainParams{2, 6, 1, ChainReward::AnswerEquals, 0});
    const Policy pi(env);
    const PmfModel pmf = build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}}));
    const auto t = make(Source::Probe, {0, 0, 0, 1, 0},
                        {{SegmentKind::Origin, 0, 2}, {SegmentKind::Prompt, 2, 3}, {SegmentKind::Probe, 3, 5}}, 0.5);
    const auto eps = probe_density(t, pi, env.budget(), pmf, 0.5);
    CHECK(std::abs(eps[0] - 0.5 / std::sqrt(0.5)) < 1e-15);
    CHECK(std::abs(eps[0] - 0.70711) < 1e-5);
    CHECK(std::abs(eps[0] * eps[1] - 0.25 / 0.5) < 1e-15);
    CHECK(eps[2] == 1.0);
    CHECK(eps[3] == 0.5);
    CHECK(eps[4] == 0.5);
    try {
      probe_density(t, pi, env.budget(), pmf, 0.0);
      FAIL("expected ZeroFailureRate");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ZeroFailureRate);
    }
  }
  SUBCASE("prompt tokens follow the pool model") {
    const ChainEnv env(ChainParams{5, 8});
    const Policy pi(env);
    const PromptPool pool({{0, 1, 2}, {0, 1, 3}});
    const PmfModel pmf = build_pmf(pool);
    const auto t = make(Source::Probe, {4, 0, 1, 2, 3},
                        {{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 4}, {SegmentKind::Probe, 4, 5}}, 0.2);
    const auto eps = probe_density(t, pi, env.budget(), pmf, 1.0);
    CHECK(eps[1] == 1.0);
    CHECK(eps[2] == 1.0);
    CHECK(eps[3] == 0.5);
    CHECK(std::abs(eps[4] - 0.2) < 1e-15);
    const auto coarse = probe_density(t, pi, env.budget(), pmf, 1.0, Ppd::Coarse);
    CHECK(coarse[1] == 0.5);
    CHECK(coarse[2] == 1.0);
    CHECK(coarse[3] == 1.0);
  }
  SUBCASE("probe segment is the identity") {
    const ChainEnv env(ChainParams{3, 4, -1, ChainReward::LastEquals, 0, 1.0, 5, 1});
    Policy pi(env);
    ContextState c;
    c.recent[0] = 1;
    pi.row(c) = {std::log(0.3), std::log(0.5), std::log(0.2)};
    const auto t = make(Source::Probe, {2, 1, 0},
                        {{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 2}, {SegmentKind::Probe, 2, 3}}, 0.3);
    const auto eps = probe_density(t, pi, env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{1}})), 1.0);
    CHECK(std::abs(eps[2] - 0.3) < 1e-15);
  }
  SUBCASE("on-policy input is rejected") {
    const ChainEnv env(ChainParams{2, 1});
    const auto t = make(Source::OnPolicy, {0}, {{SegmentKind::Plain, 0, 1}}, 0.5);
    CHECK_THROWS_AS(probe_density(t, Policy(env), env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}})), 0.5), Error);
  }
}

TEST_CASE("filter_trajectories") {
  const ChainEnv env(ChainParams{4, 3, -1, ChainReward::LastEquals, 0, 2.0, 13, 1});
  const Policy pi(env);
  std::vector<Trajectory> probes;
  Rng rng(stream_key({12}));
  for (int i = 0; i < 10; ++i) {
    Trajectory t = run_episode(env, pi, 0, env.budget(), rng);
    t.source = Source::Probe;
    t.segments = {{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 2}, {SegmentKind::Probe, 2, 3}};
    t.rollout_index = i;
    probes.push_back(t);
  }

  CHECK(filter_trajectories(probes, pi, env.budget(), 0.0, 50).empty());
  CHECK(filter_trajectories(probes, pi, env.budget(), 1.0, 50) == probes);
  CHECK(filter_trajectories(probes, pi, env.budget(), std::numeric_limits<double>::infinity(), 5) == probes);

  const auto kept = filter_trajectories(probes, pi, env.budget(), 0.12, 50);
  REQUIRE(kept.size() == 6);
  std::vector<std::pair<double, int>> scores;
  for (const auto& t : probes) {
    const auto lp = logprob_trajectory(pi, t, env.budget());
    scores.push_back({std::accumulate(lp.begin(), lp.end(), 0.0) / static_cast<double>(lp.size()), t.rollout_index});
  }
  std::stable_sort(scores.begin(), scores.end(), [](auto& a, auto& b) { return a.first > b.first; });
  std::vector<int> expect;
  for (int i = 0; i < 6; ++i) expect.push_back(scores[static_cast<std::size_t>(i)].second);
  std::sort(expect.begin(), expect.end());
  std::vector<int> got;
  for (const auto& t : kept) got.push_back(t.rollout_index);
  CHECK(got == expect);
}

TEST_CASE("filter ties break by question then rollout index") {
  const ChainEnv env(ChainParams{2, 1});
  const Policy pi(env);
  std::vector<Trajectory> probes;
  for (int i : {3, 1, 2}) {
    auto t = make(Source::Probe, {0}, {{SegmentKind::Origin, 0, 0}, {SegmentKind::Prompt, 0, 1}, {SegmentKind::Probe, 1, 1}}, 0.5);
    t.rollout_index = i;
    probes.push_back(t);
  }
  const auto kept = filter_trajectories(probes, pi, env.budget(), 1.0, 2);
  REQUIRE(kept.size() == 2);
  CHECK(kept[0].rollout_index == 1);
  CHECK(kept[1].rollout_index == 2);
}

TEST_CASE("objective with zero advantages is the KL penalty") {
  Bench b;
  auto groups = b.groups(4, 3);
  for (auto& t : groups[0].trajectories) t.reward = 1.0;
  const Batch batch = prepare_batch(groups, b.behavior, b.env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}})),
                                    CorrectionParams{0.0, 0.2, 0.05});
  Policy current = b.behavior;
  nudge(current, b.env, 2.0, 4);
  const CorrectionParams params{0.0, 0.2, 0.05};
  const Objective o = grpo_objective(batch, current, params);

  const Policy ref = current.reference();
  double kl = 0.0;
  std::size_t n = 0;
  for (const auto& t : groups[0].trajectories) {
    const Replay r = replay(b.env, 0, t.tokens, b.env.budget());
    for (std::size_t i = 0; i < t.size(); ++i) {
      kl += kl_estimate(std::exp(current.logprob(r.steps[i].context, t.tokens[i])),
                        std::exp(ref.logprob(r.steps[i].context, t.tokens[i])));
      ++n;
    }
  }
  CHECK(std::abs(o.value + 0.05 * kl / static_cast<double>(n)) < 1e-12);

  Policy stepped = current;
  stepped.apply_update(o.gradient, 1e-2, 0.0);
  CHECK(grpo_objective(batch, stepped, params).value > o.value);
}

TEST_CASE("alpha 0 at a fresh snapshot is vanilla GRPO") {
  Bench b;
  auto groups = b.groups(6, 5);
  const CorrectionParams params{0.0, 0.2, 0.0};
  const Batch batch = prepare_batch(groups, b.behavior, b.env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}})), params);
  const Objective o = grpo_objective(batch, b.behavior, params);
  double expect = 0.0;
  for (double a : groups[0].advantages) expect += a / static_cast<double>(groups[0].trajectories.size());
  CHECK(std::abs(o.value - expect) < 1e-12);
  CHECK(std::abs(o.diagnostics.mean_omega - 1.0) < 1e-12);
  CHECK(o.diagnostics.clip_frac == 0.0);

  const Objective naive = naive_objective(batch, b.behavior, params);
  CHECK(naive.value == o.value);
  CHECK(naive.gradient.rows == o.gradient.rows);
}

TEST_CASE("surrogate gradient matches central differences") {
  Bench b;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    auto groups = b.groups(5, seed);
    for (auto& t : groups[0].trajectories) t.reward = t.tokens.back() == 2 ? 1.0 : 0.0;
    const CorrectionParams params{0.3, 0.2, 0.05};
    const Batch batch = prepare_batch(groups, b.behavior, b.env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}})), params);
    Policy current = b.behavior;
    nudge(current, b.env, 0.6, seed + 100);
    for (Estimator est : {Estimator::Corrected, Estimator::Naive}) {
      const Objective o = surrogate(batch, current, params, est);
      double worst = 0.0, scale = 1e-3;
      for (const auto& [c, row] : current.table()) {
        for (std::size_t j = 0; j < row.size(); ++j) {
          const double h = 1e-5;
          Policy up = current, down = current;
          up.row(c)[j] += h;
          down.row(c)[j] -= h;
          const double fd = (surrogate(batch, up, params, est).value - surrogate(batch, down, params, est).value) / (2 * h);
          const auto it = o.gradient.rows.find(c);
          const double g = it == o.gradient.rows.end() ? 0.0 : it->second[j];
          worst = std::max(worst, std::abs(fd - g));
          scale = std::max(scale, std::abs(fd));
        }
      }
      CHECK(worst / scale < 1e-6);
    }
  }
}

TEST_CASE("naive weights exceed corrected weights on inserted prompt tokens") {
  const ChainEnv env(ChainParams{3, 3, 2, ChainReward::AnswerEquals, 1, 1.5, 3, 1});
  const Policy pi(env);
  const PromptPool pool({{0}, {1, 0}});
  const PmfModel pmf = build_pmf(pool);
  // One failed rollout spliced at its answer marker.
  std::vector<Group> groups(1);
  Rng rng(stream_key({14}));
  Trajectory fail;
  while (true) {
    fail = run_episode(env, pi, 0, env.budget(), rng);
    if (fail.reward == 0.0 && env.splice_point(0, fail.tokens, env.budget())) break;
  }
  Trajectory win;
  do win = run_episode(env, pi, 0, env.budget(), rng);
  while (win.reward != 1.0);
  win.rollout_index = 1;
  groups[0].trajectories = {fail, win};
  std::vector<Trajectory> probes;
  for (std::uint64_t step = 0; probes.empty(); ++step) {
    probes = probe_resample(groups[0], 1.0, pool, pi, env.budget(), StepKey{1, step});
    if (!probes.empty() && probes[0].reward != 0.0) probes.clear();
  }
  groups[0].trajectories.push_back(probes[0]);

  const CorrectionParams params{0.5, kNoClip, 0.0};
  const Batch batch = prepare_batch(groups, pi, env.budget(), pmf, params);
  const auto& pt = batch.groups[0].trajectories[2];
  CHECK(pt.advantage < 0.0);
  const ImportanceRecord rec = importance_record(pt, pi, params);
  bool saw_prompt = false;
  for (std::size_t i = 0; i < pt.tokens.size(); ++i) {
    const auto& tok = pt.tokens[i];
    CHECK(rec.omega[i] > 0.0);
    if (tok.kind == SegmentKind::Prompt && tok.p_eps > tok.p_old) {
      saw_prompt = true;
      CHECK(rec.omega[i] < 1.0);  // the naive weight is 1 at the snapshot
    }
    if (tok.kind == SegmentKind::Probe) CHECK(std::abs(rec.omega[i] - 1.0) < 1e-12);
  }
  CHECK(saw_prompt);
  const auto& on = batch.groups[0].trajectories[0];
  for (double w : importance_record(on, pi, params).omega) CHECK(std::abs(w - 1.5) < 1e-12);
}

TEST_CASE("objective rejects non-finite values") {
  Bench b;
  auto groups = b.groups(3, 9);
  const CorrectionParams params{0.1, 0.2, 0.0};
  Batch batch = prepare_batch(groups, b.behavior, b.env.budget(), build_pmf(PromptPool(std::vector<std::vector<Token>>{{0}})), params);
  batch.groups[0].trajectories[0].advantage = std::numeric_limits<double>::infinity();
  batch.groups[0].trajectories[1].advantage = -std::numeric_limits<double>::infinity();
  try {
    grpo_objective(batch, b.behavior, params);
    FAIL("expected NonFiniteObjective");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteObjective);
  }
}
