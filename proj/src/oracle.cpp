#include "rexsim/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include "json.hpp"

namespace rexsim::oracle {

namespace {

constexpr std::size_t kMaxOutcomes = 5'000'000;

void guard(const Environment& env, const Budget& budget) {
  if (env.action_count() > kMaxActions) {
    throw Error(ErrorCode::InstanceTooLarge, "oracle supports at most 8 actions");
  }
  if (budget.max_tokens > kMaxLength) {
    throw Error(ErrorCode::InstanceTooLarge, "oracle supports episodes of at most 8 tokens");
  }
}

void dfs(const Environment& env, const TokenPolicy& policy, const EpisodeState& s,
         const Weighted& cur, std::vector<Weighted>& out) {
  if (s.done) {
    out.push_back(cur);
    out.back().trajectory.reward = env.reward(s);
    return;
  }
  std::vector<double> probs(env.action_count());
  policy.distribution(s.context, probs);
  std::vector<Token> injected;
  for (std::size_t a = 0; a < probs.size(); ++a) {
    if (!(probs[a] > 0.0)) continue;
    Weighted next = cur;
    EpisodeState ns = s;
    next.contexts.push_back(s.context);
    next.masked.push_back(false);
    next.trajectory.tokens.push_back(static_cast<Token>(a));
    next.trajectory.behavior_logprobs.push_back(std::log(probs[a]));
    next.probability *= probs[a];
    injected.clear();
    env.advance(ns, static_cast<Token>(a), injected);
    for (Token x : injected) {
      next.contexts.push_back(ns.context);
      next.masked.push_back(true);
      next.trajectory.tokens.push_back(x);
      next.trajectory.behavior_logprobs.push_back(0.0);
    }
    dfs(env, policy, ns, next, out);
    if (out.size() > kMaxOutcomes) throw Error(ErrorCode::InstanceTooLarge, "too many trajectories");
  }
}

}  // namespace

std::vector<Weighted> enumerate_from(const Environment& env, const TokenPolicy& policy,
                                     const EpisodeState& state, const Weighted& prefix) {
  guard(env, state.budget);
  std::vector<Weighted> out;
  dfs(env, policy, state, prefix, out);
  return out;
}

std::vector<Weighted> enumerate_trajectories(const Environment& env, const TokenPolicy& policy,
                                             QuestionId q, const Budget& budget) {
  guard(env, budget);
  Weighted root;
  root.probability = 1.0;
  root.trajectory.question_id = q;
  auto out = enumerate_from(env, policy, env.begin(q, budget), root);
  for (auto& w : out) {
    w.trajectory.segments = {Segment{SegmentKind::Plain, 0, w.trajectory.tokens.size()}};
  }
  return out;
}

double expected_reward(const Environment& env, const Policy& policy, const Budget& budget) {
  double e = 0.0;
  for (std::size_t q = 0; q < env.question_count(); ++q) {
    for (const auto& w : enumerate_trajectories(env, policy, static_cast<QuestionId>(q), budget)) {
      e += w.probability * w.trajectory.reward;
    }
  }
  return e / static_cast<double>(env.question_count());
}

Gradient true_gradient(const Environment& env, const Policy& policy, const Budget& budget) {
  Gradient g;
  const double nq = static_cast<double>(env.question_count());
  for (std::size_t q = 0; q < env.question_count(); ++q) {
    for (const auto& w : enumerate_trajectories(env, policy, static_cast<QuestionId>(q), budget)) {
      const double coef = w.probability * w.trajectory.reward / nq;
      if (coef == 0.0) continue;
      for (std::size_t i = 0; i < w.trajectory.size(); ++i) {
        if (w.masked[i]) continue;
        g.add(policy.grad_logprob(w.contexts[i], w.trajectory.tokens[i]), coef);
      }
    }
  }
  return g;
}

double max_abs_diff(const Gradient& a, const Gradient& b) {
  double m = 0.0;
  auto scan = [&](const Gradient& x, const Gradient& y) {
    for (const auto& [c, row] : x.rows) {
      auto it = y.rows.find(c);
      for (std::size_t i = 0; i < row.size(); ++i) {
        const double other = it == y.rows.end() ? 0.0 : it->second[i];
        m = std::max(m, std::fabs(row[i] - other));
      }
    }
  };
  scan(a, b);
  scan(b, a);
  return m;
}

// ---------------------------------------------------------------------------
// Step enumeration

namespace {

struct Option {
  double probability = 0.0;
  std::optional<Weighted> probe;
};


struct Outcome {
  double probability = 0.0;
  std::vector<const Weighted*> on_policy;
  std::vector<std::pair<std::size_t, const Weighted*>> probes;  // (rollout index, probe)
};

class StepEnumerator {
 public:
  explicit StepEnumerator(const Instance& inst)
      : inst_(inst),
        env_(inst.chain),
        policy_(env_, inst.temperature),
        budget_(env_.budget()),
        pool_(inst.pool),
        pmf_(build_pmf(pool_)) {
    guard(env_, budget_);
    if (inst.group_size < 1) throw Error(ErrorCode::InvalidParams, "group size must be >= 1");
    if (!(inst.p >= 0.0 && inst.p <= 1.0)) throw Error(ErrorCode::InvalidParams, "p must be in [0, 1]");
    rollouts_ = enumerate_trajectories(env_, policy_, 0, budget_);
    for (const auto& r : rollouts_) options_.push_back(probe_options(r));
  }

  const ChainEnv& env() const { return env_; }
  const Policy& policy() const { return policy_; }
  const Budget& budget() const { return budget_; }
  const PmfModel& pmf() const { return pmf_; }
  const std::vector<Weighted>& rollouts() const { return rollouts_; }

  template <typename Visit>
  std::size_t each(Visit&& visit) const {
    const auto G = static_cast<std::size_t>(inst_.group_size);
    std::vector<std::size_t> pick(G, 0);
    std::size_t count = 0;
    while (true) {
      double p_roll = 1.0;
      for (std::size_t i = 0; i < G; ++i) p_roll *= rollouts_[pick[i]].probability;
      std::vector<std::size_t> opt(G, 0);
      while (true) {
        Outcome o;
        o.probability = p_roll;
        for (std::size_t i = 0; i < G; ++i) {
          const Option& op = options_[pick[i]][opt[i]];
          o.probability *= op.probability;
          o.on_policy.push_back(&rollouts_[pick[i]]);
          if (op.probe) o.probes.emplace_back(i, &*op.probe);
        }
        if (++count > kMaxOutcomes) throw Error(ErrorCode::InstanceTooLarge, "too many step outcomes");
        visit(o);
        std::size_t k = 0;
        while (k < G && ++opt[k] == options_[pick[k]].size()) opt[k++] = 0;
        if (k == G) break;
      }
      std::size_t k = 0;
      while (k < G && ++pick[k] == rollouts_.size()) pick[k++] = 0;
      if (k == G) break;
    }
    return count;
  }

 private:
  // Branches of the probe decision for one rollout, in the order probe_resample
  // makes them: coin, splice point, prompt, continuation.
  std::vector<Option> probe_options(const Weighted& r) const {
    std::vector<Option> out;
    const double q = inst_.p * (1.0 - r.trajectory.reward);
    if (q < 1.0) out.push_back({1.0 - q, std::nullopt});
    if (q <= 0.0) return out;
    const auto cut = env_.splice_point(0, r.trajectory.tokens, budget_);
    if (!cut) {
      out.push_back({q, std::nullopt});
      return out;
    }
    const auto head = static_cast<std::ptrdiff_t>(cut->index);
    const double pk = q / static_cast<double>(pool_.size());
    std::vector<double> probs(env_.action_count());
    std::vector<Token> injected;
    for (const auto& prompt : pool_.prompts()) {
      Weighted base;
      base.probability = 1.0;
      base.trajectory.source = Source::Probe;
      base.trajectory.tokens.assign(r.trajectory.tokens.begin(), r.trajectory.tokens.begin() + head);
      base.trajectory.behavior_logprobs.assign(r.trajectory.behavior_logprobs.begin(),
                                               r.trajectory.behavior_logprobs.begin() + head);
      base.contexts.assign(r.contexts.begin(), r.contexts.begin() + head);
      base.masked.assign(r.masked.begin(), r.masked.begin() + head);
      EpisodeState s = env_.begin(0, budget_);
      for (Token t : base.trajectory.tokens) env_.advance(s, t, injected);
      bool ok = !s.done;
      for (std::size_t j = 0; ok && j < prompt.size(); ++j) {
        policy_.distribution(s.context, probs);
        base.contexts.push_back(s.context);
        base.masked.push_back(false);
        base.trajectory.tokens.push_back(prompt[j]);
        base.trajectory.behavior_logprobs.push_back(std::log(probs[static_cast<std::size_t>(prompt[j])]));
        injected.clear();
        env_.advance(s, prompt[j], injected);
        if (!injected.empty() || s.done) ok = false;
      }
      if (!ok) {
        out.push_back({pk, std::nullopt});
        continue;
      }
      const std::size_t prompt_end = base.trajectory.tokens.size();
      for (auto& c : enumerate_from(env_, policy_, s, base)) {
        c.trajectory.segments = {Segment{SegmentKind::Origin, 0, cut->index},
                                 Segment{SegmentKind::Prompt, cut->index, prompt_end},
                                 Segment{SegmentKind::Probe, prompt_end, c.trajectory.tokens.size()}};
        const double pc = c.probability;
        out.push_back({pk * pc, std::move(c)});
      }
    }
    return out;
  }

  const Instance& inst_;
  ChainEnv env_;
  Policy policy_;
  Budget budget_;
  PromptPool pool_;
  PmfModel pmf_;
  std::vector<Weighted> rollouts_;
  std::vector<std::vector<Option>> options_;
};

CorrectionParams expectation_params(const Instance& inst) {
  CorrectionParams c = inst.correction;
  c.clip_eps = kNoClip;
  c.beta = 0.0;
  return c;
}

// ---- library route: the real filter, batch preparation and surrogate

std::vector<Group> library_groups(const StepEnumerator& e, const Instance& inst, const Outcome& o) {
  Group g;
  for (std::size_t i = 0; i < o.on_policy.size(); ++i) {
    Trajectory t = o.on_policy[i]->trajectory;
    t.rollout_index = static_cast<std::int32_t>(i);
    g.trajectories.push_back(std::move(t));
  }
  std::vector<Trajectory> probes;
  for (const auto& [i, w] : o.probes) {
    Trajectory t = w->trajectory;
    t.rollout_index = static_cast<std::int32_t>(i);
    probes.push_back(std::move(t));
  }
  for (auto& t : filter_trajectories(probes, e.policy(), e.budget(), inst.retention_alpha, o.on_policy.size())) {
    g.trajectories.push_back(std::move(t));
  }
  std::vector<Group> out;
  out.push_back(std::move(g));
  return out;
}

struct LibraryAccumulator {
  Gradient corrected;
  Gradient naive;
  void add(const StepEnumerator& e, const Instance& inst, const Outcome& o, bool with_corrected,
           bool with_naive) {
    if (o.probability == 0.0) return;
    const CorrectionParams params = expectation_params(inst);
    auto groups = library_groups(e, inst, o);
    const Batch batch = prepare_batch(groups, e.policy(), e.budget(), e.pmf(), params);
    if (with_corrected) {
      corrected.add(surrogate(batch, e.policy(), params, Estimator::Corrected).gradient, o.probability);
    }
    if (with_naive) naive.add(surrogate(batch, e.policy(), params, Estimator::Naive).gradient, o.probability);
  }
};

// ---- oracle route: the same sampling outcome, scored with independent formulas

using Site = std::pair<ContextState, Token>;

struct Member {
  const Weighted* w = nullptr;
  bool probe = false;
};

class OracleAccumulator {
 public:
  OracleAccumulator(const Instance& inst, const Policy& policy) : inst_(inst), policy_(policy) {}

  void add(const Outcome& o) {
    const std::size_t G = o.on_policy.size();
    std::vector<Member> members;
    for (const auto* w : o.on_policy) members.push_back({w, false});
    for (std::size_t i : kept(o)) members.push_back({o.probes[i].second, true});

    const double n = static_cast<double>(members.size());
    double mean = 0.0;
    for (const auto& m : members) mean += m.w->trajectory.reward;
    mean /= n;
    double var = 0.0;
    for (const auto& m : members) var += (m.w->trajectory.reward - mean) * (m.w->trajectory.reward - mean);
    const double sd = std::sqrt(var / n);

    std::size_t failed = 0;
    for (const auto* w : o.on_policy) failed += w->trajectory.reward == 0.0 ? 1 : 0;
    const double z = static_cast<double>(failed) / static_cast<double>(G);
    const double alpha = inst_.correction.alpha;

    for (const auto& m : members) {
      const Trajectory& t = m.w->trajectory;
      const double adv = sd < 1e-8 ? 0.0 : (t.reward - mean) / sd;
      std::size_t unmasked = 0;
      for (bool b : m.w->masked) unmasked += b ? 0 : 1;
      if (unmasked == 0) continue;
      const double coef = o.probability * adv / (n * static_cast<double>(unmasked));
      for (std::size_t i = 0; i < t.size(); ++i) {
        if (m.w->masked[i]) continue;
        const ContextState& c = m.w->contexts[i];
        const double p_old = prob(c, t.tokens[i]);
        const double eps = m.probe ? probe_eps(*m.w, i, z, p_old) : on_policy_eps(p_old);
        const double den = p_old + alpha * eps;
        const double omega = (1.0 + alpha) * p_old / den;
        if (coef != 0.0) {
          corrected_[{c, t.tokens[i]}] += coef * (1.0 + alpha) / den;
        }
        ClassDelta& d = delta_[static_cast<std::size_t>(t.kind_at(i))];
        const double diff = 1.0 - omega;
        d.mass += o.probability;
        d.mean += o.probability * diff;
        if (o.probability > 0.0) {
          d.min = d.seen ? std::min(d.min, diff) : diff;
          d.max = d.seen ? std::max(d.max, diff) : diff;
          d.seen = true;
        }
      }
    }
  }

  /// Central differences of sum W(c, a) pi_theta(a | c), one logit at a time.
  Gradient surrogate_gradient() const { return finite_difference(corrected_); }

  std::array<ClassDelta, kClassCount> delta() const {
    auto out = delta_;
    for (auto& d : out) {
      if (d.mass > 0.0) d.mean /= d.mass;
    }
    return out;
  }

 private:
  double prob(const ContextState& c, Token a) {
    auto it = cache_.find(c);
    if (it == cache_.end()) {
      std::vector<double> p(policy_.width());
      policy_.distribution(c, p);
      it = cache_.emplace(c, std::move(p)).first;
    }
    return it->second[static_cast<std::size_t>(a)];
  }

  double on_policy_eps(double p_old) const {
    return inst_.correction.on_policy_weight == OnPolicyWeight::Unit ? p_old : 0.0;
  }

  double probe_eps(const Weighted& w, std::size_t i, double z, double p_old) const {
    const Trajectory& t = w.trajectory;
    const Segment& origin = t.segments[0];
    const Segment& prompt = t.segments[1];
    if (i < origin.end) {
      std::size_t n = 0;
      for (std::size_t j = origin.start; j < origin.end; ++j) n += w.masked[j] ? 0 : 1;
      return p_old / std::pow(z, 1.0 / static_cast<double>(n));
    }
    if (i >= prompt.end) return p_old;
    const std::size_t j = i - prompt.start;
    const double k = static_cast<double>(inst_.pool.size());
    if (inst_.correction.ppd == Ppd::Coarse) return j == 0 ? 1.0 / k : 1.0;
    std::size_t extend = 0, match = 0;
    for (const auto& q : inst_.pool) {
      if (q.size() <= j) continue;
      if (!std::equal(q.begin(), q.begin() + static_cast<std::ptrdiff_t>(j),
                      t.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.start))) {
        continue;
      }
      ++extend;
      if (q[j] == t.tokens[i]) ++match;
    }
    return static_cast<double>(match) / static_cast<double>(j == 0 ? inst_.pool.size() : extend);
  }

  // Probes kept by the likelihood filter, as indices into o.probes.
  std::vector<std::size_t> kept(const Outcome& o) const {
    std::vector<std::size_t> idx(o.probes.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::size_t keep = idx.size();
    if (std::isfinite(inst_.retention_alpha)) {
      const double quota = std::ceil(inst_.retention_alpha * static_cast<double>(o.on_policy.size()) - 1e-9);
      keep = std::min(keep, static_cast<std::size_t>(std::max(0.0, quota)));
    }
    std::vector<double> score(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const Weighted& w = *o.probes[i].second;
      double s = 0.0;
      std::size_t n = 0;
      for (std::size_t j = 0; j < w.trajectory.size(); ++j) {
        if (w.masked[j]) continue;
        s += w.trajectory.behavior_logprobs[j];
        ++n;
      }
      score[i] = n ? s / static_cast<double>(n) : -std::numeric_limits<double>::infinity();
    }
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
      if (score[a] != score[b]) return score[a] > score[b];
      return o.probes[a].first < o.probes[b].first;
    });
    idx.resize(keep);
    std::sort(idx.begin(), idx.end());
    return idx;
  }

  Gradient finite_difference(const std::map<Site, double>& w) const {
    constexpr double h = 1e-5;
    std::map<ContextState, std::vector<double>> coef;
    for (const auto& [site, v] : w) {
      auto& row = coef[site.first];
      row.resize(policy_.width(), 0.0);
      row[static_cast<std::size_t>(site.second)] += v;
    }
    Policy probe = policy_;
    std::vector<double> p(policy_.width());
    Gradient g;
    for (const auto& [c, row] : coef) {
      auto& logits = probe.row(c);
      auto value = [&] {
        probe.distribution(c, p);
        double s = 0.0;
        for (std::size_t a = 0; a < p.size(); ++a) s += row[a] * p[a];
        return s;
      };
      auto& out = g.row(c, policy_.width());
      for (std::size_t i = 0; i < logits.size(); ++i) {
        const double x = logits[i];
        logits[i] = x + h;
        const double up = value();
        logits[i] = x - h;
        const double down = value();
        logits[i] = x;
        out[i] = (up - down) / (2.0 * h);
      }
    }
    return g;
  }

  const Instance& inst_;
  const Policy& policy_;
  std::map<ContextState, std::vector<double>> cache_;
  std::map<Site, double> corrected_;
  std::array<ClassDelta, kClassCount> delta_{};
};

}  // namespace

Gradient estimator_expectation(const Instance& inst, Estimator estimator) {
  const StepEnumerator e(inst);
  LibraryAccumulator acc;
  const bool corrected = estimator == Estimator::Corrected;
  e.each([&](const Outcome& o) { acc.add(e, inst, o, corrected, !corrected); });
  return corrected ? acc.corrected : acc.naive;
}

EnumerationReport bias_report(const Instance& inst) {
  const StepEnumerator e(inst);
  EnumerationReport r;
  r.name = inst.name;
  r.trajectory_count = e.rollouts().size();
  for (const auto& w : e.rollouts()) {
    r.rollout_probability += w.probability;
    r.expected_reward += w.probability * w.trajectory.reward;
  }
  r.true_gradient = true_gradient(e.env(), e.policy(), e.budget());

  LibraryAccumulator lib;
  OracleAccumulator own(inst, e.policy());
  r.outcome_count = e.each([&](const Outcome& o) {
    r.total_probability += o.probability;
    lib.add(e, inst, o, true, true);
    own.add(o);
  });
  r.surrogate_gradient = own.surrogate_gradient();
  r.corrected_expectation = std::move(lib.corrected);
  r.naive_expectation = std::move(lib.naive);
  r.delta = own.delta();
  r.corrected_error = max_abs_diff(r.corrected_expectation, r.surrogate_gradient);
  r.naive_gap = max_abs_diff(r.naive_expectation, r.corrected_expectation);
  r.corrected_vs_true = max_abs_diff(r.corrected_expectation, r.true_gradient);
  return r;
}

namespace {

constexpr double kProbabilityTolerance = 1e-9;
constexpr double kGradientTolerance = 1e-6;
constexpr double kSignTolerance = 1e-12;

}  // namespace

bool EnumerationReport::probability_ok() const {
  return std::fabs(total_probability - 1.0) <= kProbabilityTolerance &&
         std::fabs(rollout_probability - 1.0) <= kProbabilityTolerance;
}

bool EnumerationReport::corrected_ok() const { return corrected_error <= kGradientTolerance; }

bool EnumerationReport::free_tokens_nonpositive() const {
  for (SegmentKind k : {SegmentKind::Plain, SegmentKind::Probe}) {
    const ClassDelta& d = delta[static_cast<std::size_t>(k)];
    if (d.seen && d.mean > kSignTolerance) return false;
  }
  return true;
}

bool EnumerationReport::prompt_tokens_nonnegative() const {
  const ClassDelta& d = delta[static_cast<std::size_t>(SegmentKind::Prompt)];
  return !d.seen || d.mean >= -kSignTolerance;
}

bool EnumerationReport::certified() const {
  return probability_ok() && corrected_ok() && free_tokens_nonpositive() && prompt_tokens_nonnegative();
}

// ---------------------------------------------------------------------------
// Instances

std::vector<Instance> shipped_instances() {
  std::vector<Instance> out;
  {
    Instance i;
    i.name = "marker-v3-h3";
    i.chain = {3, 3, 2, ChainReward::AnswerEquals, 1, 1.5, 3, 1};
    i.group_size = 2;
    i.p = 0.5;
    i.correction.alpha = 0.5;
    i.retention_alpha = 0.5;
    i.pool = {{0}, {1, 0}};
    out.push_back(i);
  }
  {
    Instance i;
    i.name = "marker-v2-g3";
    i.chain = {2, 3, 1, ChainReward::AnswerEquals, 0, 0.8, 5, 2};
    i.group_size = 3;
    i.p = 0.2;
    i.correction.alpha = 0.12;
    i.retention_alpha = 0.12;
    i.pool = {{0}, {0, 0}, {1}};
    out.push_back(i);
  }
  {
    Instance i;
    i.name = "marker-v3-coarse-keep-all";
    i.chain = {3, 3, 2, ChainReward::AnswerEquals, 0, 1.0, 9, 1};
    i.group_size = 2;
    i.p = 0.7;
    i.correction.alpha = 0.3;
    i.correction.ppd = Ppd::Coarse;
    i.retention_alpha = std::numeric_limits<double>::infinity();
    i.pool = {{0}, {1}, {0, 1}};
    out.push_back(i);
  }
  {
    Instance i;
    i.name = "no-failures";
    i.chain = {3, 2, -1, ChainReward::Always, 0, 1.0, 4, 1};
    i.group_size = 2;
    i.p = 0.5;
    i.correction.alpha = 0.5;
    i.correction.on_policy_weight = OnPolicyWeight::Unit;
    i.retention_alpha = 0.5;
    i.pool = {{0}};
    out.push_back(i);
  }
  return out;
}

namespace {

std::string_view strip(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

double number(std::string_view key, std::string_view v) {
  std::string s(v);
  std::size_t used = 0;
  double x = 0.0;
  try {
    x = std::stod(s, &used);
  } catch (const std::exception&) {
    used = std::string::npos;
  }
  if (s.empty() || used != s.size()) {
    throw Error(ErrorCode::ConfigError, "invalid value '" + s + "' for key '" + std::string(key) + "'");
  }
  return x;
}

int integer(std::string_view key, std::string_view v) {
  const double x = number(key, v);
  if (x != std::floor(x)) throw Error(ErrorCode::ConfigError, "key '" + std::string(key) + "' needs an integer");
  return static_cast<int>(x);
}

ChainReward parse_rule(std::string_view v) {
  if (v == "answer-equals") return ChainReward::AnswerEquals;
  if (v == "last-equals") return ChainReward::LastEquals;
  if (v == "always") return ChainReward::Always;
  if (v == "never") return ChainReward::Never;
  throw Error(ErrorCode::ConfigError, "unknown chain.rule '" + std::string(v) + "'");
}

std::vector<std::vector<Token>> parse_prompts(std::string_view v) {
  std::vector<std::vector<Token>> out;
  std::string s(v);
  std::stringstream all(s);
  std::string item;
  while (std::getline(all, item, ';')) {
    std::stringstream one(item);
    std::vector<Token> prompt;
    std::string tok;
    while (one >> tok) prompt.push_back(static_cast<Token>(integer("pool", tok)));
    if (prompt.empty()) throw Error(ErrorCode::ConfigError, "pool contains an empty prompt");
    out.push_back(std::move(prompt));
  }
  return out;
}

}  // namespace

Instance parse_instance(std::istream& in) {
  Instance inst;
  inst.name = "custom";
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string_view v = strip(line);
    if (v.empty() || v.front() == '#') continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    const std::string_view key = strip(v.substr(0, eq));
    const std::string_view val = strip(v.substr(eq + 1));
    if (key == "name") inst.name = std::string(val);
    else if (key == "chain.vocab") inst.chain.vocab = integer(key, val);
    else if (key == "chain.horizon") inst.chain.horizon = integer(key, val);
    else if (key == "chain.answer_marker") inst.chain.answer_marker = integer(key, val);
    else if (key == "chain.rule") inst.chain.rule = parse_rule(val);
    else if (key == "chain.target") inst.chain.target = static_cast<Token>(integer(key, val));
    else if (key == "chain.prior_scale") inst.chain.prior_scale = number(key, val);
    else if (key == "chain.prior_seed") inst.chain.prior_seed = static_cast<std::uint64_t>(integer(key, val));
    else if (key == "chain.context_order") inst.chain.context_order = integer(key, val);
    else if (key == "group_size") inst.group_size = integer(key, val);
    else if (key == "p") inst.p = number(key, val);
    else if (key == "temperature") inst.temperature = number(key, val);
    else if (key == "alpha") inst.correction.alpha = number(key, val);
    else if (key == "retention_alpha") inst.retention_alpha = number(key, val);
    else if (key == "correction.on_policy_weight") {
      if (val == "balance") inst.correction.on_policy_weight = OnPolicyWeight::Balance;
      else if (val == "unit") inst.correction.on_policy_weight = OnPolicyWeight::Unit;
      else throw Error(ErrorCode::ConfigError, "invalid correction.on_policy_weight");
    } else if (key == "correction.ppd") {
      if (val == "precise") inst.correction.ppd = Ppd::Precise;
      else if (val == "coarse") inst.correction.ppd = Ppd::Coarse;
      else throw Error(ErrorCode::ConfigError, "invalid correction.ppd");
    } else if (key == "pool") inst.pool = parse_prompts(val);
    else throw Error(ErrorCode::ConfigError, "unknown instance key '" + std::string(key) + "'");
  }
  if (inst.pool.empty()) throw Error(ErrorCode::ConfigError, "instance needs a pool");
  if (inst.group_size < 1) throw Error(ErrorCode::ConfigError, "group_size must be >= 1");
  if (!(inst.p >= 0.0 && inst.p <= 1.0)) throw Error(ErrorCode::ConfigError, "p must be in [0, 1]");
  if (!(inst.correction.alpha >= 0.0)) throw Error(ErrorCode::ConfigError, "alpha must be >= 0");
  if (!(inst.retention_alpha >= 0.0)) throw Error(ErrorCode::ConfigError, "retention_alpha must be >= 0");
  return inst;
}

Instance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open instance '" + path + "'");
  return parse_instance(in);
}

// ---------------------------------------------------------------------------
// Reporting

namespace {

using nlohmann::ordered_json;

ordered_json gradient_json(const Gradient& g) {
  ordered_json arr = ordered_json::array();
  for (const auto& [c, row] : g.rows) arr.push_back({{"context", format_context(c)}, {"values", row}});
  return arr;
}

ordered_json to_json(const EnumerationReport& r) {
  ordered_json j;
  j["name"] = r.name;
  j["trajectory_count"] = r.trajectory_count;
  j["outcome_count"] = r.outcome_count;
  j["total_probability"] = r.total_probability;
  j["rollout_probability"] = r.rollout_probability;
  j["expected_reward"] = r.expected_reward;
  j["true_gradient"] = gradient_json(r.true_gradient);
  j["surrogate_gradient"] = gradient_json(r.surrogate_gradient);
  j["corrected_expectation"] = gradient_json(r.corrected_expectation);
  j["naive_expectation"] = gradient_json(r.naive_expectation);
  ordered_json d;
  for (std::size_t k = 0; k < kClassCount; ++k) {
    const ClassDelta& c = r.delta[k];
    d[std::string(to_string(static_cast<SegmentKind>(k)))] = {
        {"seen", c.seen}, {"mass", c.mass}, {"mean", c.mean}, {"min", c.min}, {"max", c.max}};
  }
  j["delta"] = d;
  j["corrected_error"] = r.corrected_error;
  j["naive_gap"] = r.naive_gap;
  j["corrected_vs_true"] = r.corrected_vs_true;
  j["checks"] = {{"probability", r.probability_ok()},
                 {"corrected", r.corrected_ok()},
                 {"free_tokens_nonpositive", r.free_tokens_nonpositive()},
                 {"prompt_tokens_nonnegative", r.prompt_tokens_nonnegative()},
                 {"certified", r.certified()}};
  return j;
}

double distance(const ordered_json& a, const nlohmann::json& b) {
  constexpr double inf = std::numeric_limits<double>::infinity();
  if (a.is_number() && b.is_number()) return std::fabs(a.get<double>() - b.get<double>());
  if (a.type() != b.type()) return inf;
  if (a.is_array()) {
    if (a.size() != b.size()) return inf;
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, distance(a[i], b[i]));
    return m;
  }
  if (a.is_object()) {
    if (a.size() != b.size()) return inf;
    double m = 0.0;
    for (const auto& [k, v] : a.items()) {
      if (!b.contains(k)) return inf;
      m = std::max(m, distance(v, b.at(k)));
    }
    return m;
  }
  return a.dump() == b.dump() ? 0.0 : inf;
}

}  // namespace

std::string report_json(const EnumerationReport& r) { return to_json(r).dump(2); }

double report_distance(const EnumerationReport& a, const std::string& golden_json) {
  nlohmann::json golden;
  try {
    golden = nlohmann::json::parse(golden_json);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("golden report: ") + e.what());
  }
  return distance(to_json(a), golden);
}

void print_report(std::ostream& out, const EnumerationReport& r) {
  const auto flags = out.flags();
  out << "instance " << r.name << ": " << r.trajectory_count << " trajectories, " << r.outcome_count
      << " step outcomes\n";
  out << std::setprecision(12);
  out << "  total probability      " << r.total_probability << '\n';
  out << "  expected reward        " << r.expected_reward << '\n';
  out << std::scientific << std::setprecision(3);
  out << "  |corrected - surrogate| " << r.corrected_error << '\n';
  out << "  |naive - corrected|     " << r.naive_gap << '\n';
  out << "  |corrected - true|      " << r.corrected_vs_true << "  (informational)\n";
  out << "  class    seen   mass         mean delta   min          max\n";
  for (std::size_t k = 0; k < kClassCount; ++k) {
    const ClassDelta& d = r.delta[k];
    out << "  " << std::left << std::setw(8) << to_string(static_cast<SegmentKind>(k)) << std::right
        << std::setw(5) << (d.seen ? "yes" : "no") << "  " << std::setw(11) << d.mass << "  "
        << std::setw(11) << d.mean << "  " << std::setw(11) << d.min << "  " << std::setw(11) << d.max
        << '\n';
  }
  auto mark = [](bool ok) { return ok ? "PASS" : "FAIL"; };
  out << "  probability " << mark(r.probability_ok()) << ", corrected " << mark(r.corrected_ok())
      << ", free tokens " << mark(r.free_tokens_nonpositive()) << ", prompt tokens "
      << mark(r.prompt_tokens_nonnegative()) << '\n';
  out.flags(flags);
}

}  // namespace rexsim::oracle
