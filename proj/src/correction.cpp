#include "rexsim/correction.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "rexsim/kernels.hpp"

namespace rexsim {

double importance_ratio(double p_theta, double p_eps, double alpha) {
  if (!(p_theta > 0.0)) throw Error(ErrorCode::DegenerateDensity, "p_theta must be > 0");
  if (!(p_eps >= 0.0) || !(alpha >= 0.0)) {
    throw Error(ErrorCode::InvalidParams, "p_eps and alpha must be >= 0");
  }
  // Dividing through by p_theta keeps the identities exact: equal densities
  // give 1 and p_eps = 0 gives 1 + alpha.
  return (1.0 + alpha) / (1.0 + alpha * (p_eps / p_theta));
}

std::pair<double, double> mixing_coefficients(double alpha) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::InvalidParams, "alpha must be >= 0");
  return {1.0 / (1.0 + alpha), alpha / (1.0 + alpha)};
}

std::vector<double> normalize_advantages(std::span<const double> rewards) {
  if (rewards.empty()) throw Error(ErrorCode::InvalidParams, "advantages need a non-empty group");
  const double n = static_cast<double>(rewards.size());
  const double mean = std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  const double sd = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sd < 1e-8) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / sd;
  return out;
}

double kl_estimate(double p_theta, double p_ref) {
  if (!(p_theta > 0.0) || !(p_ref > 0.0)) {
    throw Error(ErrorCode::DegenerateDensity, "KL estimate needs positive probabilities");
  }
  const double r = p_ref / p_theta;
  const double k = r - std::log(r) - 1.0;
  return k < 0.0 ? 0.0 : k;
}

namespace {

// pi_eps per token given the per-token target probabilities `p` and the
// replayed mask.
std::vector<double> density(const Trajectory& t, std::span<const double> p,
                            const std::vector<bool>& masked, const PmfModel& pmf, double z,
                            Ppd ppd) {
  if (t.source != Source::Probe) throw Error(ErrorCode::InvalidParams, "probe density needs a probe trajectory");
  if (!(z > 0.0)) throw Error(ErrorCode::ZeroFailureRate, "probe trajectories require z > 0");
  if (z > 1.0) throw Error(ErrorCode::InvalidParams, "z must be <= 1");
  std::vector<double> out(t.size(), 0.0);
  for (const Segment& s : t.segments) {
    switch (s.kind) {
      case SegmentKind::Origin: {
        std::size_t n = 0;
        for (std::size_t i = s.start; i < s.end; ++i) n += masked[i] ? 0 : 1;
        const double scale = n ? std::pow(z, 1.0 / static_cast<double>(n)) : 1.0;
        for (std::size_t i = s.start; i < s.end; ++i) {
          if (!masked[i]) out[i] = p[i] / scale;
        }
        break;
      }
      case SegmentKind::Prompt:
        for (std::size_t i = s.start; i < s.end; ++i) {
          if (masked[i]) continue;
          if (ppd == Ppd::Coarse) {
            out[i] = i == s.start ? 1.0 / static_cast<double>(pmf.pool_size()) : 1.0;
          } else if (i == s.start) {
            out[i] = pmf.first_token_mass(t.tokens[i]);
          } else {
            out[i] = pmf.pmf(std::span<const Token>(t.tokens).subspan(s.start, i - s.start), t.tokens[i]);
          }
        }
        break;
      case SegmentKind::Probe:
      case SegmentKind::Plain:
        for (std::size_t i = s.start; i < s.end; ++i) {
          if (!masked[i]) out[i] = p[i];
        }
        break;
    }
  }
  return out;
}

}  // namespace

std::vector<double> probe_density(const Trajectory& t, const Policy& policy, const Budget& budget,
                                  const PmfModel& pmf, double z, Ppd ppd) {
  std::vector<bool> masked;
  std::vector<double> lp = logprob_trajectory(policy, t, budget, &masked);
  for (auto& x : lp) x = std::exp(x);
  return density(t, lp, masked, pmf, z, ppd);
}

double mean_logprob(const Policy& policy, const Trajectory& t, const Budget& budget) {
  std::vector<bool> masked;
  const auto lp = logprob_trajectory(policy, t, budget, &masked);
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    if (masked[i]) continue;
    sum += lp[i];
    ++n;
  }
  return n ? sum / static_cast<double>(n) : -std::numeric_limits<double>::infinity();
}

std::vector<Trajectory> filter_trajectories(const std::vector<Trajectory>& probes,
                                            const Policy& policy, const Budget& budget,
                                            double alpha, std::size_t on_policy_count) {
  if (!(alpha >= 0.0)) throw Error(ErrorCode::InvalidParams, "alpha must be >= 0");
  std::size_t keep = probes.size();
  if (std::isfinite(alpha)) {
    // The small slack keeps products like 0.12 * 50 from rounding up past 6.
    const double quota = std::ceil(alpha * static_cast<double>(on_policy_count) - 1e-9);
    keep = std::min(keep, static_cast<std::size_t>(std::max(0.0, quota)));
  }
  if (keep >= probes.size()) return probes;

  struct Scored {
    double score;
    std::size_t index;
  };
  std::vector<Scored> scored;
  for (std::size_t i = 0; i < probes.size(); ++i) scored.push_back({mean_logprob(policy, probes[i], budget), i});
  std::sort(scored.begin(), scored.end(), [&](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    const auto& ta = probes[a.index];
    const auto& tb = probes[b.index];
    if (ta.question_id != tb.question_id) return ta.question_id < tb.question_id;
    if (ta.rollout_index != tb.rollout_index) return ta.rollout_index < tb.rollout_index;
    return a.index < b.index;
  });
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < keep; ++i) kept.push_back(scored[i].index);
  std::sort(kept.begin(), kept.end());
  std::vector<Trajectory> out;
  for (std::size_t i : kept) out.push_back(probes[i]);
  return out;
}

Batch prepare_batch(std::vector<Group>& groups, const Policy& behavior, const Budget& budget,
                    const PmfModel& pmf, const CorrectionParams& params) {
  Batch batch;
  for (Group& g : groups) {
    std::vector<double> rewards;
    for (const auto& t : g.trajectories) rewards.push_back(t.reward);
    g.advantages = normalize_advantages(rewards);
    PreparedGroup pg;
    pg.question_id = g.question_id;
    pg.z = compute_z(g);
    for (std::size_t k = 0; k < g.trajectories.size(); ++k) {
      const Trajectory& t = g.trajectories[k];
      const Replay r = replay(behavior.env(), t.question_id, t.tokens, budget);
      std::vector<bool> masked(t.size());
      std::vector<double> p_old(t.size());
      for (std::size_t i = 0; i < t.size(); ++i) {
        masked[i] = r.steps[i].injected;
        p_old[i] = std::exp(t.behavior_logprobs[i]);
      }
      std::vector<double> eps;
      if (t.source == Source::Probe) {
        eps = density(t, p_old, masked, pmf, pg.z, params.ppd);
      } else if (params.on_policy_weight == OnPolicyWeight::Unit) {
        eps = p_old;
      } else {
        eps.assign(t.size(), 0.0);
      }
      PreparedTrajectory pt;
      pt.advantage = g.advantages[k];
      pt.reward = t.reward;
      pt.source = t.source;
      for (std::size_t i = 0; i < t.size(); ++i) {
        PreparedToken tok;
        tok.context = r.steps[i].context;
        tok.token = t.tokens[i];
        tok.kind = t.kind_at(i);
        tok.p_old = p_old[i];
        tok.p_eps = masked[i] ? 0.0 : eps[i];
        tok.masked = masked[i];
        pt.unmasked += masked[i] ? 0 : 1;
        pt.tokens.push_back(tok);
      }
      pg.trajectories.push_back(std::move(pt));
    }
    batch.groups.push_back(std::move(pg));
  }
  return batch;
}

namespace {

class ProbCache {
 public:
  explicit ProbCache(const Policy& p) : policy_(p) {}
  const std::vector<double>& operator()(const ContextState& c) {
    auto [it, fresh] = cache_.try_emplace(c);
    if (fresh) {
      it->second.resize(policy_.width());
      policy_.distribution(c, it->second);
    }
    return it->second;
  }

 private:
  const Policy& policy_;
  std::map<ContextState, std::vector<double>> cache_;
};

double weight(const PreparedToken& tok, double p, const CorrectionParams& params, Estimator est) {
  if (est == Estimator::Naive) return p / tok.p_old;
  return (1.0 + params.alpha) * p / (tok.p_old + params.alpha * tok.p_eps);
}

void check_params(const CorrectionParams& params) {
  if (!(params.alpha >= 0.0) || std::isinf(params.alpha)) {
    throw Error(ErrorCode::InvalidParams, "alpha must be finite and >= 0");
  }
  if (!(params.clip_eps > 0.0)) throw Error(ErrorCode::InvalidParams, "clip_eps must be > 0");
  if (!(params.beta >= 0.0)) throw Error(ErrorCode::InvalidParams, "beta must be >= 0");
}

}  // namespace

ImportanceRecord importance_record(const PreparedTrajectory& t, const Policy& policy,
                                   const CorrectionParams& params) {
  check_params(params);
  ImportanceRecord rec;
  ProbCache probs(policy);
  for (const auto& tok : t.tokens) {
    rec.masked.push_back(tok.masked);
    if (tok.masked) {
      rec.p_theta.push_back(1.0);
      rec.p_eps.push_back(0.0);
      rec.omega.push_back(0.0);
      continue;
    }
    const double p = probs(tok.context)[static_cast<std::size_t>(tok.token)];
    rec.p_theta.push_back(p);
    rec.p_eps.push_back(tok.p_eps);
    rec.omega.push_back(weight(tok, p, params, Estimator::Corrected));
  }
  return rec;
}

Objective surrogate(const Batch& batch, const Policy& policy, const CorrectionParams& params,
                    Estimator estimator) {
  check_params(params);
  const Policy ref = policy.reference();
  ProbCache probs(policy);
  ProbCache ref_probs(ref);
  std::map<ContextState, std::map<Token, double>> coef;

  std::size_t n_groups = 0, n_kl = 0;
  for (const auto& g : batch.groups) {
    if (!g.trajectories.empty()) ++n_groups;
    for (const auto& t : g.trajectories) {
      if (t.source == Source::OnPolicy) n_kl += t.unmasked;
    }
  }

  Objective out;
  const double lo = 1.0 - params.clip_eps;
  const double hi = 1.0 + params.clip_eps;
  double policy_term = 0.0, kl_sum = 0.0, omega_sum = 0.0;
  std::size_t clipped = 0;
  for (const auto& g : batch.groups) {
    const double n_traj = static_cast<double>(g.trajectories.size());
    for (const auto& t : g.trajectories) {
      if (t.unmasked == 0) continue;
      const double scale = 1.0 / (static_cast<double>(n_groups) * n_traj * static_cast<double>(t.unmasked));
      const double A = t.advantage;
      for (const auto& tok : t.tokens) {
        if (tok.masked) continue;
        const double p = probs(tok.context)[static_cast<std::size_t>(tok.token)];
        const double w = weight(tok, p, params, estimator);
        const double wc = std::clamp(w, lo, hi);
        const double plain = w * A;
        const double capped = wc * A;
        omega_sum += w;
        out.diagnostics.max_omega = std::max(out.diagnostics.max_omega, w);
        ++out.diagnostics.tokens;
        if (plain <= capped) {
          policy_term += scale * plain;
          if (A != 0.0) coef[tok.context][tok.token] += scale * A * w;
        } else {
          policy_term += scale * capped;
          ++clipped;
        }
        if (t.source == Source::OnPolicy) {
          const double r = ref_probs(tok.context)[static_cast<std::size_t>(tok.token)] / p;
          kl_sum += r - std::log(r) - 1.0;
          if (params.beta > 0.0) {
            coef[tok.context][tok.token] -= params.beta / static_cast<double>(n_kl) * (1.0 - r);
          }
        }
      }
    }
  }
  out.value = policy_term - (n_kl ? params.beta * kl_sum / static_cast<double>(n_kl) : 0.0);
  if (!std::isfinite(out.value)) throw Error(ErrorCode::NonFiniteObjective, "surrogate objective is not finite");
  if (out.diagnostics.tokens) {
    out.diagnostics.mean_omega = omega_sum / static_cast<double>(out.diagnostics.tokens);
    out.diagnostics.clip_frac = static_cast<double>(clipped) / static_cast<double>(out.diagnostics.tokens);
  }
  out.diagnostics.kl = n_kl ? kl_sum / static_cast<double>(n_kl) : 0.0;

  const double inv_t = 1.0 / policy.temperature();
  for (const auto& [c, actions] : coef) {
    const auto& p = probs(c);
    auto& row = out.gradient.row(c, policy.width());
    for (const auto& [a, k] : actions) kernels::score_axpy(row, p, k * inv_t, static_cast<std::size_t>(a));
  }
  return out;
}

Objective grpo_objective(const Batch& batch, const Policy& policy, const CorrectionParams& params) {
  return surrogate(batch, policy, params, Estimator::Corrected);
}

Objective naive_objective(const Batch& batch, const Policy& policy, const CorrectionParams& params) {
  return surrogate(batch, policy, params, Estimator::Naive);
}

}  // namespace rexsim
