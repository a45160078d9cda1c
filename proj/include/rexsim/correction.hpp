#pragma once

// Policy correction: probe-policy density, likelihood filtering of probes,
// balance-heuristic importance weights, group advantages, the k3 KL estimator
// and the clipped group surrogate with its analytic gradient.

#include <limits>
#include <span>
#include <utility>
#include <vector>

#include "rexsim/policy.hpp"
#include "rexsim/sampling.hpp"

namespace rexsim {

/// Density assigned to trajectories without probe provenance. Balance gives
/// them pi_eps = 0 (weight 1 + alpha at the snapshot); Unit gives them weight
/// 1 at the snapshot.
enum class OnPolicyWeight { Balance, Unit };
/// Precise uses the pool prefix model for prompt tokens; Coarse assigns the
/// first prompt token 1/k and the rest 1.
enum class Ppd { Precise, Coarse };

struct CorrectionParams {
  double alpha = 0.12;
  double clip_eps = 0.2;  // +inf disables clipping
  double beta = 0.001;
  OnPolicyWeight on_policy_weight = OnPolicyWeight::Balance;
  Ppd ppd = Ppd::Precise;
};

/// (1 + alpha) p_theta / (p_theta + alpha p_eps). Throws DegenerateDensity.
double importance_ratio(double p_theta, double p_eps, double alpha);
/// (1 / (1 + alpha), alpha / (1 + alpha)).
std::pair<double, double> mixing_coefficients(double alpha);
/// (r - mean) / population std; all zeros when the std is below 1e-8.
std::vector<double> normalize_advantages(std::span<const double> rewards);
/// r - ln r - 1 with r = p_ref / p_theta. Throws DegenerateDensity.
double kl_estimate(double p_theta, double p_ref);

/// pi_eps for every token of a probe trajectory under `policy`; masked tokens
/// get 0. Throws ZeroFailureRate when z = 0 and InvalidParams for on-policy
/// input.
std::vector<double> probe_density(const Trajectory& t, const Policy& policy, const Budget& budget,
                                  const PmfModel& pmf, double z, Ppd ppd = Ppd::Precise);

/// Mean log-probability of the unmasked tokens; -inf when there are none.
double mean_logprob(const Policy& policy, const Trajectory& t, const Budget& budget);

/// Keeps the ceil(alpha * on_policy_count) probes with the highest mean
/// log-probability (ties: lower question id, then lower rollout index), in
/// their original order. alpha = +inf keeps everything.
std::vector<Trajectory> filter_trajectories(const std::vector<Trajectory>& probes,
                                            const Policy& policy, const Budget& budget,
                                            double alpha, std::size_t on_policy_count);

// ---------------------------------------------------------------------------
// Prepared batch: everything the surrogate needs that does not depend on the
// parameters being optimized.

struct ImportanceRecord {
  std::vector<double> p_theta;
  std::vector<double> p_eps;
  std::vector<double> omega;
  std::vector<bool> masked;
};

struct PreparedToken {
  ContextState context;
  Token token = 0;
  SegmentKind kind = SegmentKind::Plain;
  double p_old = 1.0;  // behavior probability
  double p_eps = 0.0;
  bool masked = false;  // injected; excluded from the loss
};

struct PreparedTrajectory {
  std::vector<PreparedToken> tokens;
  std::size_t unmasked = 0;
  double advantage = 0.0;
  double reward = 0.0;
  Source source = Source::OnPolicy;
};

struct PreparedGroup {
  QuestionId question_id = 0;
  double z = 0.0;
  std::vector<PreparedTrajectory> trajectories;
};

struct Batch {
  std::vector<PreparedGroup> groups;
};

/// Fills group advantages and the per-token densities using the behavior
/// (snapshot) policy.
Batch prepare_batch(std::vector<Group>& groups, const Policy& behavior, const Budget& budget,
                    const PmfModel& pmf, const CorrectionParams& params);

/// Token-level weights of one trajectory under `policy`.
ImportanceRecord importance_record(const PreparedTrajectory& t, const Policy& policy,
                                   const CorrectionParams& params);

struct Diagnostics {
  double mean_omega = 0.0;
  double max_omega = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
  std::size_t tokens = 0;
};

struct Objective {
  double value = 0.0;
  Gradient gradient;
  Diagnostics diagnostics;
};

enum class Estimator { Corrected, Naive };

/// Mean over groups of the mean over trajectories of the token-mean clipped
/// surrogate, minus beta times the mean per-token KL over on-policy tokens.
/// Throws NonFiniteObjective.
Objective grpo_objective(const Batch& batch, const Policy& policy, const CorrectionParams& params);
/// Same surrogate with pi_theta / pi_old in place of omega on every token.
Objective naive_objective(const Batch& batch, const Policy& policy, const CorrectionParams& params);
Objective surrogate(const Batch& batch, const Policy& policy, const CorrectionParams& params,
                    Estimator estimator);

inline constexpr double kNoClip = std::numeric_limits<double>::infinity();

}  // namespace rexsim
