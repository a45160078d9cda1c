#pragma once

// Exhaustive oracle for tiny single-question instances. Every trajectory and
// every sampling outcome of one training step (G rollouts, probe decisions,
// prompt choices, continuations, filtering) is enumerated with its exact
// probability. The oracle re-derives advantages, probe densities and weights
// with its own formulas, so agreement with the correction module is a real
// cross-check.

#include <array>
#include <iosfwd>
#include <string>
#include <vector>

#include "rexsim/correction.hpp"
#include "rexsim/env.hpp"
#include "rexsim/policy.hpp"
#include "rexsim/sampling.hpp"

namespace rexsim::oracle {

inline constexpr std::size_t kMaxActions = 8;
inline constexpr int kMaxLength = 8;

struct Weighted {
  Trajectory trajectory;
  std::vector<ContextState> contexts;  // per token
  std::vector<bool> masked;
  double probability = 0.0;
};

/// Every complete episode reachable under `policy`. Throws InstanceTooLarge
/// beyond 8 actions or 8 tokens.
std::vector<Weighted> enumerate_trajectories(const Environment& env, const TokenPolicy& policy,
                                             QuestionId q, const Budget& budget);

/// Every continuation from `state`, appended to a copy of `prefix`.
std::vector<Weighted> enumerate_from(const Environment& env, const TokenPolicy& policy,
                                     const EpisodeState& state, const Weighted& prefix);

double expected_reward(const Environment& env, const Policy& policy, const Budget& budget);
/// Exact gradient of the expected reward via the score-function identity.
Gradient true_gradient(const Environment& env, const Policy& policy, const Budget& budget);

struct Instance {
  std::string name;
  ChainParams chain;
  int group_size = 2;
  double p = 0.5;
  double temperature = 1.0;
  CorrectionParams correction;
  double retention_alpha = 0.5;
  std::vector<std::vector<Token>> pool;
};

/// Instances shipped with the repository and certified by the tests.
std::vector<Instance> shipped_instances();
/// Flat key = value instance description (see configs/oracle_tiny.cfg).
Instance load_instance(const std::string& path);
Instance parse_instance(std::istream& in);

inline constexpr std::size_t kClassCount = 4;  // indexed by SegmentKind

struct ClassDelta {
  double mass = 0.0;  // expected token count
  double mean = 0.0;  // probability-weighted mean of naive minus corrected weight
  double min = 0.0;
  double max = 0.0;
  bool seen = false;
};

struct EnumerationReport {
  std::string name;
  std::size_t trajectory_count = 0;
  std::size_t outcome_count = 0;
  double total_probability = 0.0;
  double rollout_probability = 0.0;
  double expected_reward = 0.0;
  Gradient true_gradient;
  /// Finite-difference gradient of the oracle's own expected clip-free,
  /// KL-free corrected surrogate at the snapshot.
  Gradient surrogate_gradient;
  Gradient corrected_expectation;
  Gradient naive_expectation;
  std::array<ClassDelta, kClassCount> delta{};
  double corrected_error = 0.0;    // max |corrected - surrogate|
  double naive_gap = 0.0;          // max |naive - corrected|
  double corrected_vs_true = 0.0;  // max |corrected - true gradient|, informational

  bool probability_ok() const;
  /// Sign checks use the class means; single prompt tokens can go either way
  /// when the pool makes them likelier than the policy does.
  bool corrected_ok() const;
  bool free_tokens_nonpositive() const;
  bool prompt_tokens_nonnegative() const;
  bool certified() const;
};

/// Exact expectation of the pipeline's surrogate gradient at the snapshot
/// policy (clip and KL disabled) for the chosen estimator.
Gradient estimator_expectation(const Instance& inst, Estimator estimator);

EnumerationReport bias_report(const Instance& inst);

std::string report_json(const EnumerationReport& r);
/// Max absolute difference of every numeric field; +inf on a structural mismatch.
double report_distance(const EnumerationReport& a, const std::string& golden_json);
void print_report(std::ostream& out, const EnumerationReport& r);

/// Max absolute coordinate difference, treating absent rows as zero.
double max_abs_diff(const Gradient& a, const Gradient& b);

}  // namespace rexsim::oracle
