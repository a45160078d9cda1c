#pragma once

// Tabular softmax policy over an environment's actions, keyed by ContextState.
// Rows that were never updated are computed on demand from the environment's
// pretrained logits, so the table only stores what training has touched.

#include <iosfwd>
#include <map>
#include <span>
#include <vector>

#include "rexsim/env.hpp"

namespace rexsim {

/// Softmax of logits / temperature. Entries are strictly positive and sum to
/// one up to rounding.
void action_dist(std::span<const double> logits, double temperature, std::span<double> probs);

/// Sparse gradient over logit rows.
struct Gradient {
  std::map<ContextState, std::vector<double>> rows;

  std::vector<double>& row(const ContextState& c, std::size_t width);
  void add(const Gradient& other, double scale = 1.0);
  double dot(const Gradient& other) const;
  bool empty() const noexcept { return rows.empty(); }
};

class Policy final : public TokenPolicy {
 public:
  Policy(const Environment& env, double temperature = 1.0);

  void logits(const ContextState& c, std::span<double> out) const;
  void distribution(const ContextState& c, std::span<double> probs) const override;
  double logprob(const ContextState& c, Token a) const;
  double entropy(const ContextState& c) const;
  /// d log pi(a | c) / d logits(c, .) = onehot(a) - pi(. | c), with the
  /// temperature factor applied.
  Gradient grad_logprob(const ContextState& c, Token a) const;

  /// Materializes the row and returns it for direct edits (tests, oracle
  /// perturbations).
  std::vector<double>& row(const ContextState& c);
  /// Gradient ascent with decoupled weight decay on every stored row:
  /// logits += lr * g - lr * decay * logits. Throws NonFiniteGradient.
  void apply_update(const Gradient& g, double learning_rate, double weight_decay);

  /// Pretrained policy; identical to a freshly constructed one.
  Policy reference() const { return Policy(*env_, temperature_); }

  const Environment& env() const noexcept { return *env_; }
  std::size_t width() const noexcept { return width_; }
  double temperature() const noexcept { return temperature_; }
  const std::map<ContextState, std::vector<double>>& table() const noexcept { return table_; }

  void save(std::ostream& out) const;
  /// Throws ParseError when the checkpoint does not match this environment.
  void load(std::istream& in);

 private:
  const Environment* env_;
  std::size_t width_;
  double temperature_;
  std::map<ContextState, std::vector<double>> table_;
};

/// Per-token log-probabilities of a recorded trajectory under `policy`;
/// injected tokens get 0 and are flagged in `masked` when given.
std::vector<double> logprob_trajectory(const Policy& policy, const Trajectory& t,
                                       const Budget& budget, std::vector<bool>* masked = nullptr);

}  // namespace rexsim
