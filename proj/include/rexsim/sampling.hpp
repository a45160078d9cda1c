#pragma once

// Mixed sampling: on-policy group rollouts, adaptive probe resampling that
// splices a pool prompt into failed rollouts, and the prefix frequency model
// over the prompt pool.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rexsim/env.hpp"
#include "rexsim/policy.hpp"

namespace rexsim {

class PromptPool {
 public:
  /// Throws InvalidParams on an empty pool, an empty prompt, or a prompt that
  /// does not start with `lead` when one is required.
  explicit PromptPool(std::vector<std::vector<Token>> prompts, std::optional<Token> lead = std::nullopt);

  std::size_t size() const noexcept { return prompts_.size(); }
  const std::vector<Token>& operator[](std::size_t i) const { return prompts_[i]; }
  const std::vector<std::vector<Token>>& prompts() const noexcept { return prompts_; }

 private:
  std::vector<std::vector<Token>> prompts_;
};

/// k prompts of the form [think-open, w1 .. wL] with words drawn from the
/// world's think vocabulary, 1 <= L <= max_words. Deterministic in seed.
PromptPool synthetic_pool(const World& w, std::size_t k, std::uint64_t seed, int max_words = 3);

/// One prompt per line, token ids separated by spaces; '#' lines are comments.
std::vector<std::vector<Token>> read_pool(std::istream& in);
void write_pool(std::ostream& out, const PromptPool& pool);

/// Next-token frequencies for every proper prefix of every pool prompt, plus
/// the first-token frequencies over the pool.
class PmfModel {
 public:
  /// counts[x] / sum(counts) for the stored prefix; 0 for an unseen token.
  /// Throws UnseenPrefix.
  double pmf(std::span<const Token> prefix, Token x) const;
  /// Pool frequency of prompts starting with x, divided by the pool size.
  double first_token_mass(Token x) const;

  const std::map<std::vector<Token>, std::map<Token, std::size_t>>& prefix_counts() const noexcept {
    return counts_;
  }
  std::size_t pool_size() const noexcept { return pool_size_; }

  friend PmfModel build_pmf(const PromptPool& pool);

 private:
  std::map<std::vector<Token>, std::map<Token, std::size_t>> counts_;
  std::map<Token, std::size_t> first_;
  std::size_t pool_size_ = 0;
};

PmfModel build_pmf(const PromptPool& pool);

struct StepKey {
  std::uint64_t seed = 0;
  std::uint64_t step = 0;
};

/// G on-policy episodes for one question; rollout i draws from the stream
/// (seed, step, question, Rollout, i).
Group rollout_group(const Environment& env, const TokenPolicy& policy, QuestionId q, int G,
                    const Budget& budget, StepKey key);

struct ProbeStats {
  std::size_t attempted = 0;
  std::size_t generated = 0;
  std::size_t fallback_splices = 0;   // no Answer block; cut at a block boundary
  std::size_t skipped_no_answer = 0;  // nothing to splice or no budget left
};

/// Resamples each trajectory with probability p (1 - r_i), at most once.
/// Probe i draws from the stream (seed, step, question, Probe, i).
std::vector<Trajectory> probe_resample(const Group& group, double p, const PromptPool& pool,
                                       const Policy& policy, const Budget& budget, StepKey key,
                                       ProbeStats* stats = nullptr);

/// Fraction of reward-0 trajectories among the group's on-policy rollouts.
double compute_z(const Group& group);

}  // namespace rexsim
