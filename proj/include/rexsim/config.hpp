#pragma once

// Run configuration: a flat `key = value` file. Unknown keys, malformed values
// and out-of-range settings are ConfigError.

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "rexsim/correction.hpp"
#include "rexsim/env.hpp"

namespace rexsim {

enum class Mode { Rex, Baseline, NaiveIs, CoarsePpd, NoFilter };

std::string_view to_string(Mode m);
Mode parse_mode(std::string_view s);

struct RunConfig {
  std::uint64_t seed = 1;
  std::size_t steps = 300;
  Mode mode = Mode::Rex;
  int group_size = 5;
  double p = 0.2;
  double alpha = 0.12;
  double clip_eps = 0.2;
  double beta = 0.001;
  double learning_rate = 0.05;
  double weight_decay = 0.01;
  double temperature = 1.0;
  double warmup_ratio = 0.0;
  int max_search_turns = 5;
  int max_tokens = 48;
  int workers = 1;
  std::size_t final_window = 10;  // rows averaged for the final metrics
  OnPolicyWeight on_policy_weight = OnPolicyWeight::Balance;
  Ppd ppd = Ppd::Precise;

  std::size_t pool_size = 30;
  std::uint64_t pool_seed = 11;
  int pool_max_words = 3;
  std::string pool_file;  // token-form pool; overrides the synthetic pool

  std::uint64_t world_seed = 7;
  WorldParams world;

  Budget budget() const { return {max_search_turns, max_tokens}; }
  /// Correction settings after applying the mode.
  CorrectionParams correction() const;
  /// Probe probability after applying the mode.
  double probe_probability() const;
  /// Retention ratio for filtering after applying the mode.
  double retention_alpha() const;
  Estimator estimator() const;

  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> to_pairs() const;
  void set(std::string_view key, std::string_view value);
  void validate() const;
};

RunConfig parse_config(std::istream& in);
RunConfig load_config(const std::string& path);
void write_config(std::ostream& out, const RunConfig& c);

}  // namespace rexsim
