#pragma once

// Training metrics and the McNemar paired test.

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "rexsim/core.hpp"

namespace rexsim::stats {

/// Fraction of groups whose on-policy rollouts all have reward 0.
double dead_end_rate(std::span<const Group> groups);
/// Mean reward over on-policy rollouts.
double success_rate(std::span<const Group> groups);

struct PairedOutcomes {
  std::size_t a = 0;  // both correct
  std::size_t b = 0;  // only A correct
  std::size_t c = 0;  // only B correct
  std::size_t d = 0;  // both wrong

  std::size_t total() const noexcept { return a + b + c + d; }
};

/// Throws InvalidParams when the outcome vectors differ in length.
PairedOutcomes pair_outcomes(std::span<const int> first, std::span<const int> second);

enum class McNemarMethod { ExactBinomial, ChiSquare };
std::string_view to_string(McNemarMethod m);

struct McNemarResult {
  double statistic = 0.0;  // b for the exact branch, the chi-square value otherwise
  double p_value = 1.0;
  McNemarMethod method = McNemarMethod::ExactBinomial;
};

/// Exact two-sided binomial test when b + c < exact_below, else the
/// continuity-corrected chi-square with one degree of freedom. Throws
/// NoDiscordantPairs.
McNemarResult mcnemar(const PairedOutcomes& p, std::size_t exact_below = 25);

/// Regularized upper incomplete gamma Q(a, x).
double gamma_q(double a, double x);
/// Upper tail of the chi-square distribution.
double chi_square_sf(double x, double dof);
/// Two-sided exact binomial p-value for k successes in n trials at 1/2.
double binomial_two_sided(std::size_t k, std::size_t n);

struct StepDiagnostics {
  double entropy = 0.0;
  double mean_omega = 0.0;
  double max_omega = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
  std::size_t probes_retained = 0;
};

struct MetricsRow {
  std::size_t step = 0;
  double success_rate = 0.0;
  double dead_end_rate = 0.0;
  double entropy = 0.0;
  double mean_omega = 0.0;
  double max_omega = 0.0;
  double clip_frac = 0.0;
  double kl = 0.0;
  std::size_t probes_retained = 0;
};

MetricsRow metrics_step(std::size_t step, std::span<const Group> groups, const StepDiagnostics& d);

inline constexpr std::string_view kMetricsHeader =
    "step,success_rate,dead_end_rate,entropy,mean_omega,max_omega,clip_frac,kl,probes_retained";
std::string format_row(const MetricsRow& r);
MetricsRow parse_row(std::string_view line);

}  // namespace rexsim::stats
