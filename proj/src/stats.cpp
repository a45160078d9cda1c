#include "rexsim/stats.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <limits>
#include <sstream>

namespace rexsim::stats {

namespace {

bool all_failed(const Group& g) {
  for (const auto& t : g.trajectories) {
    if (t.source == Source::OnPolicy && t.reward != 0.0) return false;
  }
  return true;
}

}  // namespace

double dead_end_rate(std::span<const Group> groups) {
  if (groups.empty()) throw Error(ErrorCode::InvalidParams, "dead_end_rate needs at least one group");
  std::size_t dead = 0;
  for (const auto& g : groups) dead += all_failed(g) ? 1 : 0;
  return static_cast<double>(dead) / static_cast<double>(groups.size());
}

double success_rate(std::span<const Group> groups) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& g : groups) {
    for (const auto& t : g.trajectories) {
      if (t.source != Source::OnPolicy) continue;
      sum += t.reward;
      ++n;
    }
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

PairedOutcomes pair_outcomes(std::span<const int> first, std::span<const int> second) {
  if (first.size() != second.size()) throw Error(ErrorCode::InvalidParams, "outcome files differ in length");
  PairedOutcomes p;
  for (std::size_t i = 0; i < first.size(); ++i) {
    const bool x = first[i] != 0, y = second[i] != 0;
    if (x && y) ++p.a;
    else if (x) ++p.b;
    else if (y) ++p.c;
    else ++p.d;
  }
  return p;
}

std::string_view to_string(McNemarMethod m) {
  return m == McNemarMethod::ExactBinomial ? "exact-binomial" : "chi-square";
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || !(x >= 0.0)) throw Error(ErrorCode::InvalidParams, "gamma_q needs a > 0, x >= 0");
  if (x == 0.0) return 1.0;
  const double log_prefix = -x + a * std::log(x) - std::lgamma(a);
  constexpr double eps = 1e-16;
  if (x < a + 1.0) {
    // Series for P(a, x).
    double term = 1.0 / a, sum = term;
    for (int n = 1; n < 10000; ++n) {
      term *= x / (a + n);
      sum += term;
      if (std::fabs(term) < std::fabs(sum) * eps) break;
    }
    return 1.0 - sum * std::exp(log_prefix);
  }
  // Lentz continued fraction for Q(a, x).
  constexpr double tiny = 1e-300;
  double b = x + 1.0 - a, c = 1.0 / tiny, d = 1.0 / b, h = d;
  for (int i = 1; i < 10000; ++i) {
    const double an = -i * (i - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < eps) break;
  }
  return std::exp(log_prefix) * h;
}

double chi_square_sf(double x, double dof) {
  if (x <= 0.0) return 1.0;
  return gamma_q(dof / 2.0, x / 2.0);
}

double binomial_two_sided(std::size_t k, std::size_t n) {
  if (k > n) throw Error(ErrorCode::InvalidParams, "k exceeds n");
  const std::size_t lo = std::min(k, n - k);
  const double dn = static_cast<double>(n);
  double tail = 0.0;
  for (std::size_t i = 0; i <= lo; ++i) {
    const double di = static_cast<double>(i);
    tail += std::exp(std::lgamma(dn + 1) - std::lgamma(di + 1) - std::lgamma(dn - di + 1) - dn * std::log(2.0));
  }
  return std::min(1.0, 2.0 * tail);
}

McNemarResult mcnemar(const PairedOutcomes& p, std::size_t exact_below) {
  const std::size_t n = p.b + p.c;
  if (n == 0) throw Error(ErrorCode::NoDiscordantPairs, "McNemar test needs b + c >= 1");
  McNemarResult r;
  if (n < exact_below) {
    r.method = McNemarMethod::ExactBinomial;
    r.statistic = static_cast<double>(p.b);
    r.p_value = binomial_two_sided(p.b, n);
    return r;
  }
  const double diff = std::fabs(static_cast<double>(p.b) - static_cast<double>(p.c)) - 1.0;
  const double corrected = diff > 0.0 ? diff : 0.0;
  r.method = McNemarMethod::ChiSquare;
  r.statistic = corrected * corrected / static_cast<double>(n);
  r.p_value = chi_square_sf(r.statistic, 1.0);
  return r;
}

MetricsRow metrics_step(std::size_t step, std::span<const Group> groups, const StepDiagnostics& d) {
  MetricsRow r;
  r.step = step;
  r.success_rate = success_rate(groups);
  r.dead_end_rate = groups.empty() ? 0.0 : dead_end_rate(groups);
  r.entropy = d.entropy;
  r.mean_omega = d.mean_omega;
  r.max_omega = d.max_omega;
  r.clip_frac = d.clip_frac;
  r.kl = d.kl;
  r.probes_retained = d.probes_retained;
  return r;
}

std::string format_row(const MetricsRow& r) {
  char buf[512];
  std::snprintf(buf, sizeof buf, "%zu,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g,%zu", r.step,
                r.success_rate, r.dead_end_rate, r.entropy, r.mean_omega, r.max_omega, r.clip_frac,
                r.kl, r.probes_retained);
  return buf;
}

MetricsRow parse_row(std::string_view line) {
  std::vector<std::string> f;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      f.push_back(cur);
      cur.clear();
    } else if (ch != '\r' && ch != '\n') {
      cur += ch;
    }
  }
  f.push_back(cur);
  if (f.size() != 9) throw Error(ErrorCode::ParseError, "metrics row needs 9 fields");
  auto num = [](const std::string& s) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorCode::ParseError, "bad metrics field '" + s + "'");
    return v;
  };
  MetricsRow r;
  r.step = static_cast<std::size_t>(num(f[0]));
  r.success_rate = num(f[1]);
  r.dead_end_rate = num(f[2]);
  r.entropy = num(f[3]);
  r.mean_omega = num(f[4]);
  r.max_omega = num(f[5]);
  r.clip_frac = num(f[6]);
  r.kl = num(f[7]);
  r.probes_retained = static_cast<std::size_t>(num(f[8]));
  return r;
}

}  // namespace rexsim::stats
