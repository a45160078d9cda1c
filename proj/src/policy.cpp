#include "rexsim/policy.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <string>

#include "rexsim/kernels.hpp"

namespace rexsim {

void action_dist(std::span<const double> logits, double temperature, std::span<double> probs) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidParams, "temperature must be > 0");
  kernels::shift_scale(logits, kernels::max_element(logits), temperature, probs);
  double total = 0.0;
  for (auto& p : probs) {
    p = std::exp(p);
    total += p;
  }
  kernels::divide(probs, total);
}

std::vector<double>& Gradient::row(const ContextState& c, std::size_t width) {
  auto [it, fresh] = rows.try_emplace(c);
  if (fresh) it->second.assign(width, 0.0);
  return it->second;
}

void Gradient::add(const Gradient& other, double scale) {
  for (const auto& [c, g] : other.rows) {
    auto& r = row(c, g.size());
    for (std::size_t i = 0; i < g.size(); ++i) r[i] += scale * g[i];
  }
}

double Gradient::dot(const Gradient& other) const {
  double s = 0.0;
  for (const auto& [c, g] : rows) {
    auto it = other.rows.find(c);
    if (it == other.rows.end()) continue;
    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * it->second[i];
  }
  return s;
}

Policy::Policy(const Environment& env, double temperature)
    : env_(&env), width_(env.action_count()), temperature_(temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::InvalidParams, "temperature must be > 0");
}

void Policy::logits(const ContextState& c, std::span<double> out) const {
  if (auto it = table_.find(c); it != table_.end()) {
    std::copy(it->second.begin(), it->second.end(), out.begin());
  } else {
    env_->base_logits(c, out);
  }
}

void Policy::distribution(const ContextState& c, std::span<double> probs) const {
  std::vector<double> z(width_);
  logits(c, z);
  action_dist(z, temperature_, probs);
}

double Policy::logprob(const ContextState& c, Token a) const {
  std::vector<double> p(width_);
  distribution(c, p);
  return std::log(p[static_cast<std::size_t>(a)]);
}

double Policy::entropy(const ContextState& c) const {
  std::vector<double> p(width_);
  distribution(c, p);
  double h = 0.0;
  for (double x : p) {
    if (x > 0.0) h -= x * std::log(x);
  }
  return h < 0.0 ? 0.0 : h;
}

Gradient Policy::grad_logprob(const ContextState& c, Token a) const {
  std::vector<double> p(width_);
  distribution(c, p);
  Gradient g;
  kernels::score_axpy(g.row(c, width_), p, 1.0 / temperature_, static_cast<std::size_t>(a));
  return g;
}

std::vector<double>& Policy::row(const ContextState& c) {
  auto [it, fresh] = table_.try_emplace(c);
  if (fresh) {
    it->second.resize(width_);
    env_->base_logits(c, it->second);
  }
  return it->second;
}

void Policy::apply_update(const Gradient& g, double learning_rate, double weight_decay) {
  if (!(learning_rate > 0.0)) throw Error(ErrorCode::InvalidParams, "learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw Error(ErrorCode::InvalidParams, "weight_decay must be >= 0");
  for (const auto& [c, r] : g.rows) {
    if (r.size() != width_) throw Error(ErrorCode::InvalidParams, "gradient row width mismatch");
    for (double x : r) {
      if (!std::isfinite(x)) throw Error(ErrorCode::NonFiniteGradient, "non-finite gradient entry");
    }
  }
  for (const auto& [c, r] : g.rows) row(c);
  const std::vector<double> zero(width_, 0.0);
  for (auto& [c, logits] : table_) {
    auto it = g.rows.find(c);
    if (it == g.rows.end() && weight_decay == 0.0) continue;
    kernels::decayed_axpy(logits, it == g.rows.end() ? zero : it->second, learning_rate, weight_decay);
  }
}

namespace {

constexpr const char* kMagic = "rexsim-policy";
constexpr int kVersion = 1;

double parse_double(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorCode::ParseError, "bad number '" + s + "'");
  return v;
}

}  // namespace

void Policy::save(std::ostream& out) const {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", temperature_);
  out << kMagic << ' ' << kVersion << '\n'
      << "width " << width_ << '\n'
      << "order " << env_->context_order() << '\n'
      << "temperature " << buf << '\n'
      << "rows " << table_.size() << '\n';
  for (const auto& [c, logits] : table_) {
    out << static_cast<int>(c.kind) << ' ' << static_cast<int>(c.flags) << ' ' << c.anchor;
    for (Token t : c.recent) out << ' ' << t;
    for (double x : logits) {
      std::snprintf(buf, sizeof buf, "%a", x);
      out << ' ' << buf;
    }
    out << '\n';
  }
}

void Policy::load(std::istream& in) {
  auto expect = [&](const char* word) {
    std::string got;
    if (!(in >> got) || got != word) {
      throw Error(ErrorCode::ParseError, std::string("expected '") + word + "' in checkpoint");
    }
  };
  expect(kMagic);
  int version = 0;
  if (!(in >> version) || version != kVersion) throw Error(ErrorCode::ParseError, "unsupported checkpoint version");
  std::size_t width = 0, rows = 0;
  int order = 0;
  std::string temp;
  expect("width");
  in >> width;
  expect("order");
  in >> order;
  expect("temperature");
  in >> temp;
  expect("rows");
  in >> rows;
  if (!in) throw Error(ErrorCode::ParseError, "truncated checkpoint header");
  if (width != width_ || order != env_->context_order()) {
    throw Error(ErrorCode::ParseError, "checkpoint does not match the environment");
  }
  const double temperature = parse_double(temp);
  std::map<ContextState, std::vector<double>> table;
  for (std::size_t r = 0; r < rows; ++r) {
    ContextState c;
    int kind = 0, flags = 0;
    in >> kind >> flags >> c.anchor;
    for (auto& t : c.recent) in >> t;
    if (!in || kind < 0 || kind >= static_cast<int>(protocol::kKindCount) || flags < 0 || flags > 255) {
      throw Error(ErrorCode::ParseError, "bad checkpoint row key");
    }
    c.kind = static_cast<protocol::Kind>(kind);
    c.flags = static_cast<std::uint8_t>(flags);
    std::vector<double> logits(width);
    for (auto& x : logits) {
      std::string s;
      if (!(in >> s)) throw Error(ErrorCode::ParseError, "truncated checkpoint row");
      x = parse_double(s);
      if (!std::isfinite(x)) throw Error(ErrorCode::ParseError, "non-finite logit in checkpoint");
    }
    table.emplace(c, std::move(logits));
  }
  temperature_ = temperature;
  table_ = std::move(table);
}

std::vector<double> logprob_trajectory(const Policy& policy, const Trajectory& t,
                                       const Budget& budget, std::vector<bool>* masked) {
  const Replay r = replay(policy.env(), t.question_id, t.tokens, budget);
  std::vector<double> out(t.size(), 0.0);
  if (masked) masked->assign(t.size(), false);
  std::vector<double> p(policy.width());
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (r.steps[i].injected) {
      if (masked) (*masked)[i] = true;
      continue;
    }
    policy.distribution(r.steps[i].context, p);
    out[i] = std::log(p[static_cast<std::size_t>(t.tokens[i])]);
  }
  return out;
}

}  // namespace rexsim
