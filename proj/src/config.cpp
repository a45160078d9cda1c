#include "rexsim/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

namespace rexsim {

std::string_view to_string(Mode m) {
  switch (m) {
    case Mode::Rex: return "rex";
    case Mode::Baseline: return "baseline";
    case Mode::NaiveIs: return "naive-is";
    case Mode::CoarsePpd: return "coarse-ppd";
    case Mode::NoFilter: return "no-filter";
  }
  return "rex";
}

Mode parse_mode(std::string_view s) {
  for (Mode m : {Mode::Rex, Mode::Baseline, Mode::NaiveIs, Mode::CoarsePpd, Mode::NoFilter}) {
    if (s == to_string(m)) return m;
  }
  throw Error(ErrorCode::ConfigError, "unknown mode '" + std::string(s) + "'");
}

CorrectionParams RunConfig::correction() const {
  CorrectionParams c;
  c.alpha = alpha;
  c.clip_eps = clip_eps;
  c.beta = beta;
  c.on_policy_weight = on_policy_weight;
  c.ppd = mode == Mode::CoarsePpd ? Ppd::Coarse : ppd;
  return c;
}

double RunConfig::probe_probability() const { return mode == Mode::Baseline ? 0.0 : p; }

double RunConfig::retention_alpha() const {
  return mode == Mode::NoFilter ? std::numeric_limits<double>::infinity() : alpha;
}

Estimator RunConfig::estimator() const {
  return mode == Mode::NaiveIs ? Estimator::Naive : Estimator::Corrected;
}

namespace {

[[noreturn]] void bad(std::string_view key, std::string_view value) {
  throw Error(ErrorCode::ConfigError,
              "invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
}

double to_double(std::string_view key, std::string_view v) {
  std::string s(v);
  char* end = nullptr;
  errno = 0;
  const double x = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) bad(key, v);
  return x;
}

long long to_int(std::string_view key, std::string_view v) {
  std::string s(v);
  char* end = nullptr;
  errno = 0;
  const long long x = std::strtoll(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size() || errno == ERANGE) bad(key, v);
  return x;
}

std::uint64_t to_u64(std::string_view key, std::string_view v) {
  std::string s(v);
  if (s.empty() || s[0] == '-') bad(key, v);
  char* end = nullptr;
  errno = 0;
  const unsigned long long x = std::strtoull(s.c_str(), &end, 10);
  if (end != s.c_str() + s.size() || errno == ERANGE) bad(key, v);
  return x;
}

std::string fmt(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct Field {
  const char* key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, std::string_view)> set;
};

#define REX_DOUBLE(name, member)                                              \
  Field {                                                                     \
    name, [](const RunConfig& c) { return fmt(c.member); },                   \
        [](RunConfig& c, std::string_view v) { c.member = to_double(name, v); } \
  }
#define REX_INT(name, member)                                                                 \
  Field {                                                                                     \
    name, [](const RunConfig& c) { return std::to_string(c.member); },                        \
        [](RunConfig& c, std::string_view v) { c.member = static_cast<decltype(c.member)>(to_int(name, v)); } \
  }
#define REX_U64(name, member)                                                  \
  Field {                                                                      \
    name, [](const RunConfig& c) { return std::to_string(c.member); },         \
        [](RunConfig& c, std::string_view v) { c.member = to_u64(name, v); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      REX_U64("seed", seed),
      Field{"steps", [](const RunConfig& c) { return std::to_string(c.steps); },
            [](RunConfig& c, std::string_view v) { c.steps = static_cast<std::size_t>(to_u64("steps", v)); }},
      Field{"mode", [](const RunConfig& c) { return std::string(to_string(c.mode)); },
            [](RunConfig& c, std::string_view v) { c.mode = parse_mode(v); }},
      REX_INT("group_size", group_size),
      REX_DOUBLE("p", p),
      REX_DOUBLE("alpha", alpha),
      REX_DOUBLE("clip_eps", clip_eps),
      REX_DOUBLE("beta", beta),
      REX_DOUBLE("learning_rate", learning_rate),
      REX_DOUBLE("weight_decay", weight_decay),
      REX_DOUBLE("temperature", temperature),
      REX_DOUBLE("warmup_ratio", warmup_ratio),
      REX_INT("max_search_turns", max_search_turns),
      REX_INT("max_tokens", max_tokens),
      REX_INT("workers", workers),
      Field{"final_window", [](const RunConfig& c) { return std::to_string(c.final_window); },
            [](RunConfig& c, std::string_view v) {
              c.final_window = static_cast<std::size_t>(to_u64("final_window", v));
            }},
      Field{"correction.on_policy_weight",
            [](const RunConfig& c) {
              return std::string(c.on_policy_weight == OnPolicyWeight::Balance ? "balance" : "unit");
            },
            [](RunConfig& c, std::string_view v) {
              if (v == "balance") c.on_policy_weight = OnPolicyWeight::Balance;
              else if (v == "unit") c.on_policy_weight = OnPolicyWeight::Unit;
              else bad("correction.on_policy_weight", v);
            }},
      Field{"correction.ppd",
            [](const RunConfig& c) { return std::string(c.ppd == Ppd::Precise ? "precise" : "coarse"); },
            [](RunConfig& c, std::string_view v) {
              if (v == "precise") c.ppd = Ppd::Precise;
              else if (v == "coarse") c.ppd = Ppd::Coarse;
              else bad("correction.ppd", v);
            }},
      Field{"pool.size", [](const RunConfig& c) { return std::to_string(c.pool_size); },
            [](RunConfig& c, std::string_view v) { c.pool_size = static_cast<std::size_t>(to_u64("pool.size", v)); }},
      REX_U64("pool.seed", pool_seed),
      REX_INT("pool.max_words", pool_max_words),
      Field{"pool.file", [](const RunConfig& c) { return c.pool_file; },
            [](RunConfig& c, std::string_view v) { c.pool_file = std::string(v); }},
      REX_U64("world.seed", world_seed),
      REX_INT("world.questions", world.questions),
      REX_INT("world.hop_depth", world.hop_depth),
      REX_INT("world.entities", world.entities),
      REX_INT("world.relations", world.relations),
      REX_INT("world.think_words", world.think_words),
      REX_DOUBLE("world.distractor_rate", world.distractor_rate),
      REX_INT("world.retrieve_k", world.retrieve_k),
      REX_INT("world.context_order", world.context_order),
      REX_DOUBLE("prior.noise", world.prior.noise),
      REX_DOUBLE("prior.idle_search", world.prior.idle_search),
      REX_DOUBLE("prior.idle_think", world.prior.idle_think),
      REX_DOUBLE("prior.idle_answer", world.prior.idle_answer),
      REX_DOUBLE("prior.info_answer", world.prior.info_answer),
      REX_DOUBLE("prior.info_search", world.prior.info_search),
      REX_DOUBLE("prior.info_think", world.prior.info_think),
      REX_DOUBLE("prior.think_search", world.prior.think_search),
      REX_DOUBLE("prior.think_answer", world.prior.think_answer),
      REX_DOUBLE("prior.think_close", world.prior.think_close),
      REX_DOUBLE("prior.think_word", world.prior.think_word),
      REX_DOUBLE("prior.copy_anchor", world.prior.copy_anchor),
      REX_DOUBLE("prior.search_close", world.prior.search_close),
      REX_DOUBLE("prior.relation_careless", world.prior.relation_careless),
      REX_DOUBLE("prior.relation_reflected", world.prior.relation_reflected),
      REX_DOUBLE("prior.answer_close", world.prior.answer_close),
  };
  return f;
}

#undef REX_DOUBLE
#undef REX_INT
#undef REX_U64

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::ConfigError, what);
}

}  // namespace

std::vector<std::pair<std::string, std::string>> RunConfig::to_pairs() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(*this));
  return out;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  for (const auto& f : fields()) {
    if (key == f.key) {
      f.set(*this, value);
      return;
    }
  }
  throw Error(ErrorCode::ConfigError, "unknown config key '" + std::string(key) + "'");
}

void RunConfig::validate() const {
  require(group_size >= 1, "group_size must be >= 1");
  require(p >= 0.0 && p <= 1.0, "p must be in [0, 1]");
  require(alpha >= 0.0 && std::isfinite(alpha), "alpha must be finite and >= 0");
  require(clip_eps > 0.0, "clip_eps must be > 0");
  require(beta >= 0.0 && std::isfinite(beta), "beta must be finite and >= 0");
  require(learning_rate > 0.0 && std::isfinite(learning_rate), "learning_rate must be > 0");
  require(weight_decay >= 0.0 && std::isfinite(weight_decay), "weight_decay must be >= 0");
  require(temperature > 0.0 && std::isfinite(temperature), "temperature must be > 0");
  require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, "warmup_ratio must be in [0, 1]");
  require(max_search_turns >= 0, "max_search_turns must be >= 0");
  require(max_tokens >= 1, "max_tokens must be >= 1");
  require(workers >= 1, "workers must be >= 1");
  require(final_window >= 1, "final_window must be >= 1");
  require(pool_size >= 1, "pool.size must be >= 1");
  require(pool_max_words >= 1, "pool.max_words must be >= 1");
  require(world.questions >= 1, "world.questions must be >= 1");
  require(world.hop_depth >= 1, "world.hop_depth must be >= 1");
  require(world.entities >= 0, "world.entities must be >= 0");
  require(world.relations >= 2, "world.relations must be >= 2");
  require(world.think_words >= 1, "world.think_words must be >= 1");
  require(world.distractor_rate >= 0.0 && world.distractor_rate <= 1.0,
          "world.distractor_rate must be in [0, 1]");
  require(world.retrieve_k >= 1, "world.retrieve_k must be >= 1");
  require(world.context_order >= 1 && world.context_order <= static_cast<int>(kMaxContextOrder),
          "world.context_order must be in [1, 3]");
}

RunConfig parse_config(std::istream& in) {
  RunConfig c;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view v = trim(line);
    if (v.empty() || v.front() == '#') continue;
    const auto eq = v.find('=');
    if (eq == std::string_view::npos) {
      throw Error(ErrorCode::ConfigError, "line " + std::to_string(lineno) + ": expected key = value");
    }
    c.set(trim(v.substr(0, eq)), trim(v.substr(eq + 1)));
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open config '" + path + "'");
  return parse_config(in);
}

void write_config(std::ostream& out, const RunConfig& c) {
  for (const auto& [k, v] : c.to_pairs()) out << k << " = " << v << '\n';
}

}  // namespace rexsim
