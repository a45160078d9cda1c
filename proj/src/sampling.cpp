#include "rexsim/sampling.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace rexsim {

PromptPool::PromptPool(std::vector<std::vector<Token>> prompts, std::optional<Token> lead)
    : prompts_(std::move(prompts)) {
  if (prompts_.empty()) throw Error(ErrorCode::InvalidParams, "prompt pool is empty");
  for (const auto& p : prompts_) {
    if (p.empty()) throw Error(ErrorCode::InvalidParams, "empty prompt in pool");
    if (lead && p.front() != *lead) {
      throw Error(ErrorCode::InvalidParams, "prompt does not open a think block");
    }
  }
}

PromptPool synthetic_pool(const World& w, std::size_t k, std::uint64_t seed, int max_words) {
  if (k < 1) throw Error(ErrorCode::InvalidParams, "pool size must be >= 1");
  if (max_words < 1) throw Error(ErrorCode::InvalidParams, "max_words must be >= 1");
  const int words = w.params().think_words;
  std::vector<std::vector<Token>> prompts;
  for (std::size_t i = 0; i < k; ++i) {
    Rng rng(seed, 0, i, StreamTag::World, 0x706f6f6cULL);
    std::vector<Token> p{w.vocab().marker(Marker::ThinkOpen)};
    const std::size_t len = 1 + rng.below(static_cast<std::size_t>(max_words));
    for (std::size_t j = 0; j < len; ++j) {
      p.push_back(w.think_word(static_cast<int>(rng.below(static_cast<std::size_t>(words)))));
    }
    prompts.push_back(std::move(p));
  }
  return PromptPool(std::move(prompts), w.vocab().marker(Marker::ThinkOpen));
}

std::vector<std::vector<Token>> read_pool(std::istream& in) {
  std::vector<std::vector<Token>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    std::vector<Token> p;
    std::string tok;
    while (ss >> tok) {
      char* end = nullptr;
      const long v = std::strtol(tok.c_str(), &end, 10);
      if (end != tok.c_str() + tok.size()) throw Error(ErrorCode::ParseError, "bad token '" + tok + "' in pool");
      p.push_back(static_cast<Token>(v));
    }
    if (!p.empty()) out.push_back(std::move(p));
  }
  return out;
}

void write_pool(std::ostream& out, const PromptPool& pool) {
  for (const auto& p : pool.prompts()) {
    for (std::size_t i = 0; i < p.size(); ++i) out << (i ? " " : "") << p[i];
    out << '\n';
  }
}

PmfModel build_pmf(const PromptPool& pool) {
  PmfModel m;
  m.pool_size_ = pool.size();
  for (const auto& k : pool.prompts()) {
    ++m.first_[k.front()];
    for (std::size_t i = 0; i + 1 < k.size(); ++i) {
      std::vector<Token> prefix(k.begin(), k.begin() + static_cast<std::ptrdiff_t>(i) + 1);
      ++m.counts_[std::move(prefix)][k[i + 1]];
    }
  }
  return m;
}

double PmfModel::pmf(std::span<const Token> prefix, Token x) const {
  auto it = counts_.find(std::vector<Token>(prefix.begin(), prefix.end()));
  if (it == counts_.end()) throw Error(ErrorCode::UnseenPrefix, "prefix not present in the prompt pool");
  std::size_t total = 0;
  for (const auto& [t, c] : it->second) total += c;
  auto hit = it->second.find(x);
  return hit == it->second.end() ? 0.0 : static_cast<double>(hit->second) / static_cast<double>(total);
}

double PmfModel::first_token_mass(Token x) const {
  auto it = first_.find(x);
  if (it == first_.end() || pool_size_ == 0) return 0.0;
  return static_cast<double>(it->second) / static_cast<double>(pool_size_);
}

Group rollout_group(const Environment& env, const TokenPolicy& policy, QuestionId q, int G,
                    const Budget& budget, StepKey key) {
  if (G < 1) throw Error(ErrorCode::InvalidParams, "group size must be >= 1");
  Group g;
  g.question_id = q;
  for (int i = 0; i < G; ++i) {
    Rng rng(key.seed, key.step, static_cast<std::uint64_t>(q), StreamTag::Rollout, static_cast<std::uint64_t>(i));
    Trajectory t = run_episode(env, policy, q, budget, rng);
    t.rollout_index = i;
    if (debug::partition_checks()) debug::check_partition(t);
    g.trajectories.push_back(std::move(t));
  }
  return g;
}

std::vector<Trajectory> probe_resample(const Group& group, double p, const PromptPool& pool,
                                       const Policy& policy, const Budget& budget, StepKey key,
                                       ProbeStats* stats) {
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorCode::InvalidParams, "probe probability must be in [0, 1]");
  const Environment& env = policy.env();
  ProbeStats local;
  std::vector<Trajectory> probes;
  std::vector<double> probs(env.action_count());
  std::vector<Token> injected;
  for (const Trajectory& o : group.trajectories) {
    if (o.source != Source::OnPolicy) continue;
    Rng rng(key.seed, key.step, static_cast<std::uint64_t>(group.question_id), StreamTag::Probe,
            static_cast<std::uint64_t>(o.rollout_index));
    if (!rng.bernoulli(p * (1.0 - o.reward))) continue;
    ++local.attempted;
    const auto cut = env.splice_point(o.question_id, o.tokens, budget);
    if (!cut) {
      ++local.skipped_no_answer;
      continue;
    }
    const std::vector<Token>& prompt = pool[rng.below(pool.size())];

    Trajectory t;
    t.question_id = o.question_id;
    t.source = Source::Probe;
    t.rollout_index = o.rollout_index;
    t.tokens.assign(o.tokens.begin(), o.tokens.begin() + static_cast<std::ptrdiff_t>(cut->index));
    t.behavior_logprobs.assign(o.behavior_logprobs.begin(),
                               o.behavior_logprobs.begin() + static_cast<std::ptrdiff_t>(cut->index));
    EpisodeState s = replay(env, o.question_id, t.tokens, budget).final_state;

    bool ok = !s.done;
    for (std::size_t j = 0; ok && j < prompt.size(); ++j) {
      const Token x = prompt[j];
      if (x < 0 || static_cast<std::size_t>(x) >= env.action_count()) {
        throw Error(ErrorCode::InvalidParams, "prompt token outside the action set");
      }
      policy.distribution(s.context, probs);
      t.tokens.push_back(x);
      t.behavior_logprobs.push_back(std::log(probs[static_cast<std::size_t>(x)]));
      injected.clear();
      env.advance(s, x, injected);
      if (!injected.empty() || s.done) ok = false;
    }
    if (!ok) {
      ++local.skipped_no_answer;
      continue;
    }
    if (cut->fallback) ++local.fallback_splices;
    const std::size_t prompt_end = t.tokens.size();
    continue_episode(env, policy, s, t, rng);
    t.segments = {Segment{SegmentKind::Origin, 0, cut->index},
                  Segment{SegmentKind::Prompt, cut->index, prompt_end},
                  Segment{SegmentKind::Probe, prompt_end, t.tokens.size()}};
    t.reward = env.reward(s);
    if (debug::partition_checks()) debug::check_partition(t);
    ++local.generated;
    probes.push_back(std::move(t));
  }
  if (stats) {
    stats->attempted += local.attempted;
    stats->generated += local.generated;
    stats->fallback_splices += local.fallback_splices;
    stats->skipped_no_answer += local.skipped_no_answer;
  }
  return probes;
}

double compute_z(const Group& group) {
  std::size_t n = 0, failed = 0;
  for (const auto& t : group.trajectories) {
    if (t.source != Source::OnPolicy) continue;
    ++n;
    if (t.reward == 0.0) ++failed;
  }
  if (n == 0) throw Error(ErrorCode::InvalidParams, "group has no on-policy trajectories");
  return static_cast<double>(failed) / static_cast<double>(n);
}

}  // namespace rexsim
