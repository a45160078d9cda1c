#include "rexsim/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <deque>
#include <istream>
#include <numeric>
#include <ostream>
#include <sstream>

namespace rexsim {

namespace {

void push_recent(ContextState& c, Token t, int order) {
  for (int i = order - 1; i > 0; --i) c.recent[i] = c.recent[i - 1];
  c.recent[0] = t;
}

void check_budget(const Budget& b) {
  if (b.max_turns < 0) throw Error(ErrorCode::InvalidParams, "budget.max_turns must be >= 0");
  if (b.max_tokens < 1) throw Error(ErrorCode::InvalidParams, "budget.max_tokens must be >= 1");
}

void check_order(int order) {
  if (order < 1 || order > static_cast<int>(kMaxContextOrder)) {
    throw Error(ErrorCode::InvalidParams, "context order must be in [1, 3]");
  }
}

}  // namespace

std::string format_context(const ContextState& c) {
  std::string out(protocol::to_string(c.kind));
  out += '/' + std::to_string(c.flags) + '/' + std::to_string(c.anchor) + '/';
  for (std::size_t i = 0; i < kMaxContextOrder; ++i) {
    if (i) out += ',';
    out += std::to_string(c.recent[i]);
  }
  return out;
}

Replay replay(const Environment& env, QuestionId q, std::span<const Token> tokens,
              const Budget& budget) {
  Replay r;
  r.final_state = env.begin(q, budget);
  auto& s = r.final_state;
  r.steps.reserve(tokens.size());
  std::vector<Token> injected;
  const auto actions = static_cast<Token>(env.action_count());
  std::size_t i = 0;
  while (i < tokens.size()) {
    if (s.done) {
      throw Error(ErrorCode::ContextReplayMismatch,
                  "token after episode end at index " + std::to_string(i));
    }
    const Token t = tokens[i];
    if (t < 0 || t >= actions) {
      throw Error(ErrorCode::ContextReplayMismatch,
                  "token outside the action set at index " + std::to_string(i));
    }
    r.steps.push_back({s.context, false});
    injected.clear();
    env.advance(s, t, injected);
    ++i;
    for (Token x : injected) {
      if (i >= tokens.size() || tokens[i] != x) {
        throw Error(ErrorCode::ContextReplayMismatch,
                    "injected content differs at index " + std::to_string(i));
      }
      r.steps.push_back({s.context, true});
      ++i;
    }
  }
  return r;
}

void continue_episode(const Environment& env, const TokenPolicy& policy, EpisodeState& s,
                      Trajectory& t, Rng& rng) {
  std::vector<double> probs(env.action_count());
  std::vector<Token> injected;
  while (!s.done) {
    policy.distribution(s.context, probs);
    const auto a = static_cast<Token>(rng.categorical(probs));
    t.tokens.push_back(a);
    t.behavior_logprobs.push_back(std::log(probs[static_cast<std::size_t>(a)]));
    injected.clear();
    env.advance(s, a, injected);
    for (Token x : injected) {
      t.tokens.push_back(x);
      t.behavior_logprobs.push_back(0.0);
    }
  }
}

Trajectory run_episode(const Environment& env, const TokenPolicy& policy, QuestionId q,
                       const Budget& budget, Rng& rng) {
  check_budget(budget);
  Trajectory t;
  t.question_id = q;
  t.source = Source::OnPolicy;
  EpisodeState s = env.begin(q, budget);
  continue_episode(env, policy, s, t, rng);
  t.segments = {Segment{SegmentKind::Plain, 0, t.tokens.size()}};
  t.reward = env.reward(s);
  return t;
}

double reward_em(const std::optional<std::vector<Token>>& pred, std::span<const Token> gold) {
  if (!pred) return 0.0;
  return std::equal(pred->begin(), pred->end(), gold.begin(), gold.end()) ? 1.0 : 0.0;
}

// ---------------------------------------------------------------------------
// World

void World::index() {
  vocab_ = Vocab(static_cast<std::size_t>(entity_count_ + params_.relations + params_.think_words));
  chain_relations_.assign(static_cast<std::size_t>(entity_count_), {});
  for (const auto& q : questions_) {
    for (std::size_t f : q.hop_chain) {
      const Fact& fact = facts_[f];
      auto& rels = chain_relations_[static_cast<std::size_t>(fact.subject)];
      if (std::find(rels.begin(), rels.end(), fact.relation) == rels.end()) {
        rels.push_back(fact.relation);
      }
    }
  }
}

EpisodeState World::begin(QuestionId q, const Budget& budget) const {
  if (q < 0 || static_cast<std::size_t>(q) >= questions_.size()) {
    throw Error(ErrorCode::InvalidParams, "question id out of range");
  }
  check_budget(budget);
  EpisodeState s;
  s.question = q;
  s.budget = budget;
  s.context.anchor = questions_[static_cast<std::size_t>(q)].prompt_tokens.front();
  return s;
}

std::vector<Token> World::information(std::span<const Token> query) const {
  std::vector<Token> out{vocab_.marker(Marker::InfoOpen)};
  for (std::size_t f : retrieve(query, params_.retrieve_k, *this)) {
    out.push_back(facts_[f].subject);
    out.push_back(facts_[f].relation);
    out.push_back(facts_[f].object);
  }
  out.push_back(vocab_.marker(Marker::InfoClose));
  return out;
}

void World::advance(EpisodeState& s, Token t, std::vector<Token>& injected) const {
  if (s.done) throw Error(ErrorCode::InvalidParams, "advance after episode end");
  const int order = params_.context_order;
  protocol::Machine m(vocab_, s.budget.max_turns, s.proto);
  const auto before = s.proto.kind;
  ++s.tokens_used;
  push_recent(s.context, t, order);
  if (auto fault = m.feed(t)) {
    s.fault = fault;
    s.done = true;
    s.context.kind = protocol::Kind::Done;
    return;
  }
  switch (m.last_event()) {
    case protocol::Event::Opened: s.block.clear(); break;
    case protocol::Event::Content: s.block.push_back(t); break;
    case protocol::Event::Closed:
      if (before == protocol::Kind::InThink) {
        s.context.anchor = questions_[static_cast<std::size_t>(s.question)].prompt_tokens.front();
        s.context.flags |= ContextState::kReflected;
      } else if (before == protocol::Kind::InSearch) {
        const auto docs = retrieve(s.block, params_.retrieve_k, *this);
        injected = information(s.block);
        for (Token x : injected) {
          m.feed(x);
          push_recent(s.context, x, order);
        }
        if (!docs.empty()) s.context.anchor = facts_[docs.front()].object;
        s.context.flags &= static_cast<std::uint8_t>(~ContextState::kReflected);
      } else if (before == protocol::Kind::InAnswer) {
        s.answer = s.block;
        s.done = true;
      }
      break;
    default: break;
  }
  s.proto = m.state();
  s.context.kind = s.proto.kind;
  if (s.tokens_used >= s.budget.max_tokens) s.done = true;
}

double World::reward(const EpisodeState& s) const {
  return reward_em(s.answer, questions_[static_cast<std::size_t>(s.question)].gold_answer);
}

std::optional<SplicePoint> World::splice_point(QuestionId, std::span<const Token> tokens,
                                               const Budget& budget) const {
  if (!tokens.empty()) {
    auto parsed = protocol::parse(tokens, vocab_, budget.max_turns);
    if (auto* ep = std::get_if<protocol::ParsedEpisode>(&parsed)) {
      for (const auto& b : ep->blocks) {
        if (b.kind == protocol::BlockKind::Answer) return SplicePoint{b.start, false};
      }
    }
  }
  return SplicePoint{protocol::last_block_boundary(tokens, vocab_, budget.max_turns), true};
}

void World::base_logits(const ContextState& c, std::span<double> out) const {
  const PriorParams& p = params_.prior;
  std::fill(out.begin(), out.end(), p.noise);
  auto at = [&](Token t) -> double& { return out[static_cast<std::size_t>(t)]; };
  auto mk = [&](Marker m) -> double& { return at(vocab_.marker(m)); };
  const Token last = c.recent[0];
  const auto last_marker = vocab_.marker_of(last);
  auto idle = [&] {
    mk(Marker::SearchOpen) = p.idle_search;
    mk(Marker::ThinkOpen) = p.idle_think;
    mk(Marker::AnswerOpen) = p.idle_answer;
  };
  switch (c.kind) {
    case protocol::Kind::Idle: idle(); break;
    case protocol::Kind::AwaitAction:
      if (last_marker == Marker::InfoClose) {
        mk(Marker::AnswerOpen) = p.info_answer;
        mk(Marker::SearchOpen) = p.info_search;
        mk(Marker::ThinkOpen) = p.info_think;
      } else if (last_marker == Marker::ThinkClose) {
        mk(Marker::SearchOpen) = p.think_search;
        mk(Marker::AnswerOpen) = p.think_answer;
      } else {
        idle();
      }
      break;
    case protocol::Kind::InThink:
      mk(Marker::ThinkClose) = p.think_close;
      for (int i = 0; i < params_.think_words; ++i) at(think_word(i)) = p.think_word;
      break;
    case protocol::Kind::InSearch:
      if (last_marker == Marker::SearchOpen) {
        if (is_entity(c.anchor)) at(c.anchor) = p.copy_anchor;
      } else {
        mk(Marker::SearchClose) = p.search_close;
        if (is_entity(last)) {
          const double bonus = c.reflected() ? p.relation_reflected : p.relation_careless;
          for (Token r : chain_relations_[static_cast<std::size_t>(last)]) at(r) = bonus;
        }
      }
      break;
    case protocol::Kind::InAnswer:
      if (last_marker == Marker::AnswerOpen) {
        if (is_entity(c.anchor)) at(c.anchor) = p.copy_anchor;
      } else {
        mk(Marker::AnswerClose) = p.answer_close;
      }
      break;
    default: break;
  }
}

namespace {

void validate(const WorldParams& p, int entities) {
  if (p.hop_depth < 1) throw Error(ErrorCode::InvalidParams, "hop_depth must be >= 1");
  if (p.questions < 1) throw Error(ErrorCode::InvalidParams, "questions must be >= 1");
  if (p.relations < 2) throw Error(ErrorCode::InvalidParams, "relations must be >= 2");
  if (p.think_words < 1) throw Error(ErrorCode::InvalidParams, "think_words must be >= 1");
  if (p.retrieve_k < 1) throw Error(ErrorCode::InvalidParams, "retrieve_k must be >= 1");
  if (!(p.distractor_rate >= 0.0 && p.distractor_rate <= 1.0)) {
    throw Error(ErrorCode::InvalidParams, "distractor_rate must be in [0, 1]");
  }
  if (entities < 2 * p.hop_depth || entities < p.hop_depth + 2) {
    throw Error(ErrorCode::InvalidParams, "too few entities for the hop depth");
  }
  check_order(p.context_order);
}

// Every question has exactly one fact per (subject, relation) on its chain,
// its gold answer at graph distance hop_depth, and shortcut objects that are
// never a gold answer.
bool well_formed(const World& w) {
  std::vector<Token> golds;
  for (const auto& q : w.questions()) golds.push_back(q.gold_answer.front());
  for (const auto& q : w.questions()) {
    if (hop_distance(w, q) != w.params().hop_depth) return false;
    for (std::size_t f : q.hop_chain) {
      const Fact& a = w.facts()[f];
      for (std::size_t g = 0; g < w.facts().size(); ++g) {
        const Fact& b = w.facts()[g];
        if (g != f && a.subject == b.subject && a.relation == b.relation) return false;
      }
    }
    if (q.shortcut) {
      const Token d = w.facts()[*q.shortcut].object;
      if (std::find(golds.begin(), golds.end(), d) != golds.end()) return false;
    }
  }
  return true;
}

}  // namespace

World generate_world(std::uint64_t seed, const WorldParams& params) {
  const int H = params.hop_depth;
  const int E = params.entities > 0 ? params.entities : params.questions * (H + 2);
  validate(params, E);
  const int Q = params.questions;
  const int distractors = static_cast<int>(std::lround(params.distractor_rate * Q));

  for (std::uint64_t attempt = 0; attempt < 1000; ++attempt) {
    Rng rng(seed, 0, 0, StreamTag::World, attempt);
    auto& eng = rng.engine();
    World w;
    w.params_ = params;
    w.params_.entities = E;
    w.seed_ = seed;
    w.entity_count_ = E;

    std::vector<int> order(static_cast<std::size_t>(Q));
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), eng);
    std::vector<bool> has_shortcut(static_cast<std::size_t>(Q), false);
    for (int i = 0; i < distractors; ++i) has_shortcut[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = true;

    std::vector<int> pool(static_cast<std::size_t>(E));
    std::iota(pool.begin(), pool.end(), 0);
    std::shuffle(pool.begin(), pool.end(), eng);
    const bool disjoint = E >= Q * (H + 2);

    std::vector<Fact> chain_facts;
    std::vector<Fact> shortcut_facts;
    std::vector<std::vector<std::size_t>> chain_local(static_cast<std::size_t>(Q));
    std::vector<int> shortcut_local(static_cast<std::size_t>(Q), -1);
    std::vector<std::vector<Token>> prompts(static_cast<std::size_t>(Q));
    std::vector<Token> golds(static_cast<std::size_t>(Q));

    for (int qi = 0; qi < Q; ++qi) {
      std::vector<int> ents;
      if (disjoint) {
        const auto base = static_cast<std::size_t>(qi * (H + 2));
        ents.assign(pool.begin() + static_cast<std::ptrdiff_t>(base),
                    pool.begin() + static_cast<std::ptrdiff_t>(base + static_cast<std::size_t>(H) + 2));
      } else {
        std::vector<int> local = pool;
        for (int j = 0; j < H + 2; ++j) {
          std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(j), local.size() - 1);
          std::swap(local[static_cast<std::size_t>(j)], local[pick(eng)]);
        }
        ents.assign(local.begin(), local.begin() + H + 2);
      }
      std::uniform_int_distribution<int> rel(0, params.relations - 1);
      auto& prompt = prompts[static_cast<std::size_t>(qi)];
      prompt.push_back(w.entity(ents[0]));
      int first_rel = 0;
      for (int h = 0; h < H; ++h) {
        const int r = rel(eng);
        if (h == 0) first_rel = r;
        prompt.push_back(w.relation(r));
        chain_local[static_cast<std::size_t>(qi)].push_back(chain_facts.size());
        chain_facts.push_back({w.entity(ents[static_cast<std::size_t>(h)]), w.relation(r),
                               w.entity(ents[static_cast<std::size_t>(h) + 1])});
      }
      golds[static_cast<std::size_t>(qi)] = w.entity(ents[static_cast<std::size_t>(H)]);
      if (has_shortcut[static_cast<std::size_t>(qi)]) {
        std::uniform_int_distribution<int> other(1, params.relations - 1);
        const int r_short = (first_rel + other(eng)) % params.relations;
        shortcut_local[static_cast<std::size_t>(qi)] = static_cast<int>(shortcut_facts.size());
        shortcut_facts.push_back({w.entity(ents[0]), w.relation(r_short),
                                  w.entity(ents[static_cast<std::size_t>(H) + 1])});
      }
    }

    // Shortcuts take the lowest fact indices so they win retrieval ties.
    w.facts_ = shortcut_facts;
    w.facts_.insert(w.facts_.end(), chain_facts.begin(), chain_facts.end());
    const std::size_t offset = shortcut_facts.size();
    for (int qi = 0; qi < Q; ++qi) {
      Question q;
      q.id = qi;
      q.prompt_tokens = prompts[static_cast<std::size_t>(qi)];
      q.gold_answer = {golds[static_cast<std::size_t>(qi)]};
      for (std::size_t f : chain_local[static_cast<std::size_t>(qi)]) q.hop_chain.push_back(offset + f);
      if (shortcut_local[static_cast<std::size_t>(qi)] >= 0) {
        q.shortcut = static_cast<std::size_t>(shortcut_local[static_cast<std::size_t>(qi)]);
      }
      w.questions_.push_back(std::move(q));
    }
    w.index();
    if (well_formed(w)) return w;
  }
  throw Error(ErrorCode::InvalidParams, "could not generate a world satisfying the hop constraints");
}

std::vector<std::size_t> retrieve(std::span<const Token> query, int k, const World& w) {
  if (k < 1) throw Error(ErrorCode::InvalidParams, "retrieve needs k >= 1");
  auto in_query = [&](Token t) { return std::find(query.begin(), query.end(), t) != query.end(); };
  std::vector<std::pair<int, std::size_t>> scored;
  for (std::size_t i = 0; i < w.facts().size(); ++i) {
    const Fact& f = w.facts()[i];
    const int score = (in_query(f.subject) ? 1 : 0) + (in_query(f.relation) ? 1 : 0);
    if (score > 0) scored.emplace_back(-score, i);
  }
  std::sort(scored.begin(), scored.end());
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < scored.size() && out.size() < static_cast<std::size_t>(k); ++i) {
    out.push_back(scored[i].second);
  }
  return out;
}

int hop_distance(const World& w, const Question& q) {
  const Token start = q.prompt_tokens.front();
  const Token goal = q.gold_answer.front();
  std::vector<int> dist(w.entity_count(), -1);
  std::deque<Token> frontier{start};
  dist[static_cast<std::size_t>(start)] = 0;
  while (!frontier.empty()) {
    const Token u = frontier.front();
    frontier.pop_front();
    if (u == goal) return dist[static_cast<std::size_t>(u)];
    for (const Fact& f : w.facts()) {
      if (f.subject != u || dist[static_cast<std::size_t>(f.object)] >= 0) continue;
      dist[static_cast<std::size_t>(f.object)] = dist[static_cast<std::size_t>(u)] + 1;
      frontier.push_back(f.object);
    }
  }
  return -1;
}

// ---------------------------------------------------------------------------
// World text form

namespace {

constexpr const char* kWorldMagic = "rexsim-world";
constexpr int kWorldVersion = 1;

std::string hex(double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", x);
  return buf;
}

double unhex(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || end != s.c_str() + s.size()) throw Error(ErrorCode::ParseError, "bad number '" + s + "'");
  return v;
}

template <typename T>
void write_list(std::ostream& out, const std::vector<T>& xs) {
  out << xs.size();
  for (const auto& x : xs) out << ' ' << x;
}

template <typename T>
std::vector<T> read_list(std::istream& in) {
  std::size_t n = 0;
  if (!(in >> n)) throw Error(ErrorCode::ParseError, "truncated world list");
  std::vector<T> xs(n);
  for (auto& x : xs) {
    if (!(in >> x)) throw Error(ErrorCode::ParseError, "truncated world list");
  }
  return xs;
}

std::vector<double> prior_fields(const PriorParams& p) {
  return {p.noise,        p.idle_search,  p.idle_think,   p.idle_answer,       p.info_answer,
          p.info_search,  p.info_think,   p.think_search, p.think_answer,      p.think_close,
          p.think_word,   p.copy_anchor,  p.search_close, p.relation_careless, p.relation_reflected,
          p.answer_close};
}

PriorParams prior_from(const std::vector<double>& v) {
  if (v.size() != 16) throw Error(ErrorCode::ParseError, "prior needs 16 fields");
  PriorParams p;
  double* fields[] = {&p.noise,        &p.idle_search,  &p.idle_think,   &p.idle_answer,
                      &p.info_answer,  &p.info_search,  &p.info_think,   &p.think_search,
                      &p.think_answer, &p.think_close,  &p.think_word,   &p.copy_anchor,
                      &p.search_close, &p.relation_careless, &p.relation_reflected,
                      &p.answer_close};
  for (std::size_t i = 0; i < 16; ++i) *fields[i] = v[i];
  return p;
}

}  // namespace

void write_world(std::ostream& out, const World& w) {
  const auto& p = w.params();
  out << kWorldMagic << ' ' << kWorldVersion << '\n';
  out << "seed " << w.seed() << '\n';
  out << "params " << p.questions << ' ' << p.hop_depth << ' ' << p.entities << ' ' << p.relations
      << ' ' << p.think_words << ' ' << hex(p.distractor_rate) << ' ' << p.retrieve_k << ' '
      << p.context_order << '\n';
  out << "prior";
  for (double x : prior_fields(p.prior)) out << ' ' << hex(x);
  out << '\n';
  out << "facts " << w.facts().size() << '\n';
  for (const auto& f : w.facts()) out << f.subject << ' ' << f.relation << ' ' << f.object << '\n';
  out << "questions " << w.questions().size() << '\n';
  for (const auto& q : w.questions()) {
    out << q.id << ' ';
    write_list(out, q.prompt_tokens);
    out << ' ';
    write_list(out, q.gold_answer);
    out << ' ';
    write_list(out, q.hop_chain);
    out << ' ' << (q.shortcut ? static_cast<long long>(*q.shortcut) : -1LL) << '\n';
  }
}

World read_world(std::istream& in) {
  auto expect = [&](const char* word) {
    std::string got;
    if (!(in >> got) || got != word) {
      throw Error(ErrorCode::ParseError, std::string("expected '") + word + "' in world file");
    }
  };
  expect(kWorldMagic);
  int version = 0;
  if (!(in >> version) || version != kWorldVersion) {
    throw Error(ErrorCode::ParseError, "unsupported world version");
  }
  World w;
  expect("seed");
  in >> w.seed_;
  expect("params");
  std::string rate;
  auto& p = w.params_;
  in >> p.questions >> p.hop_depth >> p.entities >> p.relations >> p.think_words >> rate >>
      p.retrieve_k >> p.context_order;
  if (!in) throw Error(ErrorCode::ParseError, "bad world params");
  p.distractor_rate = unhex(rate);
  expect("prior");
  std::vector<double> prior;
  for (int i = 0; i < 16; ++i) {
    std::string x;
    if (!(in >> x)) throw Error(ErrorCode::ParseError, "truncated prior");
    prior.push_back(unhex(x));
  }
  p.prior = prior_from(prior);
  validate(p, p.entities);
  w.entity_count_ = p.entities;
  const int limit = p.entities + p.relations;
  expect("facts");
  std::size_t nf = 0;
  in >> nf;
  w.facts_.resize(nf);
  for (auto& f : w.facts_) {
    if (!(in >> f.subject >> f.relation >> f.object)) throw Error(ErrorCode::ParseError, "truncated facts");
    if (!w.is_entity(f.subject) || !w.is_entity(f.object) || f.relation < p.entities ||
        f.relation >= limit) {
      throw Error(ErrorCode::ParseError, "fact token out of range");
    }
  }
  expect("questions");
  std::size_t nq = 0;
  in >> nq;
  for (std::size_t i = 0; i < nq; ++i) {
    Question q;
    long long shortcut = -1;
    in >> q.id;
    q.prompt_tokens = read_list<Token>(in);
    q.gold_answer = read_list<Token>(in);
    q.hop_chain = read_list<std::size_t>(in);
    if (!(in >> shortcut)) throw Error(ErrorCode::ParseError, "truncated question");
    if (q.prompt_tokens.empty() || !w.is_entity(q.prompt_tokens.front()) || q.gold_answer.empty()) {
      throw Error(ErrorCode::ParseError, "malformed question");
    }
    for (std::size_t f : q.hop_chain) {
      if (f >= nf) throw Error(ErrorCode::ParseError, "hop chain index out of range");
    }
    if (shortcut >= 0) {
      if (static_cast<std::size_t>(shortcut) >= nf) throw Error(ErrorCode::ParseError, "shortcut out of range");
      q.shortcut = static_cast<std::size_t>(shortcut);
    }
    w.questions_.push_back(std::move(q));
  }
  w.index();
  return w;
}

bool operator==(const World& a, const World& b) {
  return a.params_ == b.params_ && a.seed_ == b.seed_ && a.facts_ == b.facts_ &&
         a.questions_ == b.questions_;
}

void write_fact_tsv(std::ostream& out, const World& w) {
  std::vector<std::string> role(w.facts().size(), "filler");
  for (const auto& q : w.questions()) {
    for (std::size_t h = 0; h < q.hop_chain.size(); ++h) {
      role[q.hop_chain[h]] = "chain:" + std::to_string(q.id) + ":" + std::to_string(h);
    }
    if (q.shortcut) role[*q.shortcut] = "shortcut:" + std::to_string(q.id);
  }
  out << "index\tsubject\trelation\tobject\trole\n";
  for (std::size_t i = 0; i < w.facts().size(); ++i) {
    const Fact& f = w.facts()[i];
    out << i << '\t' << f.subject << '\t' << f.relation << '\t' << f.object << '\t' << role[i] << '\n';
  }
}

// ---------------------------------------------------------------------------
// ChainEnv

ChainEnv::ChainEnv(const ChainParams& params) : params_(params), vocab_(params.vocab > 0 ? static_cast<std::size_t>(params.vocab) : 1) {
  if (params.vocab < 1) throw Error(ErrorCode::InvalidParams, "chain vocab must be >= 1");
  if (params.horizon < 1) throw Error(ErrorCode::InvalidParams, "chain horizon must be >= 1");
  if (params.answer_marker < -1 || params.answer_marker >= params.vocab) {
    throw Error(ErrorCode::InvalidParams, "answer marker out of range");
  }
  if (params.target < 0 || params.target >= params.vocab) {
    throw Error(ErrorCode::InvalidParams, "reward target out of range");
  }
  check_order(params.context_order);
}

EpisodeState ChainEnv::begin(QuestionId q, const Budget& budget) const {
  if (q != 0) throw Error(ErrorCode::InvalidParams, "chain environment has a single question");
  check_budget(budget);
  EpisodeState s;
  s.budget = budget;
  return s;
}

void ChainEnv::advance(EpisodeState& s, Token t, std::vector<Token>&) const {
  if (s.done) throw Error(ErrorCode::InvalidParams, "advance after episode end");
  ++s.tokens_used;
  push_recent(s.context, t, params_.context_order);
  if (s.context.kind == protocol::Kind::InAnswer) {
    s.answer = std::vector<Token>{t};
    s.done = true;
    s.context.kind = protocol::Kind::Done;
  } else if (t == params_.answer_marker) {
    s.context.kind = protocol::Kind::InAnswer;
  }
  if (s.tokens_used >= s.budget.max_tokens) s.done = true;
}

double ChainEnv::reward(const EpisodeState& s) const {
  switch (params_.rule) {
    case ChainReward::AnswerEquals:
      return s.answer && s.answer->front() == params_.target ? 1.0 : 0.0;
    case ChainReward::LastEquals:
      return s.tokens_used > 0 && s.context.recent[0] == params_.target ? 1.0 : 0.0;
    case ChainReward::Always: return 1.0;
    case ChainReward::Never: return 0.0;
  }
  return 0.0;
}

std::optional<SplicePoint> ChainEnv::splice_point(QuestionId, std::span<const Token> tokens,
                                                  const Budget&) const {
  if (params_.answer_marker < 0) return std::nullopt;
  const auto it = std::find(tokens.begin(), tokens.end(), params_.answer_marker);
  if (it == tokens.end()) return std::nullopt;
  return SplicePoint{static_cast<std::size_t>(it - tokens.begin()), false};
}

void ChainEnv::base_logits(const ContextState& c, std::span<double> out) const {
  if (params_.prior_scale == 0.0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  const auto ctx = stream_key({params_.prior_seed, static_cast<std::uint64_t>(c.kind),
                               static_cast<std::uint64_t>(static_cast<std::int64_t>(c.recent[0]))});
  for (std::size_t a = 0; a < out.size(); ++a) {
    const double u = static_cast<double>(splitmix64(ctx ^ splitmix64(a)) >> 11) * 0x1.0p-53;
    out[a] = params_.prior_scale * (2.0 * u - 1.0);
  }
}

}  // namespace rexsim
