#include <algorithm>
#include <set>
#include <sstream>

#include "doctest.h"
#include "rexsim/env.hpp"
#include "rexsim/policy.hpp"
#include "rexsim/sampling.hpp"
#include "rexsim/stats.hpp"

using namespace rexsim;

namespace {

WorldParams small_params() {
  WorldParams p;
  p.questions = 4;
  p.hop_depth = 2;
  p.entities = 10;
  return p;
}

std::string serialize(const World& w) {
  std::ostringstream os;
  write_world(os, w);
  return os.str();
}

// Emits a fixed token list with probability 1, one entry per call.
class Script final : public TokenPolicy {
 public:
  Script(std::size_t width, std::vector<Token> tokens) : width_(width), tokens_(std::move(tokens)) {}
  void distribution(const ContextState&, std::span<double> probs) const override {
    std::fill(probs.begin(), probs.end(), 0.0);
    const Token t = next_ < tokens_.size() ? tokens_[next_] : 0;
    probs[static_cast<std::size_t>(t)] = 1.0;
    ++next_;
  }

 private:
  std::size_t width_;
  std::vector<Token> tokens_;
  mutable std::size_t next_ = 0;
};

std::vector<Token> gold_script(const World& w, const Question& q) {
  const Vocab& v = w.vocab();
  std::vector<Token> s;
  Token anchor = q.prompt_tokens.front();
  for (std::size_t h = 0; h < q.hop_chain.size(); ++h) {
    s.insert(s.end(), {v.marker(Marker::SearchOpen), anchor, q.prompt_tokens[h + 1],
                       v.marker(Marker::SearchClose)});
    anchor = w.facts()[q.hop_chain[h]].object;
  }
  s.insert(s.end(), {v.marker(Marker::AnswerOpen), anchor, v.marker(Marker::AnswerClose)});
  return s;
}

}  // namespace

TEST_CASE("generate_world is deterministic") {
  const World a = generate_world(7, small_params());
  const World b = generate_world(7, small_params());
  CHECK(serialize(a) == serialize(b));
  CHECK(a == b);
  CHECK(serialize(generate_world(8, small_params())) != serialize(a));
}

TEST_CASE("generate_world rejects bad parameters") {
  WorldParams p = small_params();
  p.hop_depth = 0;
  try {
    generate_world(7, p);
    FAIL("expected InvalidParams");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::InvalidParams);
  }
  p = small_params();
  p.entities = 3;
  CHECK_THROWS_AS(generate_world(7, p), Error);
  p = small_params();
  p.distractor_rate = 1.5;
  CHECK_THROWS_AS(generate_world(7, p), Error);
}

TEST_CASE("every gold answer is exactly hop_depth retrievals away") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const World w = generate_world(seed, small_params());
    for (const auto& q : w.questions()) {
      // Breadth-first layers over the fact graph, written out independently.
      std::set<Token> layer{q.prompt_tokens.front()};
      std::set<Token> seen = layer;
      int found = -1;
      for (int depth = 1; depth <= 4 && found < 0; ++depth) {
        std::set<Token> next;
        for (const Fact& f : w.facts()) {
          if (layer.count(f.subject) && !seen.count(f.object)) next.insert(f.object);
        }
        if (next.count(q.gold_answer.front())) found = depth;
        seen.insert(next.begin(), next.end());
        layer = next;
      }
      CHECK(found == 2);
      CHECK(hop_distance(w, q) == 2);
      CHECK(q.hop_chain.size() == 2);
      CHECK_FALSE(q.gold_answer.empty());
    }
  }
}

TEST_CASE("distractor facts never hit a gold answer") {
  WorldParams p = small_params();
  p.distractor_rate = 1.0;
  const World w = generate_world(3, p);
  std::set<Token> golds;
  for (const auto& q : w.questions()) golds.insert(q.gold_answer.front());
  for (const auto& q : w.questions()) {
    REQUIRE(q.shortcut);
    CHECK_FALSE(golds.count(w.facts()[*q.shortcut].object));
  }
}

TEST_CASE("world text form round trips") {
  const World w = generate_world(11, small_params());
  std::istringstream in(serialize(w));
  CHECK(read_world(in) == w);
}

TEST_CASE("retrieve") {
  const World w = generate_world(5, small_params());
  REQUIRE(w.facts().size() > 3);

  SUBCASE("fact 3 is found from its own subject") {
    const Fact& f = w.facts()[3];
    const std::vector<Token> q{f.subject, f.relation};
    const auto hits = retrieve(q, 3, w);
    CHECK(std::find(hits.begin(), hits.end(), 3u) != hits.end());
    const auto all = retrieve(std::vector<Token>{f.subject}, static_cast<int>(w.facts().size()), w);
    CHECK(std::find(all.begin(), all.end(), 3u) != all.end());
  }
  SUBCASE("unknown tokens match nothing") {
    const Token think = w.think_word(0);
    CHECK(retrieve(std::vector<Token>{think}, 3, w).empty());
  }
  SUBCASE("ranking is match count then index") {
    Rng rng(stream_key({99}));
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<Token> q;
      const std::size_t n = 1 + rng.below(4);
      for (std::size_t i = 0; i < n; ++i) q.push_back(static_cast<Token>(rng.below(w.vocab().size())));
      const int k = 1 + static_cast<int>(rng.below(5));
      std::vector<std::pair<int, std::size_t>> expect;
      for (std::size_t i = 0; i < w.facts().size(); ++i) {
        const auto has = [&](Token t) { return std::count(q.begin(), q.end(), t) > 0; };
        const int m = int(has(w.facts()[i].subject)) + int(has(w.facts()[i].relation));
        if (m > 0) expect.push_back({m, i});
      }
      std::stable_sort(expect.begin(), expect.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<std::size_t> top;
      for (std::size_t i = 0; i < expect.size() && top.size() < static_cast<std::size_t>(k); ++i) {
        top.push_back(expect[i].second);
      }
      CHECK(retrieve(q, k, w) == top);
    }
  }
  SUBCASE("k must be positive") { CHECK_THROWS_AS(retrieve(std::vector<Token>{0}, 0, w), Error); }
}

TEST_CASE("reward_em is strict sequence equality") {
  const std::vector<Token> gold{4, 2};
  CHECK(reward_em(std::vector<Token>{4, 2}, gold) == 1.0);
  CHECK(reward_em(std::vector<Token>{4, 2, 0}, gold) == 0.0);
  CHECK(reward_em(std::vector<Token>{4}, gold) == 0.0);
  CHECK(reward_em(std::nullopt, gold) == 0.0);
}

TEST_CASE("scripted episodes") {
  WorldParams p = small_params();
  p.distractor_rate = 1.0;
  const World w = generate_world(7, p);
  const Budget budget{5, 48};
  Rng rng(stream_key({1}));

  SUBCASE("following the gold chain earns reward 1") {
    for (const auto& q : w.questions()) {
      Script s(w.action_count(), gold_script(w, q));
      const Trajectory t = run_episode(w, s, q.id, budget, rng);
      CHECK(t.reward == 1.0);
      CHECK_FALSE(validate_trajectory(t, w.vocab()));
    }
  }
  SUBCASE("answering the distractor earns reward 0") {
    const Vocab& v = w.vocab();
    for (const auto& q : w.questions()) {
      const Token wrong = w.facts()[*q.shortcut].object;
      Script s(w.action_count(), {v.marker(Marker::AnswerOpen), wrong, v.marker(Marker::AnswerClose)});
      const Trajectory t = run_episode(w, s, q.id, budget, rng);
      CHECK(t.tokens.size() == 3);
      CHECK(t.reward == 0.0);
    }
  }
  SUBCASE("one-token budget ends after one token") {
    const auto& q = w.questions()[0];
    Script s(w.action_count(), gold_script(w, q));
    const Trajectory t = run_episode(w, s, q.id, Budget{5, 1}, rng);
    CHECK(t.tokens.size() == 1);
    CHECK(t.reward == 0.0);
  }
  SUBCASE("a search past the turn budget ends the episode") {
    const auto& q = w.questions()[0];
    Script s(w.action_count(), gold_script(w, q));
    const Trajectory t = run_episode(w, s, q.id, Budget{1, 48}, rng);
    CHECK(t.reward == 0.0);
    CHECK(t.tokens.back() == w.vocab().marker(Marker::SearchOpen));
  }
}

TEST_CASE("injected information tokens carry log-probability 0") {
  const World w = generate_world(7, WorldParams{});
  const Policy pi(w);
  const Budget budget{5, 48};
  std::size_t injected = 0;
  for (QuestionId q = 0; q < 10; ++q) {
    for (std::uint64_t i = 0; i < 5; ++i) {
      Rng rng(7, 0, static_cast<std::uint64_t>(q), StreamTag::Test, i);
      const Trajectory t = run_episode(w, pi, q, budget, rng);
      const Replay r = replay(w, q, t.tokens, budget);
      REQUIRE(r.steps.size() == t.size());
      for (std::size_t k = 0; k < t.size(); ++k) {
        if (r.steps[k].injected) {
          ++injected;
          CHECK(t.behavior_logprobs[k] == 0.0);
        } else {
          CHECK(t.behavior_logprobs[k] < 0.0);
        }
      }
    }
  }
  CHECK(injected > 0);
}

TEST_CASE("replay rejects tampered injected content") {
  const World w = generate_world(7, small_params());
  const auto& q = w.questions()[0];
  Script s(w.action_count(), gold_script(w, q));
  Rng rng(stream_key({3}));
  Trajectory t = run_episode(w, s, q.id, Budget{5, 48}, rng);
  t.tokens[5] = (t.tokens[5] + 1) % static_cast<Token>(w.vocab().size());
  try {
    replay(w, q.id, t.tokens, Budget{5, 48});
    FAIL("expected ContextReplayMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ContextReplayMismatch);
  }
}

TEST_CASE("salient shortcuts make most groups dead ends at initialization") {
  WorldParams p;
  p.distractor_rate = 1.0;
  const World w = generate_world(7, p);
  const Policy pi(w);
  std::vector<Group> groups;
  for (QuestionId q = 0; q < static_cast<QuestionId>(w.question_count()); ++q) {
    groups.push_back(rollout_group(w, pi, q, 5, Budget{5, 48}, StepKey{1, 0}));
  }
  CHECK(stats::dead_end_rate(groups) > 0.8);
}

TEST_CASE("fact table TSV has a header and one row per fact") {
  const World w = generate_world(7, small_params());
  std::ostringstream os;
  write_fact_tsv(os, w);
  std::istringstream in(os.str());
  std::string line;
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == w.facts().size() + 1);
}

TEST_CASE("chain environment") {
  const ChainEnv env(ChainParams{3, 3, 2, ChainReward::AnswerEquals, 1, 0.0, 0, 1});
  CHECK(env.budget().max_tokens == 3);
  CHECK_THROWS_AS(ChainEnv(ChainParams{0, 1}), Error);
  CHECK_THROWS_AS(ChainEnv(ChainParams{2, 1, 5}), Error);
  const auto sp = env.splice_point(0, std::vector<Token>{0, 2, 1}, env.budget());
  REQUIRE(sp);
  CHECK(sp->index == 1);
  CHECK_FALSE(env.splice_point(0, std::vector<Token>{0, 0, 0}, env.budget()));
}
