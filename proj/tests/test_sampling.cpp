#include <cmath>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "rexsim/sampling.hpp"
#include "rexsim/train.hpp"

using namespace rexsim;

namespace {

constexpr Token A = 0, B = 1, C = 2, D = 3;

// Replays a fixed token list from the start of every episode.
class Script final : public TokenPolicy {
 public:
  explicit Script(std::vector<Token> tokens) : tokens_(std::move(tokens)) {}
  void distribution(const ContextState& c, std::span<double> probs) const override {
    if (c.kind == protocol::Kind::Idle && c.recent[0] == -1) next_ = 0;
    std::fill(probs.begin(), probs.end(), 0.0);
    probs[static_cast<std::size_t>(next_ < tokens_.size() ? tokens_[next_] : 0)] = 1.0;
    ++next_;
  }

 private:
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

// Chain world where token 2 opens a one-token answer and the answer 1 wins.
const ChainEnv& chain() {
  static const ChainEnv env(ChainParams{3, 3, 2, ChainReward::AnswerEquals, 1, 0.0, 0, 1});
  return env;
}

Group chain_group(const std::vector<double>& rewards) {
  Group g;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Trajectory t;
    t.tokens = {2, rewards[i] > 0 ? Token{1} : Token{0}};
    t.behavior_logprobs = {std::log(1.0 / 3), std::log(1.0 / 3)};
    t.segments = {{SegmentKind::Plain, 0, 2}};
    t.reward = rewards[i];
    t.rollout_index = static_cast<std::int32_t>(i);
    g.trajectories.push_back(t);
  }
  return g;
}

}  // namespace

TEST_CASE("build_pmf follows prefix counts") {
  const PmfModel m = build_pmf(PromptPool({{A, B, C}, {A, B, D}}));
  CHECK(m.pmf(std::vector<Token>{A, B}, C) == 0.5);
  CHECK(m.pmf(std::vector<Token>{A, B}, D) == 0.5);
  CHECK(m.pmf(std::vector<Token>{A}, B) == 1.0);
  CHECK(m.first_token_mass(A) == 1.0);
  CHECK(m.first_token_mass(B) == 0.0);
  CHECK(m.prefix_counts().size() == 2);
  try {
    m.pmf(std::vector<Token>{B}, C);
    FAIL("expected UnseenPrefix");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnseenPrefix);
  }

  const PmfModel lone = build_pmf(PromptPool({{A, B}}));
  CHECK(lone.pmf(std::vector<Token>{A}, B) == 1.0);
  CHECK(lone.pmf(std::vector<Token>{A}, C) == 0.0);
}

TEST_CASE("pool prompts have positive mass along their own prefix chain") {
  const World w = generate_world(7, WorldParams{});
  const PromptPool pool = synthetic_pool(w, 30, 11);
  const PmfModel m = build_pmf(pool);
  const Token think = w.vocab().marker(Marker::ThinkOpen);
  for (const auto& k : pool.prompts()) {
    CHECK(k.front() == think);
    CHECK(m.first_token_mass(k.front()) > 0.0);
    for (std::size_t i = 1; i < k.size(); ++i) {
      CHECK(m.pmf(std::span<const Token>(k.data(), i), k[i]) > 0.0);
    }
  }
  std::stringstream buf;
  write_pool(buf, pool);
  CHECK(read_pool(buf) == pool.prompts());
}

TEST_CASE("prompt pool validation") {
  CHECK_THROWS_AS(PromptPool(std::vector<std::vector<Token>>{}), Error);
  CHECK_THROWS_AS(PromptPool(std::vector<std::vector<Token>>{{}}), Error);
  CHECK_THROWS_AS(PromptPool({{A, B}}, Token{C}), Error);
  CHECK_NOTHROW(PromptPool({{C, B}}, Token{C}));
}

TEST_CASE("rollout_group") {
  const World w = generate_world(7, WorldParams{});
  const Budget budget{5, 48};

  SUBCASE("five rollouts from the prior") {
    const Policy pi(w);
    const Group g = rollout_group(w, pi, 2, 5, budget, StepKey{1, 0});
    REQUIRE(g.trajectories.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
      const auto& t = g.trajectories[i];
      CHECK((t.reward == 0.0 || t.reward == 1.0));
      CHECK(t.source == Source::OnPolicy);
      CHECK(t.rollout_index == static_cast<std::int32_t>(i));
      REQUIRE(t.segments.size() == 1);
      CHECK(t.segments[0].kind == SegmentKind::Plain);
    }
    const Group again = rollout_group(w, pi, 2, 5, budget, StepKey{1, 0});
    CHECK(again.trajectories == g.trajectories);
  }
  SUBCASE("gold script wins every rollout") {
    const auto& q = w.questions()[4];
    const Script s(gold_script(w, q));
    const Group g = rollout_group(w, s, q.id, 3, budget, StepKey{1, 0});
    for (const auto& t : g.trajectories) CHECK(t.reward == 1.0);
  }
  SUBCASE("group of one") {
    const Policy pi(w);
    CHECK(rollout_group(w, pi, 0, 1, budget, StepKey{1, 0}).trajectories.size() == 1);
    CHECK_THROWS_AS(rollout_group(w, pi, 0, 0, budget, StepKey{1, 0}), Error);
  }
}

TEST_CASE("probe_resample on a chain world") {
  const Policy pi(chain());
  const PromptPool pool({{0}, {1, 0}});
  const Budget budget = chain().budget();

  SUBCASE("no failures, no probes") {
    const Group g = chain_group({1, 1, 1, 1, 1});
    for (std::uint64_t step = 0; step < 200; ++step) {
      CHECK(probe_resample(g, 1.0, pool, pi, budget, StepKey{3, step}).empty());
    }
  }
  SUBCASE("only the failed rollout is probed at p = 1") {
    const Group g = chain_group({0, 1});
    for (std::uint64_t step = 0; step < 50; ++step) {
      const auto probes = probe_resample(g, 1.0, pool, pi, budget, StepKey{3, step});
      REQUIRE(probes.size() == 1);
      CHECK(probes[0].rollout_index == 0);
    }
  }
  SUBCASE("expected probe count is p times the failure count") {
    const Group g = chain_group({0, 0, 0, 0, 0});
    const int groups = 10000;
    ProbeStats st;
    for (int step = 0; step < groups; ++step) {
      probe_resample(g, 0.2, pool, pi, budget, StepKey{4, static_cast<std::uint64_t>(step)}, &st);
    }
    CHECK(std::abs(static_cast<double>(st.attempted) / groups - 1.0) < 0.05);
  }
  SUBCASE("probes splice origin, prompt and continuation") {
    const Group g = chain_group({0, 0, 0});
    for (std::uint64_t step = 0; step < 100; ++step) {
      const auto probes = probe_resample(g, 1.0, pool, pi, budget, StepKey{5, step});
      CHECK(probes == probe_resample(g, 1.0, pool, pi, budget, StepKey{5, step}));
      for (const auto& t : probes) {
        CHECK_FALSE(validate_trajectory(t, chain().vocab()));
        REQUIRE(t.segments.size() == 3);
        const auto& origin = t.segments[0];
        const auto& prompt = t.segments[1];
        const auto& src = g.trajectories[static_cast<std::size_t>(t.rollout_index)].tokens;
        CHECK(origin.end <= src.size());
        CHECK(std::equal(t.tokens.begin(), t.tokens.begin() + static_cast<std::ptrdiff_t>(origin.end), src.begin()));
        const std::vector<Token> spliced(t.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.start),
                                         t.tokens.begin() + static_cast<std::ptrdiff_t>(prompt.end));
        CHECK((spliced == pool[0] || spliced == pool[1]));
      }
    }
  }
  SUBCASE("probability outside [0, 1]") {
    CHECK_THROWS_AS(probe_resample(chain_group({0}), 1.5, pool, pi, budget, StepKey{}), Error);
  }
}

TEST_CASE("probe origins end at the answer marker of a world rollout") {
  const World w = generate_world(7, WorldParams{});
  const Policy pi(w);
  const PromptPool pool = synthetic_pool(w, 30, 11);
  const Budget budget{5, 48};
  std::size_t checked = 0;
  for (QuestionId q = 0; q < 30; ++q) {
    const Group g = rollout_group(w, pi, q, 5, budget, StepKey{2, 0});
    for (const auto& t : probe_resample(g, 1.0, pool, pi, budget, StepKey{2, 0})) {
      const auto& src = g.trajectories[static_cast<std::size_t>(t.rollout_index)];
      CHECK(src.reward == 0.0);
      const std::size_t cut = t.segments[0].end;
      if (cut < src.size() && src.tokens[cut] == w.vocab().marker(Marker::AnswerOpen)) ++checked;
      CHECK(t.tokens[cut] == w.vocab().marker(Marker::ThinkOpen));
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("compute_z") {
  CHECK(compute_z(chain_group({0, 0, 1, 1, 1})) == doctest::Approx(0.4));
  CHECK(compute_z(chain_group({1, 1, 1})) == 0.0);
  CHECK(compute_z(chain_group({0, 0})) == 1.0);
  Group g = chain_group({0, 1});
  Trajectory probe = g.trajectories[0];
  probe.source = Source::Probe;
  probe.reward = 0.0;
  g.trajectories.push_back(probe);
  CHECK(compute_z(g) == 0.5);
}

TEST_CASE("shipped token pool matches the default synthetic pool") {
  const RunConfig c;
  const World w = build_world(c);
  std::ifstream in(std::string(REXSIM_SOURCE_DIR) + "/data/pool_synthetic.txt");
  REQUIRE(in);
  const auto shipped = read_pool(in);
  CHECK(shipped == synthetic_pool(w, c.pool_size, c.pool_seed, c.pool_max_words).prompts());
  CHECK_NOTHROW(PromptPool(shipped, w.vocab().marker(Marker::ThinkOpen)));
}
