#pragma once

// Environments: the synthetic multi-hop retrieval World used for training and
// the tiny ChainEnv used by the exhaustive oracle. Both expose the same
// token-level transition interface so episode drivers, samplers and the oracle
// are written once.

#include <array>
#include <compare>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "rexsim/core.hpp"
#include "rexsim/protocol.hpp"
#include "rexsim/rng.hpp"

namespace rexsim {

inline constexpr std::size_t kMaxContextOrder = 3;

struct Budget {
  int max_turns = 5;
  int max_tokens = 48;  // policy-emitted tokens; injected tokens are free
};

/// Tabular policy key. `recent` holds the last n emitted or injected tokens,
/// most recent first, padded with -1 (the start symbol).
struct ContextState {
  protocol::Kind kind = protocol::Kind::Idle;
  std::uint8_t flags = 0;
  Token anchor = -1;
  std::array<Token, kMaxContextOrder> recent{-1, -1, -1};

  static constexpr std::uint8_t kReflected = 1;
  bool reflected() const noexcept { return (flags & kReflected) != 0; }

  friend auto operator<=>(const ContextState&, const ContextState&) = default;
};

std::string format_context(const ContextState& c);

struct EpisodeState {
  QuestionId question = 0;
  Budget budget;
  protocol::State proto;
  ContextState context;
  int tokens_used = 0;
  bool done = false;
  std::optional<protocol::Fault> fault;
  std::vector<Token> block;  // content of the block currently open
  std::optional<std::vector<Token>> answer;
};

/// Where a failed rollout is cut before splicing a prompt.
struct SplicePoint {
  std::size_t index = 0;
  bool fallback = false;  // no answer marker; cut at the last block boundary
};

class Environment {
 public:
  virtual ~Environment() = default;

  virtual const Vocab& vocab() const = 0;
  /// Policy rows span token ids [0, action_count()).
  virtual std::size_t action_count() const = 0;
  virtual std::size_t question_count() const = 0;
  virtual int context_order() const = 0;

  virtual EpisodeState begin(QuestionId q, const Budget& budget) const = 0;
  /// Feeds one policy-emitted token. Tokens the environment injects in
  /// response (retrieved Information blocks) are appended to `injected` and
  /// already folded into the state.
  virtual void advance(EpisodeState& s, Token t, std::vector<Token>& injected) const = 0;
  virtual double reward(const EpisodeState& s) const = 0;
  virtual std::optional<SplicePoint> splice_point(QuestionId q, std::span<const Token> tokens,
                                                  const Budget& budget) const = 0;
  /// Pretrained logits for a context; they also define the reference policy.
  virtual void base_logits(const ContextState& c, std::span<double> out) const = 0;
};

class TokenPolicy {
 public:
  virtual ~TokenPolicy() = default;
  /// Writes a normalized distribution over the environment's actions.
  virtual void distribution(const ContextState& c, std::span<double> probs) const = 0;
};

/// Per-token replay of a recorded trajectory.
struct ReplayStep {
  ContextState context;
  bool injected = false;
};

struct Replay {
  std::vector<ReplayStep> steps;
  EpisodeState final_state;
};

/// Re-derives the context of every token. Throws ContextReplayMismatch when
/// the tokens could not have come from this environment (wrong injected
/// content, tokens after termination, out-of-range ids).
Replay replay(const Environment& env, QuestionId q, std::span<const Token> tokens,
              const Budget& budget);

/// Samples tokens from `policy` until the episode terminates, appending to
/// `t` (tokens and behavior log-probabilities; segments are the caller's).
void continue_episode(const Environment& env, const TokenPolicy& policy, EpisodeState& s,
                      Trajectory& t, Rng& rng);

/// One on-policy episode with a single Plain segment.
Trajectory run_episode(const Environment& env, const TokenPolicy& policy, QuestionId q,
                       const Budget& budget, Rng& rng);

/// 1 iff the sequences are identical; an absent answer scores 0.
double reward_em(const std::optional<std::vector<Token>>& pred, std::span<const Token> gold);

// ---------------------------------------------------------------------------
// Multi-hop world

struct Fact {
  Token subject = 0;
  Token relation = 0;
  Token object = 0;

  friend bool operator==(const Fact&, const Fact&) = default;
};

struct Question {
  QuestionId id = 0;
  std::vector<Token> prompt_tokens;  // subject followed by the relation chain
  std::vector<Token> gold_answer;
  std::vector<std::size_t> hop_chain;          // fact indices, in hop order
  std::optional<std::size_t> shortcut;         // dead-end fact index

  friend bool operator==(const Question&, const Question&) = default;
};

/// Logit levels of the pretrained prior. Unlisted tokens get `noise`.
struct PriorParams {
  double noise = -7.0;
  double idle_search = 2.0;
  double idle_think = -3.0;
  double idle_answer = 0.0;
  double info_answer = 2.0;
  double info_search = 0.0;
  double info_think = -2.0;
  double think_search = 2.0;
  double think_answer = 0.0;
  double think_close = 1.5;
  double think_word = 0.0;
  double copy_anchor = 4.0;
  double search_close = 3.0;
  double relation_careless = -2.0;
  double relation_reflected = 3.0;
  double answer_close = 4.0;

  friend bool operator==(const PriorParams&, const PriorParams&) = default;
};

struct WorldParams {
  int questions = 30;
  int hop_depth = 2;
  int entities = 0;  // 0: questions * (hop_depth + 2)
  int relations = 6;
  int think_words = 4;
  double distractor_rate = 0.8;
  int retrieve_k = 1;
  int context_order = 1;
  PriorParams prior;

  friend bool operator==(const WorldParams&, const WorldParams&) = default;
};

class World final : public Environment {
 public:
  const Vocab& vocab() const override { return vocab_; }
  std::size_t action_count() const override { return vocab_.total(); }
  std::size_t question_count() const override { return questions_.size(); }
  int context_order() const override { return params_.context_order; }

  EpisodeState begin(QuestionId q, const Budget& budget) const override;
  void advance(EpisodeState& s, Token t, std::vector<Token>& injected) const override;
  double reward(const EpisodeState& s) const override;
  std::optional<SplicePoint> splice_point(QuestionId q, std::span<const Token> tokens,
                                          const Budget& budget) const override;
  void base_logits(const ContextState& c, std::span<double> out) const override;

  const WorldParams& params() const noexcept { return params_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::vector<Fact>& facts() const noexcept { return facts_; }
  const std::vector<Question>& questions() const noexcept { return questions_; }
  std::size_t entity_count() const noexcept { return static_cast<std::size_t>(entity_count_); }
  Token entity(int i) const noexcept { return static_cast<Token>(i); }
  Token relation(int i) const noexcept { return static_cast<Token>(entity_count_ + i); }
  Token think_word(int i) const noexcept {
    return static_cast<Token>(entity_count_ + params_.relations + i);
  }
  bool is_entity(Token t) const noexcept { return t >= 0 && t < entity_count_; }
  bool is_relation(Token t) const noexcept {
    return t >= entity_count_ && t < entity_count_ + params_.relations;
  }
  /// Information block for a query, markers included.
  std::vector<Token> information(std::span<const Token> query) const;

  friend World generate_world(std::uint64_t seed, const WorldParams& params);
  friend World read_world(std::istream& in);
  friend bool operator==(const World& a, const World& b);

 private:
  World() : vocab_(1) {}
  void index();

  WorldParams params_;
  std::uint64_t seed_ = 0;
  int entity_count_ = 0;
  Vocab vocab_;
  std::vector<Fact> facts_;
  std::vector<Question> questions_;
  std::vector<std::vector<Token>> chain_relations_;  // per entity: relations of chain facts
};

/// Deterministic for a fixed seed. Throws InvalidParams.
World generate_world(std::uint64_t seed, const WorldParams& params);

/// Up to k fact indices whose subject or relation occurs in the query, ranked
/// by match count, then by lower index.
std::vector<std::size_t> retrieve(std::span<const Token> query, int k, const World& w);

/// Exact minimum number of retrievals from a question's subject to its gold
/// answer over the fact graph (breadth-first walk); -1 if unreachable.
int hop_distance(const World& w, const Question& q);

/// Line-based text form; bit-exact round trip.
void write_world(std::ostream& out, const World& w);
World read_world(std::istream& in);
/// Fact table as TSV with a header row.
void write_fact_tsv(std::ostream& out, const World& w);

// ---------------------------------------------------------------------------
// Tiny chain environment for exhaustive enumeration

enum class ChainReward : std::uint8_t { AnswerEquals, LastEquals, Always, Never };

struct ChainParams {
  int vocab = 2;             // action count, no protocol markers
  int horizon = 1;           // tokens per episode
  int answer_marker = -1;    // token that opens the one-token answer; -1 to disable
  ChainReward rule = ChainReward::LastEquals;
  Token target = 0;
  double prior_scale = 0.0;  // 0: uniform prior
  std::uint64_t prior_seed = 0;
  int context_order = 1;
};

/// Each step the policy emits a token. With an answer marker, the token after
/// the marker is the answer and ends the episode; otherwise the episode runs
/// for the full horizon. Probes splice at the marker.
class ChainEnv final : public Environment {
 public:
  explicit ChainEnv(const ChainParams& params);

  const Vocab& vocab() const override { return vocab_; }
  std::size_t action_count() const override { return static_cast<std::size_t>(params_.vocab); }
  std::size_t question_count() const override { return 1; }
  int context_order() const override { return params_.context_order; }

  EpisodeState begin(QuestionId q, const Budget& budget) const override;
  void advance(EpisodeState& s, Token t, std::vector<Token>& injected) const override;
  double reward(const EpisodeState& s) const override;
  std::optional<SplicePoint> splice_point(QuestionId q, std::span<const Token> tokens,
                                          const Budget& budget) const override;
  void base_logits(const ContextState& c, std::span<double> out) const override;

  const ChainParams& params() const noexcept { return params_; }
  Budget budget() const noexcept { return {0, params_.horizon}; }

 private:
  ChainParams params_;
  Vocab vocab_;
};

}  // namespace rexsim
