#pragma once

// Structured search interaction protocol: think -> search -> information ->
// answer, with a search-turn budget. The incremental ProtocolMachine drives
// live episodes; parse() runs the same machine over a finished sequence.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "rexsim/core.hpp"

namespace rexsim::protocol {

enum class Kind : std::uint8_t {
  Idle,
  InThink,
  AwaitAction,
  InSearch,
  AwaitInformation,
  InInformation,
  InAnswer,
  Done,
};
inline constexpr std::size_t kKindCount = 8;

std::string_view to_string(Kind kind);

enum class Fault : std::uint8_t {
  UnbalancedMarker,
  OrderViolation,
  TurnBudgetExceeded,
  AnswerNotLast,
};
inline constexpr std::size_t kFaultCount = 4;

std::string_view to_string(Fault fault);

struct State {
  Kind kind = Kind::Idle;
  int turns_used = 0;

  friend bool operator==(const State&, const State&) = default;
};

/// What a fed token did to the machine.
enum class Event : std::uint8_t { Content, Filler, Opened, Closed, Rejected };

class Machine {
 public:
  Machine(const Vocab& vocab, int max_turns);
  /// Resumes from a previously observed state.
  Machine(const Vocab& vocab, int max_turns, State resume);

  /// Advances by one token. Returns the fault and leaves the state unchanged
  /// if the token is illegal here. Done is absorbing.
  std::optional<Fault> feed(Token t);
  /// Fault to report if the sequence ends now, if any.
  std::optional<Fault> finish() const;

  const State& state() const noexcept { return state_; }
  Event last_event() const noexcept { return last_event_; }
  int max_turns() const noexcept { return max_turns_; }
  const Vocab& vocab() const noexcept { return *vocab_; }

 private:
  const Vocab* vocab_;
  int max_turns_;
  State state_;
  Event last_event_ = Event::Filler;
};

enum class BlockKind : std::uint8_t { Think, Search, Information, Answer };

std::string_view to_string(BlockKind kind);

struct Block {
  BlockKind kind = BlockKind::Think;
  std::size_t start = 0;  // index of the opening marker
  std::size_t end = 0;    // one past the closing marker
  std::vector<Token> content;

  friend bool operator==(const Block&, const Block&) = default;
};

struct ParsedEpisode {
  std::vector<Block> blocks;
  /// Token span of the final answer content, [first, second).
  std::optional<std::pair<std::size_t, std::size_t>> answer_span;
  std::size_t filler_count = 0;
};

struct ParseFailure {
  Fault fault;
  std::size_t index;  // offending token, or the sequence length at end of input
};

using ParseResult = std::variant<ParsedEpisode, ParseFailure>;

/// Block decomposition of a token sequence. Never throws on malformed input;
/// every rejection carries exactly one fault. Empty input is a precondition
/// violation and throws InvalidParams.
ParseResult parse(std::span<const Token> tokens, const Vocab& vocab, int max_turns);

/// Index of the Answer opening marker. Throws NoAnswerBlock.
std::size_t truncation_point(const ParsedEpisode& episode);

/// Tokens for the given blocks, markers included.
std::vector<Token> render(std::span<const Block> blocks, const Vocab& vocab);

/// Largest index i such that tokens[0, i) is a sequence of complete blocks
/// ending between blocks (0 if there is none). Works on malformed or
/// truncated input by stopping at the first fault.
std::size_t last_block_boundary(std::span<const Token> tokens, const Vocab& vocab, int max_turns);

/// Thin text layer: whitespace-separated words plus the eight markers written
/// as <think>, </think>, <search>, ... Word ids are assigned in first-seen
/// order once the dictionary is frozen by vocab().
class TextCodec {
 public:
  TextCodec() = default;
  /// Builds a dictionary covering every word in `lines`.
  static TextCodec from_lines(std::span<const std::string> lines);

  Vocab vocab() const { return Vocab(words_.size()); }
  std::vector<Token> encode(std::string_view text) const;
  std::string decode(std::span<const Token> tokens) const;

 private:
  void add_words(std::string_view text);
  std::vector<std::string> words_;
  std::unordered_map<std::string, Token> ids_;
};

}  // namespace rexsim::protocol
