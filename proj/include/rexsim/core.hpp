#pragma once

// Shared domain types: vocabulary, trajectories, groups, and the line-based
// trajectory dump format.

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace rexsim {

using Token = std::int32_t;
using QuestionId = std::int32_t;

/// Error classes raised by the library. Each carries a stable code so the CLI
/// and tests can branch on the class rather than on message text.
enum class ErrorCode {
  InvalidParams,
  ConfigError,
  ParseError,
  ContextReplayMismatch,
  NonFiniteGradient,
  NonFiniteObjective,
  DegenerateDensity,
  ZeroFailureRate,
  NoAnswerBlock,
  NoDiscordantPairs,
  InstanceTooLarge,
  UnseenPrefix,
  IoError,
};

std::string_view to_string(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

enum class Marker : std::uint8_t {
  ThinkOpen,
  ThinkClose,
  SearchOpen,
  SearchClose,
  InfoOpen,
  InfoClose,
  AnswerOpen,
  AnswerClose,
};
inline constexpr std::size_t kMarkerCount = 8;

/// Ordinary tokens occupy [0, size); the eight protocol markers are the
/// reserved ids [size, size + 8).
class Vocab {
 public:
  explicit Vocab(std::size_t ordinary_size);

  std::size_t size() const noexcept { return size_; }
  std::size_t total() const noexcept { return size_ + kMarkerCount; }
  Token marker(Marker m) const noexcept {
    return static_cast<Token>(size_ + static_cast<std::size_t>(m));
  }
  bool is_marker(Token t) const noexcept {
    return t >= static_cast<Token>(size_) && t < static_cast<Token>(total());
  }
  bool is_ordinary(Token t) const noexcept {
    return t >= 0 && t < static_cast<Token>(size_);
  }
  bool contains(Token t) const noexcept { return t >= 0 && t < static_cast<Token>(total()); }
  std::optional<Marker> marker_of(Token t) const noexcept;

 private:
  std::size_t size_;
};

enum class SegmentKind : std::uint8_t { Plain, Origin, Prompt, Probe };
enum class Source : std::uint8_t { OnPolicy, Probe };

std::string_view to_string(SegmentKind kind);
std::string_view to_string(Source source);

struct Segment {
  SegmentKind kind = SegmentKind::Plain;
  std::size_t start = 0;
  std::size_t end = 0;  // exclusive

  friend bool operator==(const Segment&, const Segment&) = default;
};

struct Trajectory {
  QuestionId question_id = 0;
  std::vector<Token> tokens;
  std::vector<Segment> segments;
  /// log pi_old(token | context) at sampling time; exactly 0 for injected
  /// Information tokens.
  std::vector<double> behavior_logprobs;
  double reward = 0.0;
  Source source = Source::OnPolicy;
  /// Index of the on-policy rollout this trajectory was sampled as, or was
  /// spliced from for probes.
  std::int32_t rollout_index = 0;

  std::size_t size() const noexcept { return tokens.size(); }
  SegmentKind kind_at(std::size_t index) const;

  friend bool operator==(const Trajectory&, const Trajectory&) = default;
};

struct Group {
  QuestionId question_id = 0;
  std::vector<Trajectory> trajectories;
  std::vector<double> advantages;

  std::size_t on_policy_count() const noexcept;
};

/// First violated trajectory invariant, or nullopt when the trajectory passes.
struct Diagnostic {
  std::string message;
  std::size_t index = 0;
};

std::optional<Diagnostic> validate_trajectory(const Trajectory& t, const Vocab& v);

// Trajectory dump: one record per line, tab-separated
//   question_id  source  reward  tokens  segments  [logprobs  [rollout]]
// Tokens are space-separated ids, segments are kind:start:end triples and
// logprobs are C99 hex floats so the round trip is bit-exact.
std::string encode_trajectory(const Trajectory& t);
Trajectory decode_trajectory(std::string_view line);

std::vector<Trajectory> read_dump(const std::string& path);
void write_dump(const std::string& path, const std::vector<Trajectory>& trajectories);

namespace debug {
/// When enabled, every trajectory produced by the sampler is passed through
/// validate_trajectory and a violation throws. Enabled by default in debug
/// builds.
void set_partition_checks(bool enabled) noexcept;
bool partition_checks() noexcept;
void check_partition(const Trajectory& t);
}  // namespace debug

}  // namespace rexsim
