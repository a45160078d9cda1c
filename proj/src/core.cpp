#include "rexsim/core.hpp"

#include <atomic>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>

namespace rexsim {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidParams: return "InvalidParams";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ContextReplayMismatch: return "ContextReplayMismatch";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::NonFiniteObjective: return "NonFiniteObjective";
    case ErrorCode::DegenerateDensity: return "DegenerateDensity";
    case ErrorCode::ZeroFailureRate: return "ZeroFailureRate";
    case ErrorCode::NoAnswerBlock: return "NoAnswerBlock";
    case ErrorCode::NoDiscordantPairs: return "NoDiscordantPairs";
    case ErrorCode::InstanceTooLarge: return "InstanceTooLarge";
    case ErrorCode::UnseenPrefix: return "UnseenPrefix";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

Vocab::Vocab(std::size_t ordinary_size) : size_(ordinary_size) {
  if (ordinary_size == 0) {
    throw Error(ErrorCode::InvalidParams, "vocab needs at least one ordinary token");
  }
}

std::optional<Marker> Vocab::marker_of(Token t) const noexcept {
  if (!is_marker(t)) return std::nullopt;
  return static_cast<Marker>(static_cast<std::size_t>(t) - size_);
}

std::string_view to_string(SegmentKind kind) {
  switch (kind) {
    case SegmentKind::Plain: return "plain";
    case SegmentKind::Origin: return "origin";
    case SegmentKind::Prompt: return "prompt";
    case SegmentKind::Probe: return "probe";
  }
  return "plain";
}

std::string_view to_string(Source source) {
  return source == Source::OnPolicy ? "onpolicy" : "probe";
}

SegmentKind Trajectory::kind_at(std::size_t index) const {
  for (const auto& s : segments) {
    if (index >= s.start && index < s.end) return s.kind;
  }
  throw Error(ErrorCode::InvalidParams, "token index outside every segment");
}

std::size_t Group::on_policy_count() const noexcept {
  std::size_t n = 0;
  for (const auto& t : trajectories) n += t.source == Source::OnPolicy ? 1 : 0;
  return n;
}

namespace {

Diagnostic diag(std::string msg, std::size_t index) {
  return Diagnostic{std::move(msg) + " at index " + std::to_string(index), index};
}

}  // namespace

std::optional<Diagnostic> validate_trajectory(const Trajectory& t, const Vocab& v) {
  const std::size_t n = t.tokens.size();
  if (t.behavior_logprobs.size() != n) {
    return diag("behavior_logprobs length mismatch", t.behavior_logprobs.size());
  }
  if (t.reward != 0.0 && t.reward != 1.0) return diag("reward outside {0,1}", 0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!v.contains(t.tokens[i])) return diag("token id out of range", i);
  }

  std::size_t cursor = 0;
  for (const auto& s : t.segments) {
    if (s.end < s.start) return diag("segment end before start", s.start);
    if (s.start < cursor) return diag("segment overlap", s.start);
    if (s.start > cursor) return diag("segment gap", cursor);
    cursor = s.end;
  }
  if (cursor != n) {
    return cursor > n ? diag("segment past end", n) : diag("segment gap", cursor);
  }

  if (t.source == Source::OnPolicy) {
    for (const auto& s : t.segments) {
      if (s.kind != SegmentKind::Plain) return diag("non-Plain segment in on-policy trajectory", s.start);
    }
    return std::nullopt;
  }

  constexpr std::array<SegmentKind, 3> expected{SegmentKind::Origin, SegmentKind::Prompt,
                                                SegmentKind::Probe};
  std::size_t k = 0;
  for (const auto& s : t.segments) {
    if (s.kind == SegmentKind::Plain) return diag("Plain segment in probe trajectory", s.start);
    if (k < expected.size() && s.kind == expected[k]) {
      ++k;
      continue;
    }
    if (k < expected.size()) {
      return diag("missing " + std::string(k == 0 ? "Origin" : k == 1 ? "Prompt" : "Probe") +
                      " segment",
                  s.start);
    }
    return diag("extra " + std::string(to_string(s.kind)) + " segment", s.start);
  }
  if (k < expected.size()) {
    return diag("missing " + std::string(k == 0 ? "Origin" : k == 1 ? "Prompt" : "Probe") +
                    " segment",
                n);
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Dump format

namespace {

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

template <typename Int>
Int parse_int(std::string_view s) {
  Int value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw Error(ErrorCode::ParseError, "bad integer '" + std::string(s) + "'");
  }
  return value;
}

double parse_double(std::string_view s) {
  std::string buf(s);
  char* end = nullptr;
  double v = std::strtod(buf.c_str(), &end);
  if (buf.empty() || end != buf.c_str() + buf.size()) {
    throw Error(ErrorCode::ParseError, "bad number '" + buf + "'");
  }
  return v;
}

SegmentKind parse_kind(std::string_view s) {
  if (s == "plain") return SegmentKind::Plain;
  if (s == "origin") return SegmentKind::Origin;
  if (s == "prompt") return SegmentKind::Prompt;
  if (s == "probe") return SegmentKind::Probe;
  throw Error(ErrorCode::ParseError, "unknown segment kind '" + std::string(s) + "'");
}

std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

}  // namespace

std::string encode_trajectory(const Trajectory& t) {
  std::ostringstream os;
  os << t.question_id << '\t' << to_string(t.source) << '\t' << (t.reward != 0.0 ? 1 : 0) << '\t';
  for (std::size_t i = 0; i < t.tokens.size(); ++i) os << (i ? " " : "") << t.tokens[i];
  os << '\t';
  for (std::size_t i = 0; i < t.segments.size(); ++i) {
    const auto& s = t.segments[i];
    os << (i ? " " : "") << to_string(s.kind) << ':' << s.start << ':' << s.end;
  }
  os << '\t';
  for (std::size_t i = 0; i < t.behavior_logprobs.size(); ++i) {
    os << (i ? " " : "") << hex_double(t.behavior_logprobs[i]);
  }
  os << '\t' << t.rollout_index;
  return os.str();
}

Trajectory decode_trajectory(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  auto fields = split(line, '\t');
  if (fields.size() < 5 || fields.size() > 7) {
    throw Error(ErrorCode::ParseError, "expected 5 to 7 tab-separated fields");
  }
  Trajectory t;
  t.question_id = parse_int<QuestionId>(fields[0]);
  if (fields[1] == "onpolicy") {
    t.source = Source::OnPolicy;
  } else if (fields[1] == "probe") {
    t.source = Source::Probe;
  } else {
    throw Error(ErrorCode::ParseError, "unknown source '" + std::string(fields[1]) + "'");
  }
  t.reward = parse_double(fields[2]);
  if (!fields[3].empty()) {
    for (auto tok : split(fields[3], ' ')) t.tokens.push_back(parse_int<Token>(tok));
  }
  if (!fields[4].empty()) {
    for (auto seg : split(fields[4], ' ')) {
      auto parts = split(seg, ':');
      if (parts.size() != 3) throw Error(ErrorCode::ParseError, "segment needs kind:start:end");
      t.segments.push_back(Segment{parse_kind(parts[0]), parse_int<std::size_t>(parts[1]),
                                   parse_int<std::size_t>(parts[2])});
    }
  }
  if (fields.size() >= 6 && !fields[5].empty()) {
    for (auto lp : split(fields[5], ' ')) t.behavior_logprobs.push_back(parse_double(lp));
  } else if (fields.size() < 6) {
    t.behavior_logprobs.assign(t.tokens.size(), 0.0);
  }
  if (fields.size() == 7) t.rollout_index = parse_int<std::int32_t>(fields[6]);
  return t;
}

std::vector<Trajectory> read_dump(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path);
  std::vector<Trajectory> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    out.push_back(decode_trajectory(line));
  }
  return out;
}

void write_dump(const std::string& path, const std::vector<Trajectory>& trajectories) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  for (const auto& t : trajectories) out << encode_trajectory(t) << '\n';
}

namespace debug {
namespace {
#ifdef NDEBUG
std::atomic<bool> g_checks{false};
#else
std::atomic<bool> g_checks{true};
#endif
}  // namespace

void set_partition_checks(bool enabled) noexcept { g_checks.store(enabled); }
bool partition_checks() noexcept { return g_checks.load(); }

void check_partition(const Trajectory& t) {
  if (!partition_checks()) return;
  std::size_t cursor = 0;
  for (const auto& s : t.segments) {
    if (s.start != cursor || s.end < s.start) {
      throw Error(ErrorCode::InvalidParams, "segment partition violated at index " +
                                                std::to_string(s.start));
    }
    cursor = s.end;
  }
  if (cursor != t.tokens.size() || t.behavior_logprobs.size() != t.tokens.size()) {
    throw Error(ErrorCode::InvalidParams, "segment partition does not cover trajectory");
  }
}
}  // namespace debug

}  // namespace rexsim
