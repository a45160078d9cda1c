#include "rexsim/protocol.hpp"

#include <array>
#include <cctype>

namespace rexsim::protocol {

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::Idle: return "Idle";
    case Kind::InThink: return "InThink";
    case Kind::AwaitAction: return "AwaitAction";
    case Kind::InSearch: return "InSearch";
    case Kind::AwaitInformation: return "AwaitInformation";
    case Kind::InInformation: return "InInformation";
    case Kind::InAnswer: return "InAnswer";
    case Kind::Done: return "Done";
  }
  return "Idle";
}

std::string_view to_string(Fault fault) {
  switch (fault) {
    case Fault::UnbalancedMarker: return "UnbalancedMarker";
    case Fault::OrderViolation: return "OrderViolation";
    case Fault::TurnBudgetExceeded: return "TurnBudgetExceeded";
    case Fault::AnswerNotLast: return "AnswerNotLast";
  }
  return "UnbalancedMarker";
}

std::string_view to_string(BlockKind kind) {
  switch (kind) {
    case BlockKind::Think: return "Think";
    case BlockKind::Search: return "Search";
    case BlockKind::Information: return "Information";
    case BlockKind::Answer: return "Answer";
  }
  return "Think";
}

Machine::Machine(const Vocab& vocab, int max_turns) : vocab_(&vocab), max_turns_(max_turns) {
  if (max_turns < 0) throw Error(ErrorCode::InvalidParams, "max_turns must be >= 0");
}

Machine::Machine(const Vocab& vocab, int max_turns, State resume) : Machine(vocab, max_turns) {
  state_ = resume;
}

std::optional<Fault> Machine::feed(Token t) {
  const auto marker = vocab_->marker_of(t);
  auto reject = [&](Fault f) {
    last_event_ = Event::Rejected;
    return std::optional<Fault>(f);
  };
  auto go = [&](Kind next, Event ev) {
    state_.kind = next;
    last_event_ = ev;
    return std::optional<Fault>();
  };

  // Inside a block: content until the matching close; any other marker
  // leaves the block unbalanced.
  auto inside = [&](Marker close, Kind after) -> std::optional<Fault> {
    if (!marker) return go(state_.kind, Event::Content);
    if (*marker == close) return go(after, Event::Closed);
    return reject(Fault::UnbalancedMarker);
  };

  switch (state_.kind) {
    case Kind::Idle:
    case Kind::AwaitAction: {
      if (!marker) return go(state_.kind, Event::Filler);
      switch (*marker) {
        case Marker::ThinkOpen: return go(Kind::InThink, Event::Opened);
        case Marker::SearchOpen:
          if (state_.turns_used >= max_turns_) return reject(Fault::TurnBudgetExceeded);
          ++state_.turns_used;
          return go(Kind::InSearch, Event::Opened);
        case Marker::AnswerOpen: return go(Kind::InAnswer, Event::Opened);
        case Marker::InfoOpen: return reject(Fault::OrderViolation);
        default: return reject(Fault::UnbalancedMarker);
      }
    }
    case Kind::AwaitInformation:
      if (marker && *marker == Marker::InfoOpen) return go(Kind::InInformation, Event::Opened);
      return reject(Fault::OrderViolation);
    case Kind::InThink: return inside(Marker::ThinkClose, Kind::AwaitAction);
    case Kind::InSearch: return inside(Marker::SearchClose, Kind::AwaitInformation);
    case Kind::InInformation: return inside(Marker::InfoClose, Kind::AwaitAction);
    case Kind::InAnswer: return inside(Marker::AnswerClose, Kind::Done);
    case Kind::Done:
      if (!marker) return go(Kind::Done, Event::Filler);
      return reject(Fault::AnswerNotLast);
  }
  return reject(Fault::OrderViolation);
}

std::optional<Fault> Machine::finish() const {
  switch (state_.kind) {
    case Kind::InThink:
    case Kind::InSearch:
    case Kind::InInformation:
    case Kind::InAnswer: return Fault::UnbalancedMarker;
    case Kind::AwaitInformation: return Fault::OrderViolation;
    default: return std::nullopt;
  }
}

namespace {

BlockKind block_for(Kind inside) {
  switch (inside) {
    case Kind::InThink: return BlockKind::Think;
    case Kind::InSearch: return BlockKind::Search;
    case Kind::InInformation: return BlockKind::Information;
    default: return BlockKind::Answer;
  }
}

Marker open_marker(BlockKind kind) {
  switch (kind) {
    case BlockKind::Think: return Marker::ThinkOpen;
    case BlockKind::Search: return Marker::SearchOpen;
    case BlockKind::Information: return Marker::InfoOpen;
    case BlockKind::Answer: return Marker::AnswerOpen;
  }
  return Marker::ThinkOpen;
}

Marker close_marker(BlockKind kind) {
  return static_cast<Marker>(static_cast<int>(open_marker(kind)) + 1);
}

}  // namespace

ParseResult parse(std::span<const Token> tokens, const Vocab& vocab, int max_turns) {
  if (tokens.empty()) throw Error(ErrorCode::InvalidParams, "parse needs a non-empty sequence");
  Machine m(vocab, max_turns);
  ParsedEpisode ep;
  Block current;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const Kind before = m.state().kind;
    if (auto fault = m.feed(tokens[i])) return ParseFailure{*fault, i};
    switch (m.last_event()) {
      case Event::Opened:
        current = Block{block_for(m.state().kind), i, i, {}};
        break;
      case Event::Content:
        current.content.push_back(tokens[i]);
        break;
      case Event::Closed:
        current.end = i + 1;
        if (before == Kind::InAnswer) ep.answer_span = {current.start + 1, i};
        ep.blocks.push_back(std::move(current));
        current = Block{};
        break;
      case Event::Filler:
        ++ep.filler_count;
        break;
      case Event::Rejected:
        break;
    }
  }
  if (auto fault = m.finish()) return ParseFailure{*fault, tokens.size()};
  return ep;
}

std::size_t truncation_point(const ParsedEpisode& episode) {
  for (const auto& b : episode.blocks) {
    if (b.kind == BlockKind::Answer) return b.start;
  }
  throw Error(ErrorCode::NoAnswerBlock, "episode has no Answer block");
}

std::vector<Token> render(std::span<const Block> blocks, const Vocab& vocab) {
  std::vector<Token> out;
  for (const auto& b : blocks) {
    out.push_back(vocab.marker(open_marker(b.kind)));
    out.insert(out.end(), b.content.begin(), b.content.end());
    out.push_back(vocab.marker(close_marker(b.kind)));
  }
  return out;
}

std::size_t last_block_boundary(std::span<const Token> tokens, const Vocab& vocab, int max_turns) {
  Machine m(vocab, max_turns);
  std::size_t boundary = 0;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (m.feed(tokens[i])) break;
    if (m.last_event() == Event::Closed && m.state().kind == Kind::AwaitAction) boundary = i + 1;
  }
  return boundary;
}

// ---------------------------------------------------------------------------
// Text layer

namespace {

constexpr std::array<std::string_view, kMarkerCount> kMarkerText{
    "<think>",       "</think>",       "<search>", "</search>",
    "<information>", "</information>", "<answer>", "</answer>"};

// Splits on whitespace and isolates markers glued to words.
template <typename Fn>
void for_each_piece(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    if (std::isspace(static_cast<unsigned char>(text[i]))) {
      ++i;
      continue;
    }
    if (text[i] == '<') {
      bool matched = false;
      for (std::size_t k = 0; k < kMarkerText.size(); ++k) {
        if (text.substr(i, kMarkerText[k].size()) == kMarkerText[k]) {
          fn(std::string_view{}, static_cast<int>(k));
          i += kMarkerText[k].size();
          matched = true;
          break;
        }
      }
      if (matched) continue;
    }
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) {
      if (text[j] == '<' && j > i) break;
      ++j;
    }
    fn(text.substr(i, j - i), -1);
    i = j;
  }
}

}  // namespace

void TextCodec::add_words(std::string_view text) {
  for_each_piece(text, [&](std::string_view word, int marker) {
    if (marker >= 0) return;
    std::string w(word);
    if (ids_.emplace(w, static_cast<Token>(words_.size())).second) words_.push_back(w);
  });
}

TextCodec TextCodec::from_lines(std::span<const std::string> lines) {
  TextCodec codec;
  for (const auto& l : lines) codec.add_words(l);
  if (codec.words_.empty()) codec.words_.push_back("<unk>");
  return codec;
}

std::vector<Token> TextCodec::encode(std::string_view text) const {
  std::vector<Token> out;
  const auto base = static_cast<Token>(words_.size());
  for_each_piece(text, [&](std::string_view word, int marker) {
    if (marker >= 0) {
      out.push_back(base + marker);
      return;
    }
    auto it = ids_.find(std::string(word));
    if (it == ids_.end()) throw Error(ErrorCode::ParseError, "unknown word '" + std::string(word) + "'");
    out.push_back(it->second);
  });
  return out;
}

std::string TextCodec::decode(std::span<const Token> tokens) const {
  std::string out;
  const auto base = static_cast<Token>(words_.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += ' ';
    const Token t = tokens[i];
    if (t >= base && t < base + static_cast<Token>(kMarkerCount)) {
      out += kMarkerText[static_cast<std::size_t>(t - base)];
    } else if (t >= 0 && t < base) {
      out += words_[static_cast<std::size_t>(t)];
    } else {
      throw Error(ErrorCode::ParseError, "token id out of range");
    }
  }
  return out;
}

}  // namespace rexsim::protocol
