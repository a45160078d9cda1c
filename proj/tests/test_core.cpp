#include <cmath>
#include <cstdio>
#include <filesystem>
#include <limits>

#include "doctest.h"
#include "rexsim/core.hpp"
#include "rexsim/rng.hpp"

using namespace rexsim;

namespace {

Trajectory plain(std::vector<Token> tokens) {
  Trajectory t;
  t.tokens = std::move(tokens);
  t.behavior_logprobs.assign(t.tokens.size(), -0.5);
  t.segments = {Segment{SegmentKind::Plain, 0, t.tokens.size()}};
  return t;
}

Trajectory probe(std::vector<Segment> segments, std::size_t n) {
  Trajectory t;
  t.source = Source::Probe;
  t.tokens.assign(n, 0);
  t.behavior_logprobs.assign(n, -1.0);
  t.segments = std::move(segments);
  return t;
}

}  // namespace

TEST_CASE("vocab reserves marker ids after ordinary tokens") {
  Vocab v(5);
  CHECK(v.total() == 13);
  for (std::size_t m = 0; m < kMarkerCount; ++m) {
    const Token id = v.marker(static_cast<Marker>(m));
    CHECK(v.is_marker(id));
    CHECK_FALSE(v.is_ordinary(id));
    CHECK(v.marker_of(id) == static_cast<Marker>(m));
  }
  CHECK(v.is_ordinary(4));
  CHECK_FALSE(v.contains(13));
  CHECK_FALSE(v.contains(-1));
  CHECK_THROWS_AS(Vocab(0), Error);
}

TEST_CASE("validate_trajectory") {
  const Vocab v(4);

  SUBCASE("empty trajectory with no segments passes") {
    CHECK_FALSE(validate_trajectory(Trajectory{}, v));
  }
  SUBCASE("well-formed on-policy trajectory passes") {
    CHECK_FALSE(validate_trajectory(plain({0, 1, 2}), v));
  }
  SUBCASE("overlapping segments") {
    auto t = plain({0, 1, 2, 3});
    t.segments = {{SegmentKind::Plain, 0, 3}, {SegmentKind::Plain, 2, 4}};
    const auto d = validate_trajectory(t, v);
    REQUIRE(d);
    CHECK(d->message == "segment overlap at index 2");
    CHECK(d->index == 2);
  }
  SUBCASE("gap between segments") {
    auto t = plain({0, 1, 2, 3});
    t.segments = {{SegmentKind::Plain, 0, 1}, {SegmentKind::Plain, 2, 4}};
    const auto d = validate_trajectory(t, v);
    REQUIRE(d);
    CHECK(d->message == "segment gap at index 1");
  }
  SUBCASE("probe without a Prompt segment") {
    const auto t = probe({{SegmentKind::Origin, 0, 2}, {SegmentKind::Probe, 2, 4}}, 4);
    const auto d = validate_trajectory(t, v);
    REQUIRE(d);
    CHECK(d->message.find("missing Prompt segment") == 0);
  }
  SUBCASE("probe with all three segments passes") {
    const auto t =
        probe({{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 3}, {SegmentKind::Probe, 3, 4}}, 4);
    CHECK_FALSE(validate_trajectory(t, v));
  }
  SUBCASE("Plain segment inside a probe") {
    const auto t = probe({{SegmentKind::Plain, 0, 4}}, 4);
    REQUIRE(validate_trajectory(t, v));
  }
  SUBCASE("logprob count mismatch") {
    auto t = plain({0, 1});
    t.behavior_logprobs.pop_back();
    REQUIRE(validate_trajectory(t, v));
  }
  SUBCASE("reward outside {0,1}") {
    auto t = plain({0});
    t.reward = 0.5;
    REQUIRE(validate_trajectory(t, v));
  }
  SUBCASE("token out of range") {
    const auto d = validate_trajectory(plain({0, 12}), v);
    REQUIRE(d);
    CHECK(d->index == 1);
  }
}

TEST_CASE("kind_at follows the segment partition") {
  const auto t =
      probe({{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 3}, {SegmentKind::Probe, 3, 4}}, 4);
  CHECK(t.kind_at(0) == SegmentKind::Origin);
  CHECK(t.kind_at(2) == SegmentKind::Prompt);
  CHECK(t.kind_at(3) == SegmentKind::Probe);
  CHECK_THROWS_AS(t.kind_at(4), Error);
}

TEST_CASE("dump round trip is bit exact") {
  Rng rng(stream_key({42}));
  for (int trial = 0; trial < 200; ++trial) {
    Trajectory t;
    t.question_id = static_cast<QuestionId>(rng.below(100));
    const std::size_t n = rng.below(12);
    for (std::size_t i = 0; i < n; ++i) {
      t.tokens.push_back(static_cast<Token>(rng.below(30)));
      t.behavior_logprobs.push_back(rng.bernoulli(0.2) ? 0.0 : std::log(rng.uniform() + 1e-300));
    }
    if (rng.bernoulli(0.5) && n >= 3) {
      t.source = Source::Probe;
      t.segments = {{SegmentKind::Origin, 0, 1}, {SegmentKind::Prompt, 1, 2}, {SegmentKind::Probe, 2, n}};
    } else if (n > 0) {
      t.segments = {{SegmentKind::Plain, 0, n}};
    }
    t.reward = rng.bernoulli(0.5) ? 1.0 : 0.0;
    t.rollout_index = static_cast<std::int32_t>(rng.below(5));
    const std::string line = encode_trajectory(t);
    CHECK(decode_trajectory(line) == t);
    CHECK(encode_trajectory(decode_trajectory(line)) == line);
  }
}

TEST_CASE("dump files round trip") {
  const auto path = std::filesystem::temp_directory_path() / "rexsim_core_dump.tsv";
  std::vector<Trajectory> ts{plain({1, 2}), plain({3})};
  ts[1].reward = 1.0;
  ts[1].behavior_logprobs = {-0x1.5555555555555p-2};
  write_dump(path.string(), ts);
  CHECK(read_dump(path.string()) == ts);
  std::filesystem::remove(path);
}

TEST_CASE("malformed dump lines raise ParseError") {
  for (std::string_view bad : {"x\tonpolicy\t0\t1\tplain:0:1", "0\tnobody\t0\t1\tplain:0:1",
                               "0\tonpolicy\t0\t1\tplain:0", "0\tonpolicy"}) {
    try {
      decode_trajectory(bad);
      FAIL("expected ParseError for " << bad);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
    }
  }
}

TEST_CASE("partition hook throws on a broken trajectory") {
  const bool before = debug::partition_checks();
  debug::set_partition_checks(true);
  auto t = plain({0, 1});
  t.segments[0].end = 1;
  CHECK_THROWS_AS(debug::check_partition(t), Error);
  debug::set_partition_checks(before);
}
