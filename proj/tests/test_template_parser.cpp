#include <doctest.h>

#include <random>
#include <string>

#include "groundrl/template_parser.hpp"
#include "test_util.hpp"

using namespace groundrl;

TEST_CASE("canonical template parses into three segments") {
  const auto r = parse_structured("<description>D</description><think>T</think><answer>A</answer>");
  REQUIRE(r.response.has_value());
  CHECK(r.diagnostics.well_formed);
  CHECK(r.response->description == "D");
  CHECK(r.response->think == "T");
  CHECK(r.response->answer == "A");
  CHECK(format_reward(r.diagnostics) == 1.0);
}

TEST_CASE("missing think segment is malformed") {
  const auto r = parse_structured("<description>D</description><answer>A</answer>");
  CHECK_FALSE(r.response.has_value());
  CHECK_FALSE(r.diagnostics.well_formed);
  CHECK(r.diagnostics.opens(Segment::kThink) == 0);
  CHECK(r.diagnostics.closes(Segment::kThink) == 0);
  CHECK(format_reward(r.diagnostics) == 0.0);
}

TEST_CASE("repeated segments are counted") {
  const auto r = parse_structured(
      "<description>D1</description><description>D2</description><think>T</think><answer>A</answer>");
  CHECK_FALSE(r.response.has_value());
  CHECK(r.diagnostics.opens(Segment::kDescription) == 2);
  CHECK(r.diagnostics.closes(Segment::kDescription) == 2);

  const auto dup_answer =
      parse_structured("<description>D</description><think>T</think><answer>A</answer><answer>B</answer>");
  CHECK(dup_answer.diagnostics.opens(Segment::kAnswer) == 2);
  CHECK(format_reward(dup_answer.diagnostics) == 0.0);
}

TEST_CASE("segment text is trimmed but otherwise verbatim") {
  const auto r = parse_structured(
      "\n <description>  a  <b> x\n</description>\n\t<think>\nstep 1\n\nstep 2 </think> <answer> 42 </answer>\n");
  REQUIRE(r.response.has_value());
  CHECK(r.response->description == "a  <b> x");
  CHECK(r.response->think == "step 1\n\nstep 2");
  CHECK(r.response->answer == "42");
  CHECK(r.response->raw_length == count_tokens(
      "\n <description>  a  <b> x\n</description>\n\t<think>\nstep 1\n\nstep 2 </think> <answer> 42 </answer>\n"));
}

TEST_CASE("stray text outside the spans is reported") {
  const std::string text = "Sure! <description>D</description><think>T</think><answer>A</answer> bye";
  const auto r = parse_structured(text);
  CHECK_FALSE(r.diagnostics.well_formed);
  REQUIRE(r.diagnostics.stray_text_spans.size() == 2);
  CHECK(text.substr(r.diagnostics.stray_text_spans[0].offset, r.diagnostics.stray_text_spans[0].length) == "Sure!");
  CHECK(text.substr(r.diagnostics.stray_text_spans[1].offset, r.diagnostics.stray_text_spans[1].length) == "bye");
  CHECK(r.diagnostics.order_violations.empty());
}

TEST_CASE("order and nesting violations") {
  SUBCASE("think before description") {
    const auto r = parse_structured("<think>T</think><description>D</description><answer>A</answer>");
    CHECK_FALSE(r.diagnostics.well_formed);
    CHECK_FALSE(r.diagnostics.order_violations.empty());
  }
  SUBCASE("nested same-name tag counts as an extra open") {
    const auto r =
        parse_structured("<description>D</description><think>a<think>b</think>c</think><answer>A</answer>");
    CHECK(r.diagnostics.opens(Segment::kThink) == 2);
    CHECK_FALSE(r.diagnostics.well_formed);
  }
  SUBCASE("answer inside think") {
    const auto r = parse_structured("<description>D</description><think>T<answer>A</answer></think>");
    CHECK_FALSE(r.diagnostics.well_formed);
    CHECK_FALSE(r.diagnostics.order_violations.empty());
  }
  SUBCASE("unclosed segment") {
    const auto r = parse_structured("<description>D</description><think>T</think><answer>A");
    CHECK_FALSE(r.diagnostics.well_formed);
  }
  SUBCASE("tags are case-sensitive") {
    const auto r = parse_structured("<Description>D</Description><think>T</think><answer>A</answer>");
    CHECK_FALSE(r.diagnostics.well_formed);
    CHECK(r.diagnostics.opens(Segment::kDescription) == 0);
  }
  SUBCASE("attributes are not tags") {
    const auto r = parse_structured("<description id=1>D</description><think>T</think><answer>A</answer>");
    CHECK(r.diagnostics.opens(Segment::kDescription) == 0);
    CHECK_FALSE(r.diagnostics.well_formed);
  }
}

TEST_CASE("empty and degenerate inputs never throw") {
  for (const char* text : {"", "<", "</", "<answer", "</answer>", "<<>>", "<description></description>"}) {
    const auto r = parse_structured(text);
    CHECK_FALSE(r.diagnostics.well_formed);
  }
  const auto empty_segments = parse_structured("<description></description><think></think><answer></answer>");
  CHECK(empty_segments.diagnostics.well_formed);
}

TEST_CASE("extractable answer span") {
  CHECK(extract_answer_span("junk <answer> 15 </answer> more") == std::optional<std::string>("15"));
  CHECK(extract_answer_span("<answer>1</answer><answer>2</answer>") == std::optional<std::string>("2"));
  CHECK_FALSE(extract_answer_span("<answer>open only").has_value());
  CHECK_FALSE(extract_answer_span("</answer><answer>").has_value());
}

TEST_CASE("round trip of well-formed responses") {
  std::mt19937_64 rng(7);
  for (int i = 0; i < 2000; ++i) {
    const std::string text = testutil::random_well_formed(rng);
    const auto first = parse_structured(text);
    REQUIRE(first.response.has_value());
    const auto second = parse_structured(serialize(*first.response));
    REQUIRE(second.response.has_value());
    CHECK(second.response->description == first.response->description);
    CHECK(second.response->think == first.response->think);
    CHECK(second.response->answer == first.response->answer);
  }
}

TEST_CASE("deleting any single tag breaks the format") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 300; ++i) {
    const std::string text = testutil::random_well_formed(rng);
    REQUIRE(parse_structured(text).diagnostics.well_formed);
    for (const std::string& mutated : testutil::single_tag_deletions(text)) {
      CHECK(format_reward(parse_structured(mutated).diagnostics) == 0.0);
    }
  }
}

TEST_CASE("well_formed agrees with its definition on random inputs") {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 3000; ++i) {
    const std::string text = testutil::random_tag_soup(rng);
    const auto r = parse_structured(text);
    const auto& d = r.diagnostics;
    bool counts = true;
    for (int s = 0; s < 3; ++s) counts = counts && d.open_counts[s] == 1 && d.close_counts[s] == 1;
    CHECK(d.well_formed == (counts && d.order_violations.empty() && d.stray_text_spans.empty()));
    CHECK(r.response.has_value() == d.well_formed);
  }
}
