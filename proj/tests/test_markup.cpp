#include <doctest.h>

#include <nlohmann/json.hpp>

#include "insec/markup.hpp"
#include "support/fixtures.hpp"

using namespace insec;
using namespace insec::markup;

namespace {

AnnotatedDocument parsed(const std::string& text, ParseMode mode = ParseMode::Strict) {
  auto result = parse(text, mode);
  REQUIRE(std::holds_alternative<AnnotatedDocument>(result));
  return std::get<AnnotatedDocument>(result);
}

bool has_rule(const std::vector<Violation>& v, Rule rule) {
  for (const auto& x : v) {
    if (x.rule == rule) return true;
  }
  return false;
}

}  // namespace

TEST_SUITE("markup") {
  TEST_CASE("render reproduces the annotated perimeter listing") {
    CHECK(render(testing::perimeter_document()) == testing::kPerimeterAnnotated);
  }

  TEST_CASE("render without mistakes is plain chain of thought") {
    const auto clean = drop_mistakes(testing::perimeter_document());
    const auto text = render(clean);
    CHECK(text.find('<') == std::string::npos);
    CHECK(text ==
          "Question: What is the perimeter of a rectangle with length 7 cm and width 3 cm?\n"
          "Reasoning steps:\n"
          "    1. The formula for the perimeter of a rectangle is 2 * (length + width).\n"
          "    2. Substitute the given values: length = 7 cm, width = 3 cm.\n"
          "    3. Calculate the perimeter: 2 * (7 + 3) = 2 * 10 = 20 cm.\n"
          "So the final answer is 20 cm");
  }

  TEST_CASE("two mistakes render two tags and re-parse") {
    AnnotatedDocument doc{"q?",
                          {ReasoningUnit::mistake(1, "a", "r1"), ReasoningUnit::clean(1, "b"),
                           ReasoningUnit::clean(2, "c"), ReasoningUnit::mistake(3, "d", "r2"),
                           ReasoningUnit::clean(3, "e")},
                          "5"};
    const auto text = render(doc);
    std::size_t tags = 0;
    for (auto pos = text.find(kTagPrefix); pos != std::string::npos; pos = text.find(kTagPrefix, pos + 1)) ++tags;
    CHECK(tags == 2);
    CHECK(parsed(text) == doc);
  }

  TEST_CASE("parse of the annotated listing yields one mistake") {
    const auto doc = parsed(testing::kPerimeterAnnotated);
    CHECK(doc == testing::perimeter_document());
    CHECK(doc.mistake_count() == 1);
    CHECK(doc.units[1].reason == "wrong substitution for length");
  }

  TEST_CASE("untagged duplicate step: strict rejects, lenient marks an anomaly") {
    auto strict = parse(testing::kPerimeterUntagged, ParseMode::Strict);
    REQUIRE(std::holds_alternative<ParseError>(strict));
    CHECK(std::get<ParseError>(strict).kind == ParseErrorKind::UntaggedDuplicate);
    CHECK(std::get<ParseError>(strict).line == 5);

    const auto lenient = parsed(testing::kPerimeterUntagged, ParseMode::Lenient);
    REQUIRE(lenient.units.size() == 4);
    CHECK(lenient.units[1].kind == UnitKind::UntaggedAnomaly);
    CHECK(lenient.units[2].kind == UnitKind::Clean);
    CHECK(has_rule(validate(lenient), Rule::UntaggedAnomaly));
  }

  TEST_CASE("empty input is missing its question") {
    auto r = parse("");
    REQUIRE(std::holds_alternative<ParseError>(r));
    CHECK(std::get<ParseError>(r).kind == ParseErrorKind::MissingQuestion);
  }

  TEST_CASE("malformed inputs report distinct errors") {
    const auto kind = [](std::string_view text) {
      auto r = parse(text);
      REQUIRE(std::holds_alternative<ParseError>(r));
      return std::get<ParseError>(r).kind;
    };
    CHECK(kind("Question: q\nSo the final answer is 1") == ParseErrorKind::MissingReasoningHeader);
    CHECK(kind("Question: q\nReasoning steps:\nSo the final answer is 1") == ParseErrorKind::MissingSteps);
    CHECK(kind("Question: q\nReasoning steps:\n    1. a") == ParseErrorKind::MissingAnswer);
    CHECK(kind("Question: q\nReasoning steps:\n    1. a\n    3. b\nSo the final answer is 1") ==
          ParseErrorKind::IndexGap);
    CHECK(kind("Question: q\nReasoning steps:\n    1. a <Found a mistake in the previous sentence. Reason: x\n"
               "    1. b\nSo the final answer is 1") == ParseErrorKind::MalformedTag);
    CHECK(kind("Question: q\nReasoning steps:\n    1. a\nSo the final answer is 1\nmore") ==
          ParseErrorKind::TrailingContent);
    CHECK(kind("Question: q\nReasoning steps:\n    1. a <Found a mistake in the previous sentence. Reason: x>\n"
               "So the final answer is 1") == ParseErrorKind::UncorrectedMistake);
  }

  TEST_CASE("strip removes the tagged sentence and its tag") {
    CHECK(strip(testing::kHoursCorrectedFull) == testing::kHoursStripped);
    CHECK(strip(testing::kHoursStripped) == testing::kHoursStripped);
  }

  TEST_CASE("strip leaves tag-free text unchanged") {
    CHECK(strip(testing::kHoursPropagated) == testing::kHoursPropagated);
    const std::string fragment = "1. There are 60 minutes in 1 hour.\nnot a derivation at all";
    CHECK(strip(fragment) == fragment);
  }

  TEST_CASE("strip handles a tag on its own line") {
    const std::string text =
        "Question: q\nReasoning steps:\n    1. wrong\n    <Found a mistake in the previous sentence. Reason: r>\n"
        "    1. right\nSo the final answer is 1";
    CHECK(strip(text) == "Question: q\nReasoning steps:\n    1. right\nSo the final answer is 1");
  }

  TEST_CASE("validate accepts the listing document") { CHECK(validate(testing::perimeter_document()).empty()); }

  TEST_CASE("validate: trailing mistake must be corrected") {
    AnnotatedDocument doc{"q?", {ReasoningUnit::clean(1, "a"), ReasoningUnit::mistake(2, "b", "r")}, "1"};
    CHECK(has_rule(validate(doc), Rule::MistakeMustBeCorrected));
  }

  TEST_CASE("validate: correction index mismatch") {
    AnnotatedDocument doc{"q?",
                          {ReasoningUnit::clean(1, "a"), ReasoningUnit::mistake(2, "b", "r"),
                           ReasoningUnit::clean(3, "c")},
                          "1"};
    CHECK(has_rule(validate(doc), Rule::CorrectionIndexMismatch));
  }

  TEST_CASE("validate: other rules") {
    CHECK(has_rule(validate({"", {ReasoningUnit::clean(1, "a")}, "1"}), Rule::InvalidQuestion));
    CHECK(has_rule(validate({"q", {ReasoningUnit::clean(1, "a")}, ""}), Rule::InvalidFinalAnswer));
    CHECK(has_rule(validate({"q", {}, "1"}), Rule::NoSteps));
    CHECK(has_rule(validate({"q", {ReasoningUnit::clean(1, "a <b>")}, "1"}), Rule::InvalidText));
    CHECK(has_rule(validate({"q", {ReasoningUnit::clean(2, "a")}, "1"}), Rule::NonConsecutiveIndex));
    CHECK(has_rule(validate({"q",
                             {ReasoningUnit::mistake(1, "a", "r"), ReasoningUnit::mistake(1, "b", "r"),
                              ReasoningUnit::clean(1, "c")},
                             "1"}),
                   Rule::ConsecutiveMistakes));
    ReasoningUnit bad = ReasoningUnit::clean(1, "a");
    bad.reason = "x";
    CHECK(has_rule(validate({"q", {bad}, "1"}), Rule::ReasonOnCleanUnit));
  }

  TEST_CASE("render refuses invalid documents") {
    CHECK_THROWS_AS(render({"q", {}, "1"}), ValidationError);
  }

  TEST_CASE("tag serialization round-trips") {
    const CorrectionTag tag{"missing numbers 7, 8"};
    CHECK(tag.serialize() == "<Found a mistake in the previous sentence. Reason: missing numbers 7, 8>");
    CHECK(CorrectionTag::parse(tag.serialize()) == tag);
    CHECK_FALSE(CorrectionTag::parse("<Found a mistake. Reason: x>").has_value());
    CHECK_FALSE(CorrectionTag::valid_reason(""));
    CHECK_FALSE(CorrectionTag::valid_reason("a>b"));
  }

  TEST_CASE("json round-trip") {
    const auto doc = testing::perimeter_document();
    CHECK(nlohmann::json(doc).get<AnnotatedDocument>() == doc);
  }

  TEST_CASE("property: parse inverts render, strip is idempotent and recovers the deletion") {
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
      const auto doc = testing::random_document(seed);
      REQUIRE(validate(doc).empty());
      const auto text = render(doc);
      CHECK(parsed(text) == doc);
      const auto once = strip(text);
      CHECK(strip(once) == once);
      CHECK(once == render(testing::reference_deletion(doc)));
    }
  }
}
