#include <doctest.h>

#include <map>

#include <nlohmann/json.hpp>

#include "insec/eval.hpp"
#include "support/fixtures.hpp"
#include "support/oracle.hpp"

using namespace insec;
using namespace insec::eval;

namespace {

std::string step_line(int index, const std::string& text) {
  return std::string(markup::kIndent) + std::to_string(index) + ". " + text;
}

// Everything after step `from` (exclusive) of a derivation, one line each.
std::string tail(const std::vector<taskgen::Step>& steps, int from, const std::string& answer) {
  std::string out;
  for (int i = from + 1; i <= static_cast<int>(steps.size()); ++i) {
    out += "\n" + step_line(i, steps[static_cast<std::size_t>(i - 1)].text);
  }
  return out + "\n" + std::string(markup::kAnswerPrefix) + answer;
}

// Tags the planted step, restates it correctly and finishes the clean derivation.
Generator correcting_stub(const Suite& suite) {
  std::map<std::string, const ForcedErrorCase*> by_prompt, by_control;
  for (const auto& c : suite.cases) {
    by_prompt[c.prompt] = &c;
    by_control[c.control_prompt] = &c;
  }
  return [by_prompt, by_control](std::string_view prompt) -> std::string {
    if (const auto it = by_prompt.find(std::string(prompt)); it != by_prompt.end()) {
      const auto& c = *it->second;
      const int k = c.planted.step_index;
      return " " + markup::CorrectionTag{c.planted.reason}.serialize() + "\n" + step_line(k, c.planted.original) +
             tail(c.task.steps, k, c.task.final_answer);
    }
    const auto& c = *by_control.at(std::string(prompt));
    return tail(c.task.steps, c.planted.step_index, c.task.final_answer);
  };
}

// Builds on the planted value without ever tagging it.
Generator propagating_stub(const Suite& suite) {
  std::map<std::string, const ForcedErrorCase*> by_prompt, by_control;
  for (const auto& c : suite.cases) {
    by_prompt[c.prompt] = &c;
    by_control[c.control_prompt] = &c;
  }
  return [by_prompt, by_control](std::string_view prompt) -> std::string {
    if (const auto it = by_prompt.find(std::string(prompt)); it != by_prompt.end()) {
      const auto& c = *it->second;
      const auto wrong = taskgen::derive(c.task.kind, c.task.params,
                                         taskgen::StepOverride{c.planted.step_index, c.planted.corrupted_slots});
      return tail(wrong.steps, c.planted.step_index, wrong.final_answer);
    }
    const auto& c = *by_control.at(std::string(prompt));
    return tail(c.task.steps, c.planted.step_index, c.task.final_answer);
  };
}

EvalReport report_with(double trigger, double accuracy_stripped, double accuracy_raw, double false_corrections,
                       std::string fingerprint = "f") {
  EvalReport r;
  r.suite_fingerprint = std::move(fingerprint);
  r.overall.n_cases = r.overall.n_controls = 100;
  r.overall.correction_trigger_rate = trigger;
  r.overall.final_accuracy_stripped = accuracy_stripped;
  r.overall.final_accuracy_raw = accuracy_raw;
  r.overall.false_correction_rate = false_corrections;
  return r;
}

}  // namespace

TEST_SUITE("eval") {
  TEST_CASE("reference case") {
    const auto c = reference_case();
    CHECK(c.prompt == testing::kHoursPrompt);
    CHECK(c.expected_answer == "10800 seconds");
    CHECK(c.propagated_answer == "9000 seconds");
    CHECK(c.control_prompt ==
          "Question: Convert 3 hours into seconds.\nReasoning steps:\n    1. There are 60 minutes in 1 hour.");
  }

  TEST_CASE("a one-case suite has one case and one control") {
    const auto s = make_suite(1, taskgen::Mix::uniform(), 3);
    REQUIRE(s.cases.size() == 1);
    const auto r = evaluate(correcting_stub(s), s, "stub");
    CHECK(r.transcripts.size() == 2);
    CHECK(r.report.overall.n_cases == 1);
    CHECK(r.report.overall.n_controls == 1);
  }

  TEST_CASE("every planted step fails verification across 500 cases") {
    const auto s = make_suite(500, taskgen::Mix::uniform(), 17);
    REQUIRE(s.cases.size() == 500);
    for (const auto& c : s.cases) {
      const auto r = taskgen::verify(corrupt::with_corruption(c.task, c.planted));
      CHECK_FALSE(r.pass);
      CHECK(r.step == c.planted.step_index);
      CHECK(c.propagated_answer != c.expected_answer);
      CHECK(c.expected_answer == testing::answer_from_question(c.task.question));
    }
  }

  TEST_CASE("suites are deterministic and survive JSONL") {
    const auto a = make_suite(30, taskgen::Mix::uniform(), 5);
    const auto b = make_suite(30, taskgen::Mix::uniform(), 5);
    CHECK(a.to_jsonl() == b.to_jsonl());
    CHECK(a.fingerprint() == b.fingerprint());
    CHECK(a.fingerprint() != make_suite(30, taskgen::Mix::uniform(), 6).fingerprint());
    const auto back = suite_from_jsonl(a.to_jsonl());
    CHECK(back.cases == a.cases);
    CHECK(back.fingerprint() == a.fingerprint());
  }

  TEST_CASE("correcting stub scores perfectly") {
    const auto s = make_suite(200, taskgen::Mix::uniform(), 4);
    const auto r = evaluate(correcting_stub(s), s, "stub").report.overall;
    CHECK(r.correction_trigger_rate == 1.0);
    CHECK(r.final_accuracy_stripped == 1.0);
    CHECK(r.final_accuracy_raw == 1.0);
    CHECK(r.false_correction_rate == 0.0);
    CHECK(r.misplaced_tag_rate == 0.0);
    CHECK(r.control_accuracy_stripped == 1.0);
  }

  TEST_CASE("propagating stub never triggers and is never right") {
    const auto s = make_suite(200, taskgen::Mix::uniform(), 4);
    const auto r = evaluate(propagating_stub(s), s, "stub").report.overall;
    CHECK(r.correction_trigger_rate == 0.0);
    CHECK(r.final_accuracy_raw == 0.0);
    CHECK(r.final_accuracy_stripped == 0.0);
    CHECK(r.false_correction_rate == 0.0);
  }

  TEST_CASE("reference continuations score as expected") {
    Transcript t;
    t.prompt = testing::kHoursPrompt;
    t.continuation = testing::kHoursCorrectedFull.substr(testing::kHoursPrompt.size());
    t.expected_answer = "10800 seconds";
    score(t);
    CHECK(t.triggered);
    CHECK(t.correct_stripped);
    CHECK(t.stripped == testing::kHoursStripped);

    Transcript b;
    b.prompt = testing::kHoursPrompt;
    b.continuation = testing::kHoursPropagated.substr(testing::kHoursPrompt.size());
    b.expected_answer = "10800 seconds";
    score(b);
    CHECK_FALSE(b.triggered);
    CHECK_FALSE(b.any_tag);
    CHECK(b.answer_raw == "9000 seconds");
    CHECK_FALSE(b.correct_raw);
  }

  TEST_CASE("trigger rule: lone tag on the next line, late tags are misplaced") {
    Transcript lone;
    lone.prompt = testing::kHoursPrompt;
    lone.continuation = "\n    <Found a mistake in the previous sentence. Reason: x>\n    1. There are 60 minutes in 1 hour.";
    score(lone);
    CHECK(lone.triggered);

    Transcript late;
    late.prompt = testing::kHoursPrompt;
    late.continuation =
        "\n    2. There are 60 seconds in 1 minute. <Found a mistake in the previous sentence. Reason: x>\n";
    score(late);
    CHECK_FALSE(late.triggered);
    CHECK(late.misplaced_tag);

    Transcript control = late;
    control.control = true;
    score(control);
    CHECK_FALSE(control.triggered);
    CHECK_FALSE(control.misplaced_tag);
    CHECK(control.any_tag);
  }

  TEST_CASE("final answer extraction") {
    CHECK(final_answer("a\nSo the final answer is 5\nSo the final answer is 6") == "6");
    CHECK_FALSE(final_answer("no answer here").has_value());
  }

  TEST_CASE("metrics are a pure function of transcripts") {
    const auto s = make_suite(50, taskgen::Mix::uniform(), 8);
    int calls = 0;
    const auto stub = correcting_stub(s);
    const auto mixed = [&](std::string_view p) { return ++calls % 3 == 0 ? std::string(" garbage") : stub(p); };
    const auto r = evaluate(mixed, s, "mixed");
    const auto again = transcripts_from_jsonl(transcripts_to_jsonl(r.transcripts));
    const auto rebuilt = report_from_transcripts(again, "mixed", s.fingerprint());
    CHECK(nlohmann::json(rebuilt) == nlohmann::json(r.report));
    CHECK(r.report.suite_fingerprint == s.fingerprint());
    CHECK(nlohmann::json(r.report).get<EvalReport>().overall.correction_trigger_rate ==
          r.report.overall.correction_trigger_rate);
  }

  TEST_CASE("empty suite is an error") {
    Suite empty;
    CHECK_THROWS_AS(evaluate([](std::string_view) { return std::string(); }, empty, "x"), EvalError);
    CHECK_THROWS(make_suite(0, taskgen::Mix::uniform(), 1));
  }

  TEST_CASE("compare: clear win passes") {
    const auto s = compare(report_with(0.8, 0.9, 0.8, 0.05), report_with(0.0, 0.2, 0.2, 0.0));
    CHECK(s.trigger_delta == doctest::Approx(0.8));
    CHECK(s.accuracy_delta == doctest::Approx(0.7));
    CHECK(s.pass);
    CHECK(nlohmann::json(s).at("verdict") == "PASS");
  }

  TEST_CASE("compare: identical reports fail with zero deltas") {
    const auto r = report_with(0.3, 0.5, 0.5, 0.1);
    const auto s = compare(r, r);
    CHECK(s.trigger_delta == 0.0);
    CHECK(s.false_correction_delta == 0.0);
    CHECK(s.accuracy_stripped_delta == 0.0);
    CHECK(s.accuracy_raw_delta == 0.0);
    CHECK_FALSE(s.pass);
  }

  TEST_CASE("compare: each threshold can fail on its own") {
    const auto base = report_with(0.0, 0.2, 0.2, 0.0);
    CHECK_FALSE(compare(report_with(0.45, 0.9, 0.9, 0.0), base).pass);                   // trigger too low
    CHECK_FALSE(compare(report_with(0.8, 0.45, 0.45, 0.0), base).pass);                  // accuracy delta
    CHECK_FALSE(compare(report_with(0.8, 0.9, 0.9, 0.25), base).pass);                   // false corrections
    CHECK_FALSE(compare(report_with(0.8, 0.9, 0.9, 0.0), report_with(0.1, 0.2, 0.2, 0)).pass);  // baseline tags
  }

  TEST_CASE("compare: suites must match") {
    CHECK_THROWS_AS(compare(report_with(1, 1, 1, 0, "a"), report_with(0, 0, 0, 0, "b")), ComparisonError);
  }
}
