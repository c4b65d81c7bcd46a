#include <doctest.h>

#include <cmath>

#include <nlohmann/json.hpp>

#include "insec/corruptor.hpp"
#include "insec/markup.hpp"
#include "support/fixtures.hpp"

using namespace insec;
using namespace insec::corrupt;
using taskgen::TaskKind;

TEST_SUITE("corruptor") {
  TEST_CASE("omitting 7 and 8 from the first ten integers") {
    const auto task = taskgen::make_task(TaskKind::FirstNIntegers, {{"n", 10}});
    const auto c = apply_edit(task, 1, Strategy::OmitElements, Omit{7, 2});
    CHECK(c.corrupted == "The first 10 positive integers are 1, 2, 3, 4, 5, 6, 9, 10.");
    CHECK(c.reason == "missing numbers 7, 8");
    CHECK(c.original == "The first 10 positive integers are 1, 2, 3, 4, 5, 6, 7, 8, 9, 10.");
    CHECK(is_falsified(task, c));
    CHECK(markup::render({task.question,
                          {markup::ReasoningUnit::mistake(1, c.corrupted, c.reason),
                           markup::ReasoningUnit::clean(1, c.original)},
                          task.final_answer})
              .find("    1. The first 10 positive integers are 1, 2, 3, 4, 5, 6, 9, 10. <Found a mistake in the "
                    "previous sentence. Reason: missing numbers 7, 8>\n    1. The first 10 positive integers are 1, "
                    "2, 3, 4, 5, 6, 7, 8, 9, 10.") != std::string::npos);
  }

  TEST_CASE("substituting 6 for length 7") {
    const auto task = taskgen::make_task(TaskKind::RectPerimeter, {{"length", 7}, {"width", 3}});
    const auto c = apply_edit(task, 2, Strategy::WrongSubstitution, Substitute{"length", 6});
    CHECK(c.reason == "wrong substitution for length");
    CHECK(c.corrupted == "Substitute the given values: length = 6 cm, width = 3 cm.");
    CHECK(markup::render(annotate_with(task, {c})) == testing::kPerimeterAnnotated);
  }

  TEST_CASE("50 minutes per hour") {
    const auto task = taskgen::make_task(TaskKind::HoursToSeconds, {{"hours", 3}});
    const auto c = apply_edit(task, 1, Strategy::WrongConversionFactor, ReplaceFactor{50});
    CHECK(c.corrupted == "There are 50 minutes in 1 hour.");
    CHECK(c.reason == "incorrect conversion factor");
    CHECK(propagated_answer(task, c) == "9000 seconds");
  }

  TEST_CASE("ineligible strategy is rejected with the applicable list") {
    const auto task = taskgen::make_task(TaskKind::HoursToSeconds, {{"hours", 3}});
    try {
      (void)apply_edit(task, 1, Strategy::OmitElements, Omit{1, 1});
      FAIL("expected EligibilityError");
    } catch (const EligibilityError& e) {
      CHECK(e.applicable() == std::vector<Strategy>{Strategy::WrongConversionFactor});
    }
    CHECK(eligible_strategies(task, 4).empty());
  }

  TEST_CASE("rate zero leaves documents clean") {
    const auto corpus = taskgen::build_corpus(100, taskgen::Mix::uniform(), 3);
    AnnotationConfig cfg;
    cfg.rate = 0.0;
    const auto out = annotate_corpus(corpus.tasks, cfg);
    CHECK(out.stats.corrupted_steps == 0);
    for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
      CHECK(out.documents[i].document == taskgen::to_document(corpus.tasks[i]));
    }
  }

  TEST_CASE("rate one pairs every step of a three-step task") {
    const auto task = taskgen::make_task(TaskKind::RectArea, {{"length", 4}, {"width", 5}});
    AnnotationConfig cfg;
    cfg.rate = 1.0;
    SplitMix64 rng(5);
    const auto out = annotate(task, cfg, rng);
    CHECK(out.document.units.size() == 6);
    CHECK(out.document.mistake_count() == 3);
    CHECK(markup::strip(markup::render(out.document)) == markup::render(taskgen::to_document(task)));
  }

  TEST_CASE("max mistakes per document caps corruption") {
    const auto task = taskgen::make_task(TaskKind::RectArea, {{"length", 4}, {"width", 5}});
    AnnotationConfig cfg;
    cfg.rate = 1.0;
    cfg.max_mistakes_per_doc = 1;
    SplitMix64 rng(5);
    CHECK(annotate(task, cfg, rng).document.mistake_count() == 1);
  }

  TEST_CASE("1000 steps at rate 0.15 land inside the three sigma band") {
    const auto corpus = taskgen::build_corpus(1000, taskgen::Mix::only(TaskKind::FirstNIntegers), 7);
    AnnotationConfig cfg;
    cfg.seed = 7;
    const auto out = annotate_corpus(corpus.tasks, cfg);
    REQUIRE(out.stats.total_steps == 1000);
    const double sigma = std::sqrt(1000 * 0.15 * 0.85);
    CHECK(std::round(150 - 3 * sigma) == 116);
    CHECK(std::round(150 + 3 * sigma) == 184);
    CHECK(out.stats.corrupted_steps >= 116);
    CHECK(out.stats.corrupted_steps <= 184);
  }

  TEST_CASE("every emitted corruption falsifies its step") {
    const auto corpus = taskgen::build_corpus(1000, taskgen::Mix::uniform(), 13);
    AnnotationConfig cfg;
    cfg.seed = 13;
    const auto out = annotate_corpus(corpus.tasks, cfg);
    CHECK(out.stats.falsity_rate() == 1.0);
    for (std::size_t i = 0; i < corpus.tasks.size(); ++i) {
      for (const auto& c : out.documents[i].corruptions) {
        const auto r = taskgen::verify(with_corruption(corpus.tasks[i], c));
        CHECK_FALSE(r.pass);
        CHECK(r.step == c.step_index);
      }
      CHECK(markup::validate(out.documents[i].document).empty());
      CHECK(markup::strip(markup::render(out.documents[i].document)) ==
            markup::render(taskgen::to_document(corpus.tasks[i])));
    }
  }

  TEST_CASE("empty corpus reports no rate") {
    const auto out = annotate_corpus({}, AnnotationConfig{});
    CHECK(out.stats.documents == 0);
    CHECK_FALSE(out.stats.empirical_rate().has_value());
    CHECK_FALSE(out.stats.falsity_rate().has_value());
  }

  TEST_CASE("strategy restriction and invalid configs") {
    const auto corpus = taskgen::build_corpus(200, taskgen::Mix::uniform(), 4);
    AnnotationConfig cfg;
    cfg.rate = 0.5;
    cfg.strategies = {Strategy::ArithmeticSlip};
    const auto out = annotate_corpus(corpus.tasks, cfg);
    CHECK(out.stats.corrupted_steps > 0);
    CHECK(out.stats.per_strategy[static_cast<std::size_t>(Strategy::ArithmeticSlip)] == out.stats.corrupted_steps);

    AnnotationConfig bad;
    bad.rate = 1.5;
    CHECK_THROWS(bad.check());
    bad.rate = 0.1;
    bad.strategies.clear();
    CHECK_THROWS(bad.check());
    AnnotationConfig no_passes;
    no_passes.passes = 0;
    CHECK_THROWS(no_passes.check());
  }

  TEST_CASE("extra passes append fresh annotations of the same tasks") {
    const auto corpus = taskgen::build_corpus(150, taskgen::Mix::uniform(), 12);
    AnnotationConfig one;
    one.seed = 5;
    one.rate = 0.3;
    AnnotationConfig three = one;
    three.passes = 3;
    const auto a = annotate_corpus(corpus.tasks, one);
    const auto b = annotate_corpus(corpus.tasks, three);
    REQUIRE(b.documents.size() == 3 * corpus.tasks.size());
    CHECK(b.stats.documents == b.documents.size());
    std::size_t steps = 0;
    for (const auto& t : corpus.tasks) steps += t.steps.size();
    CHECK(b.stats.total_steps == 3 * steps);

    std::size_t repeated = 0;
    for (std::size_t k = 0; k < b.documents.size(); ++k) {
      const auto& task = corpus.tasks[k % corpus.tasks.size()];
      CHECK(markup::drop_mistakes(b.documents[k].document) == taskgen::to_document(task));
      if (k < corpus.tasks.size()) {
        CHECK(b.documents[k].document == a.documents[k].document);
      } else if (b.documents[k].corruptions == b.documents[k - corpus.tasks.size()].corruptions) {
        ++repeated;
      }
    }
    // Untouched documents repeat trivially; corrupted ones rarely coincide.
    CHECK(repeated < corpus.tasks.size());
    CHECK(b.stats.corrupted_steps > a.stats.corrupted_steps * 2);
  }

  TEST_CASE("annotation is deterministic and survives JSONL") {
    const auto corpus = taskgen::build_corpus(100, taskgen::Mix::uniform(), 8);
    AnnotationConfig cfg;
    cfg.seed = 21;
    const auto a = annotate_corpus(corpus.tasks, cfg);
    const auto b = annotate_corpus(corpus.tasks, cfg);
    CHECK(documents_to_jsonl(a) == documents_to_jsonl(b));
    const auto docs = documents_from_jsonl(documents_to_jsonl(a));
    REQUIRE(docs.size() == a.documents.size());
    for (std::size_t i = 0; i < docs.size(); ++i) CHECK(docs[i] == a.documents[i].document);
  }
}
