#include <doctest.h>

#include <nlohmann/json.hpp>

#include "insec/markup.hpp"
#include "insec/rng.hpp"
#include "insec/taskgen.hpp"
#include "insec/tokenizer.hpp"
#include "support/fixtures.hpp"

using namespace insec;
using namespace insec::lm;

TEST_SUITE("tokenizer") {
  TEST_CASE("the correction tag opener is one token") {
    const std::vector<std::string> corpus{testing::kPerimeterAnnotated};
    const auto vocab = Vocabulary::build(corpus);
    CHECK(vocab.surface(kTagOpen) == markup::kTagPrefix);
    CHECK(vocab.surface(kTagClose) == ">");
    CHECK(vocab.surface(kNewline) == "\n");
    const auto ids = vocab.encode(testing::kPerimeterAnnotated);
    CHECK(std::count(ids.begin(), ids.end(), kTagOpen) == 1);
    CHECK(std::count(ids.begin(), ids.end(), kTagClose) == 1);
    CHECK(std::count(ids.begin(), ids.end(), kNewline) == 6);
    CHECK(vocab.decode(ids) == testing::kPerimeterAnnotated);
  }

  TEST_CASE("encode inverts decode for random id sequences") {
    const auto c = taskgen::build_corpus(100, taskgen::Mix::uniform(), 2);
    std::vector<std::string> texts{testing::kPerimeterAnnotated, testing::kHoursCorrectedFull};
    for (const auto& t : c.tasks) texts.push_back(markup::render(taskgen::to_document(t)));
    const auto vocab = Vocabulary::build(texts);
    std::vector<TokenId> stream;
    for (const auto& t : texts) {
      const auto ids = vocab.encode(t);
      stream.insert(stream.end(), ids.begin(), ids.end());
      stream.push_back(kNewline);
    }
    SplitMix64 rng(3);
    for (int trial = 0; trial < 500; ++trial) {
      const auto len = rng.uniform_int(1, 60);
      const auto start = rng.uniform_int(0, static_cast<std::int64_t>(stream.size()) - len);
      const std::vector<TokenId> ids(stream.begin() + start, stream.begin() + start + len);
      CHECK(vocab.encode(vocab.decode(ids)) == ids);
    }
  }

  TEST_CASE("round trip over every document of a corpus") {
    const auto c = taskgen::build_corpus(200, taskgen::Mix::uniform(), 7);
    std::vector<std::string> texts;
    for (const auto& t : c.tasks) texts.push_back(markup::render(taskgen::to_document(t)));
    const auto vocab = Vocabulary::build(texts);
    for (const auto& t : texts) CHECK(vocab.decode(vocab.encode(t)) == t);
  }

  TEST_CASE("vocabulary size of the seeded 1000-task corpus") {
    const auto c = taskgen::build_corpus(1000, taskgen::Mix::uniform(), 7);
    std::vector<std::string> texts;
    for (const auto& t : c.tasks) texts.push_back(markup::render(taskgen::to_document(t)));
    CHECK(Vocabulary::build(texts).size() == 244);
  }

  TEST_CASE("unknown pieces are named") {
    const std::vector<std::string> corpus{"Question: a b"};
    const auto vocab = Vocabulary::build(corpus);
    CHECK(vocab.unknown_pieces("Question: a zebra") == std::vector<std::string>{" zebra"});
    try {
      (void)vocab.encode("Question: a zebra");
      FAIL("expected UnknownTokenError");
    } catch (const UnknownTokenError& e) {
      CHECK(e.pieces() == std::vector<std::string>{" zebra"});
    }
  }

  TEST_CASE("json round trip and special ids") {
    const std::vector<std::string> corpus{testing::kHoursStripped};
    const auto vocab = Vocabulary::build(corpus);
    CHECK(nlohmann::json(vocab).get<Vocabulary>() == vocab);
    CHECK(Vocabulary().size() == kSpecialCount);
    CHECK_THROWS(Vocabulary::from_symbols({"a", "b"}));
  }
}
