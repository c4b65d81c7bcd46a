#include <doctest.h>

#include <nlohmann/json.hpp>

#include "insec/generate.hpp"
#include "insec/train.hpp"
#include "support/fixtures.hpp"

using namespace insec;
using namespace insec::lm;

namespace {

constexpr const char* kTail = "\nQuestion: again";

// A small model that has memorized the corrected hours derivation followed by
// the start of another question.
const Checkpoint& memorized() {
  static const Checkpoint ckpt = [] {
    TrainConfig c;
    c.d_model = 32;
    c.n_layers = 1;
    c.n_heads = 2;
    c.context = 128;
    c.batch_size = 1;
    c.epochs = 150;
    c.learning_rate = 1e-2;
    c.seed = 1;
    const std::vector<std::string> corpus{std::string(testing::kHoursCorrectedFull) + kTail};
    return train(c, corpus);
  }();
  return ckpt;
}

}  // namespace

TEST_SUITE("generate") {
  TEST_CASE("memorized derivation: greedy decoding corrects and stops after the answer") {
    const auto& ckpt = memorized();
    CHECK(ckpt.loss_history.back() < 0.05);
    const auto g = generate(ckpt, testing::kHoursPrompt);
    CHECK(testing::kHoursPrompt + g.text == testing::kHoursCorrectedFull);
    CHECK(g.stop == StopReason::AnswerLine);
    CHECK(g.text.starts_with(" <Found a mistake in the previous sentence. Reason: incorrect conversion factor>\n"));
  }

  TEST_CASE("without the answer-line stop the model runs on to EOS") {
    DecodeConfig cfg;
    cfg.stop_after_answer = false;
    const auto g = generate(memorized(), testing::kHoursPrompt, cfg);
    CHECK(g.stop == StopReason::Eos);
    CHECK(testing::kHoursPrompt + g.text == std::string(testing::kHoursCorrectedFull) + kTail);
  }

  TEST_CASE("token budget") {
    DecodeConfig cfg;
    cfg.max_tokens = 0;
    const auto none = generate(memorized(), testing::kHoursPrompt, cfg);
    CHECK(none.text.empty());
    CHECK(none.tokens.empty());
    cfg.max_tokens = 3;
    const auto three = generate(memorized(), testing::kHoursPrompt, cfg);
    CHECK(three.tokens.size() == 3);
    CHECK(three.stop == StopReason::MaxTokens);
  }

  TEST_CASE("greedy decoding is deterministic, sampling follows its seed") {
    CHECK(generate(memorized(), "Question:").text == generate(memorized(), "Question:").text);
    DecodeConfig hot;
    hot.mode = DecodeMode::Temperature;
    hot.temperature = 5.0;
    hot.seed = 9;
    hot.max_tokens = 20;
    CHECK(generate(memorized(), "Question:", hot).tokens == generate(memorized(), "Question:", hot).tokens);
  }

  TEST_CASE("prompt errors") {
    CHECK_THROWS_AS(generate(memorized(), "Question: zebra"), UnknownTokenError);
    std::string long_prompt = "Question:";
    for (int i = 0; i < 130; ++i) long_prompt += " 3";
    CHECK_THROWS_AS(generate(memorized(), long_prompt), WindowError);
    DecodeConfig bad;
    bad.mode = DecodeMode::Temperature;
    bad.temperature = 0.0;
    CHECK_THROWS(generate(memorized(), "Question:", bad));
  }

  TEST_CASE("decode config json") {
    DecodeConfig c;
    c.mode = DecodeMode::Temperature;
    c.temperature = 0.7;
    c.max_tokens = 12;
    const auto j = nlohmann::json(c);
    CHECK(j.at("mode") == "temperature");
    const auto back = j.get<DecodeConfig>();
    CHECK(back.mode == c.mode);
    CHECK(back.temperature == c.temperature);
    CHECK(back.max_tokens == 12);
  }
}
