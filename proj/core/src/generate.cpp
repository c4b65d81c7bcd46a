#include "insec/generate.hpp"

#include <cmath>

#include <nlohmann/json.hpp>

#include "insec/markup.hpp"
#include "insec/rng.hpp"
#include "text_util.hpp"

namespace insec::lm {

namespace {

TokenId argmax(std::span<const float> logits) {
  TokenId best = 0;
  for (std::size_t i = 1; i < logits.size(); ++i) {
    if (logits[i] > logits[static_cast<std::size_t>(best)]) best = static_cast<TokenId>(i);
  }
  return best;
}

TokenId sample(std::span<const float> logits, double temperature, SplitMix64& rng) {
  double max_logit = logits[0];
  for (float l : logits) max_logit = std::max(max_logit, static_cast<double>(l));
  std::vector<double> weights(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    weights[i] = std::exp((logits[i] - max_logit) / temperature);
    total += weights[i];
  }
  double u = rng.uniform() * total;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    u -= weights[i];
    if (u < 0.0) return static_cast<TokenId>(i);
  }
  return static_cast<TokenId>(weights.size() - 1);
}

bool is_answer_line(std::string_view line) {
  return text::ltrim(line).starts_with(text::trim(markup::kAnswerPrefix));
}

}  // namespace

void DecodeConfig::check() const {
  if (max_tokens < 0) throw std::invalid_argument("max_tokens must be >= 0");
  if (mode == DecodeMode::Temperature && !(temperature > 0.0)) {
    throw std::invalid_argument("temperature must be > 0");
  }
}

void to_json(nlohmann::json& j, const DecodeConfig& c) {
  j = nlohmann::json{{"mode", c.mode == DecodeMode::Greedy ? "greedy" : "temperature"},
                     {"temperature", c.temperature},
                     {"max_tokens", c.max_tokens},
                     {"seed", c.seed},
                     {"stop_after_answer", c.stop_after_answer}};
}

void from_json(const nlohmann::json& j, DecodeConfig& c) {
  DecodeConfig d;
  const auto mode = j.value("mode", std::string("greedy"));
  if (mode == "greedy") {
    c.mode = DecodeMode::Greedy;
  } else if (mode == "temperature") {
    c.mode = DecodeMode::Temperature;
  } else {
    throw std::invalid_argument("unknown decode mode '" + mode + "'");
  }
  c.temperature = j.value("temperature", d.temperature);
  c.max_tokens = j.value("max_tokens", d.max_tokens);
  c.seed = j.value("seed", d.seed);
  c.stop_after_answer = j.value("stop_after_answer", d.stop_after_answer);
}

std::string_view to_string(StopReason r) noexcept {
  switch (r) {
    case StopReason::Eos: return "eos";
    case StopReason::AnswerLine: return "answer_line";
    case StopReason::MaxTokens: return "max_tokens";
    case StopReason::ContextFull: return "context_full";
  }
  return "unknown";
}

Generation generate(const Checkpoint& ckpt, std::string_view prompt, const DecodeConfig& config) {
  config.check();
  std::vector<TokenId> ids{kBos};
  const auto body = ckpt.vocab.encode(prompt);
  ids.insert(ids.end(), body.begin(), body.end());
  if (static_cast<int>(ids.size()) > ckpt.config.context) {
    throw WindowError("prompt of " + std::to_string(ids.size()) + " tokens exceeds the context of " +
                      std::to_string(ckpt.config.context));
  }

  Generation out;
  if (config.max_tokens == 0) return out;

  Decoder decoder(ckpt.config, ckpt.params);
  std::span<const float> logits;
  for (TokenId id : ids) logits = decoder.step(id);

  // Text of the line currently being generated, including its prompt prefix.
  const auto last_newline = prompt.rfind('\n');
  std::string line(last_newline == std::string_view::npos ? prompt : prompt.substr(last_newline + 1));
  SplitMix64 rng(config.seed);

  while (true) {
    const TokenId next = config.mode == DecodeMode::Greedy ? argmax(logits) : sample(logits, config.temperature, rng);
    if (next == kEos) {
      out.stop = StopReason::Eos;
      break;
    }
    if (next == kNewline && config.stop_after_answer && is_answer_line(line)) {
      out.stop = StopReason::AnswerLine;
      break;
    }
    out.tokens.push_back(next);
    const std::string& piece = ckpt.vocab.surface(next);
    if (next != kPad && next != kBos) out.text += piece;
    line = next == kNewline ? std::string() : line + piece;
    if (static_cast<int>(out.tokens.size()) >= config.max_tokens) {
      out.stop = StopReason::MaxTokens;
      break;
    }
    if (decoder.length() >= ckpt.config.context) {
      out.stop = StopReason::ContextFull;
      break;
    }
    logits = decoder.step(next);
  }
  return out;
}

}  // namespace insec::lm
