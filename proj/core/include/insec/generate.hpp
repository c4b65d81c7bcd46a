#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/train.hpp"

namespace insec::lm {

enum class DecodeMode { Greedy, Temperature };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::Greedy;
  double temperature = 1.0;
  int max_tokens = 256;
  std::uint64_t seed = 0;  // temperature sampling only
  /// Stop at the newline that ends a "So the final answer is" line.
  bool stop_after_answer = true;

  /// Throws std::invalid_argument for a negative budget or nonpositive temperature.
  void check() const;
};

void to_json(nlohmann::json& j, const DecodeConfig& c);
void from_json(const nlohmann::json& j, DecodeConfig& c);

enum class StopReason { Eos, AnswerLine, MaxTokens, ContextFull };
std::string_view to_string(StopReason r) noexcept;

struct Generation {
  std::string text;  // continuation only
  std::vector<TokenId> tokens;
  StopReason stop = StopReason::MaxTokens;
};

/// Greedy decoding picks the lowest id among tied maxima. Throws
/// UnknownTokenError when the prompt has pieces outside the vocabulary and
/// WindowError when BOS + prompt does not fit the context.
Generation generate(const Checkpoint& ckpt, std::string_view prompt, const DecodeConfig& config = {});

}  // namespace insec::lm
