#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/markup.hpp"
#include "insec/rng.hpp"
#include "insec/taskgen.hpp"

namespace insec::corrupt {

enum class Strategy { WrongSubstitution, WrongConversionFactor, OmitElements, ArithmeticSlip, WrongFormula };

inline constexpr std::size_t kStrategyCount = 5;
inline constexpr std::array<Strategy, kStrategyCount> kAllStrategies = {
    Strategy::WrongSubstitution, Strategy::WrongConversionFactor, Strategy::OmitElements,
    Strategy::ArithmeticSlip, Strategy::WrongFormula};

std::string_view to_string(Strategy s) noexcept;
std::optional<Strategy> strategy_from_string(std::string_view name) noexcept;

/// One falsified rewrite of a reasoning step.
struct Corruption {
  int step_index = 0;  // 1-based
  std::string original;
  std::string corrupted;
  Strategy strategy = Strategy::WrongSubstitution;
  std::string reason;
  std::vector<taskgen::Slot> corrupted_slots;

  friend bool operator==(const Corruption&, const Corruption&) = default;
};

class EligibilityError : public std::invalid_argument {
 public:
  EligibilityError(const std::string& what, std::vector<Strategy> applicable);
  [[nodiscard]] const std::vector<Strategy>& applicable() const noexcept { return applicable_; }

 private:
  std::vector<Strategy> applicable_;
};

/// Strategies that can falsify step `step` of `task`, in kAllStrategies order.
std::vector<Strategy> eligible_strategies(const taskgen::Task& task, int step);

// Explicit edits. corrupt_step() draws one of these at random; tests and the
// evaluation suite may also supply them directly.
struct Substitute {  // WrongSubstitution: a copied value is replaced
  std::string slot;  // "length", "width" (rectangles) or "right" (chains)
  std::int64_t value;
};
struct ReplaceFactor {  // WrongConversionFactor
  std::int64_t value;
};
struct Omit {  // OmitElements: drop `count` consecutive list items starting at value `first`
  std::int64_t first;
  std::int64_t count;
};
struct Slip {        // ArithmeticSlip: a computed value is wrong
  std::string slot;  // "sum" or "result"
  std::int64_t value;
};
struct ReplaceFormula {  // WrongFormula
  taskgen::Formula formula;
};

using Edit = std::variant<Substitute, ReplaceFactor, Omit, Slip, ReplaceFormula>;

/// Throws EligibilityError when the strategy does not apply to the step, and
/// std::invalid_argument when the edit does not match the strategy or would
/// not change the step.
Corruption apply_edit(const taskgen::Task& task, int step, Strategy strategy, const Edit& edit);

Corruption corrupt_step(const taskgen::Task& task, int step, Strategy strategy, SplitMix64& rng);

/// The task with one step replaced by its corrupted form (for re-verification).
taskgen::Task with_corruption(const taskgen::Task& task, const Corruption& c);

/// True iff the corrupted step fails the task oracle.
bool is_falsified(const taskgen::Task& task, const Corruption& c);

/// Final answer reached by building on the corrupted step instead of correcting it.
std::string propagated_answer(const taskgen::Task& task, const Corruption& c);

struct AnnotationConfig {
  double rate = 0.15;
  std::uint64_t seed = 0;
  std::vector<Strategy> strategies{kAllStrategies.begin(), kAllStrategies.end()};
  std::optional<std::size_t> max_mistakes_per_doc;
  // Independent annotations of the whole task list, concatenated.
  std::size_t passes = 1;

  /// Throws std::invalid_argument when rate is outside [0, 1], passes is 0 or no strategy is enabled.
  void check() const;
};

struct AnnotatedTask {
  markup::AnnotatedDocument document;
  std::vector<Corruption> corruptions;
};

/// Every step is corrupted independently with probability `rate`. A corrupted
/// step appears as its mistake (tagged with the reason) immediately followed by
/// the correct step under the same number; later steps use the correct values.
AnnotatedTask annotate(const taskgen::Task& task, const AnnotationConfig& config, SplitMix64& rng);

/// Document for a fixed set of corruptions (at most one per step).
markup::AnnotatedDocument annotate_with(const taskgen::Task& task, const std::vector<Corruption>& corruptions);

struct AuditStats {
  std::size_t documents = 0;
  std::size_t total_steps = 0;
  std::size_t corrupted_steps = 0;
  std::array<std::size_t, kStrategyCount> per_strategy{};
  std::size_t falsified = 0;

  /// Absent for an empty corpus.
  [[nodiscard]] std::optional<double> empirical_rate() const;
  /// Fraction of corruptions that fail the oracle; absent when nothing was corrupted.
  [[nodiscard]] std::optional<double> falsity_rate() const;
};

struct AnnotatedCorpus {
  std::vector<AnnotatedTask> documents;
  AuditStats stats;
};

/// Pass p of task i draws from SplitMix64(config.seed).split(p * tasks.size() + i)
/// and lands at the same position in `documents`.
AnnotatedCorpus annotate_corpus(const std::vector<taskgen::Task>& tasks, const AnnotationConfig& config);

void to_json(nlohmann::json& j, const Corruption& c);
void from_json(const nlohmann::json& j, Corruption& c);
void to_json(nlohmann::json& j, const AuditStats& stats);

/// One markup document per line.
std::string documents_to_jsonl(const AnnotatedCorpus& corpus);
std::vector<markup::AnnotatedDocument> documents_from_jsonl(std::string_view text);

}  // namespace insec::corrupt
