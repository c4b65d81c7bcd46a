#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/markup.hpp"

namespace insec::taskgen {

enum class TaskKind { RectPerimeter, RectArea, HoursToSeconds, FirstNIntegers, ArithChain };

inline constexpr std::size_t kKindCount = 5;
inline constexpr std::array<TaskKind, kKindCount> kAllKinds = {
    TaskKind::RectPerimeter, TaskKind::RectArea, TaskKind::HoursToSeconds, TaskKind::FirstNIntegers,
    TaskKind::ArithChain};

std::string_view to_string(TaskKind kind) noexcept;
std::optional<TaskKind> kind_from_string(std::string_view name) noexcept;
constexpr std::size_t kind_index(TaskKind kind) noexcept { return static_cast<std::size_t>(kind); }

/// Formulas a rectangle step can state. Only one is correct per kind; the
/// others exist so a corrupted formula can be rendered and propagated.
enum class Formula : std::int64_t { TwiceSum = 0, Product = 1, Sum = 2, TwiceLengthPlusWidth = 3 };

/// A numeric value embedded in a step's text. Names may repeat (list items).
struct Slot {
  std::string name;
  std::int64_t value = 0;
  friend bool operator==(const Slot&, const Slot&) = default;
};

struct Step {
  std::string text;
  std::vector<Slot> slots;
  friend bool operator==(const Step&, const Step&) = default;
};

using Params = std::map<std::string, std::int64_t>;

struct Task {
  TaskKind kind = TaskKind::RectPerimeter;
  Params params;
  std::string question;
  std::vector<Step> steps;  // numbered 1..K
  std::string final_answer;
  std::uint64_t seed = 0;

  friend bool operator==(const Task&, const Task&) = default;
};

struct ParamRanges {
  std::int64_t side_min = 1, side_max = 20;
  std::int64_t hours_min = 1, hours_max = 12;
  std::int64_t n_min = 3, n_max = 15;
  std::int64_t chain_len_min = 2, chain_len_max = 5;  // operand count
  std::int64_t operand_min = 1, operand_max = 20;
};

class TaskError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Builds the clean task for explicit parameters; throws TaskError when the
/// parameters do not fit the kind's schema.
Task make_task(TaskKind kind, const Params& params);

/// Deterministic in (kind, seed, ranges).
Task generate(TaskKind kind, std::uint64_t seed, const ParamRanges& ranges = {});

/// Replaces the values one step produces; later steps recompute from them.
struct StepOverride {
  int step = 0;  // 1-based
  std::vector<Slot> slots;
};

struct Derivation {
  std::vector<Step> steps;
  std::string final_answer;
};

/// Closed-form oracle. With an override, the returned steps after `step` and
/// the final answer are what follows from the overridden values: the answer
/// a reasoner reaches if it builds on the mistake instead of correcting it.
Derivation derive(TaskKind kind, const Params& params, const std::optional<StepOverride>& override_at = {});

/// Text of step `step` when it carries `slots`, in the context of the
/// preceding steps of the clean derivation.
std::string render_step(TaskKind kind, const Params& params, int step, const std::vector<Slot>& slots);

struct VerificationResult {
  bool pass = true;
  std::optional<int> step;  // empty with !pass means the final answer (or question) is wrong
  std::string check;        // slot name, "text", "step-count", "question", "final_answer"
  std::string expected;
  std::string actual;

  explicit operator bool() const noexcept { return pass; }
};

VerificationResult verify(const Task& task);

/// Zero-mistake annotated form of the task.
markup::AnnotatedDocument to_document(const Task& task);

/// Per-kind proportions.
struct Mix {
  std::array<double, kKindCount> weights{};

  static Mix uniform();
  static Mix only(TaskKind kind);
  /// Throws TaskError unless weights are nonnegative and sum to 1 within 1e-9.
  void check() const;
  /// Largest-remainder apportionment of `size` tasks; ties go to the earlier kind.
  [[nodiscard]] std::array<std::size_t, kKindCount> counts(std::size_t size) const;

  friend bool operator==(const Mix&, const Mix&) = default;
};

struct Corpus {
  std::vector<Task> tasks;
  std::uint64_t seed = 0;
  Mix mix;
};

/// Stratified by `mix`; kind order shuffled by the seed; per-task seeds are
/// split from the corpus seed by task index. Parameters already used by a
/// task of the same kind are redrawn a few times before accepting a repeat.
Corpus build_corpus(std::size_t size, const Mix& mix, std::uint64_t seed, const ParamRanges& ranges = {});

void to_json(nlohmann::json& j, const Slot& slot);
void from_json(const nlohmann::json& j, Slot& slot);
void to_json(nlohmann::json& j, const Step& step);
void from_json(const nlohmann::json& j, Step& step);
void to_json(nlohmann::json& j, const Task& task);
void from_json(const nlohmann::json& j, Task& task);
void to_json(nlohmann::json& j, const Mix& mix);
void from_json(const nlohmann::json& j, Mix& mix);
void to_json(nlohmann::json& j, const ParamRanges& ranges);
void from_json(const nlohmann::json& j, ParamRanges& ranges);

/// One task per line, canonical key order, LF terminated.
std::string corpus_to_jsonl(const Corpus& corpus);
std::vector<Task> tasks_from_jsonl(std::string_view text);

}  // namespace insec::taskgen
