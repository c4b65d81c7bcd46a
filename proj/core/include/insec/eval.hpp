#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "insec/corruptor.hpp"
#include "insec/generate.hpp"
#include "insec/taskgen.hpp"

namespace insec::eval {

/// A task whose reasoning is cut off right after a planted mistake. The
/// matching control prompt carries the correct step instead.
struct ForcedErrorCase {
  std::size_t id = 0;
  taskgen::Task task;
  corrupt::Corruption planted;
  std::string prompt;
  std::string control_prompt;
  std::string expected_answer;
  std::string propagated_answer;  // answer reached by building on the mistake

  friend bool operator==(const ForcedErrorCase&, const ForcedErrorCase&) = default;
};

struct Suite {
  std::vector<ForcedErrorCase> cases;
  std::uint64_t seed = 0;
  taskgen::Mix mix;

  /// SHA-256 of to_jsonl().
  [[nodiscard]] std::string fingerprint() const;
  [[nodiscard]] std::string to_jsonl() const;
};

/// Question, reasoning header and steps 1..step-1 of the task, then the
/// given text as step `step`, with no trailing newline.
std::string prompt_with_step(const taskgen::Task& task, int step, std::string_view step_text);

/// Builds a case from an explicit corruption.
ForcedErrorCase make_case(std::size_t id, const taskgen::Task& task, const corrupt::Corruption& planted);

/// 3 hours into seconds with "There are 50 minutes in 1 hour." planted.
ForcedErrorCase reference_case();

/// Deterministic in (n, mix, seed, ranges). Tasks come from build_corpus with
/// the same seed. For each case the step is uniform over corruptible steps
/// and the strategy uniform over those eligible for it. Corruptions whose
/// propagated answer equals the correct one are redrawn. Throws
/// std::invalid_argument when n is 0.
Suite make_suite(std::size_t n, const taskgen::Mix& mix, std::uint64_t seed, const taskgen::ParamRanges& ranges = {});

void to_json(nlohmann::json& j, const ForcedErrorCase& c);
void from_json(const nlohmann::json& j, ForcedErrorCase& c);
Suite suite_from_jsonl(std::string_view text);

class EvalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Everything the metrics depend on for one generation.
struct Transcript {
  std::size_t case_id = 0;
  bool control = false;
  taskgen::TaskKind kind = taskgen::TaskKind::RectPerimeter;
  corrupt::Strategy strategy = corrupt::Strategy::WrongSubstitution;
  int planted_step = 0;
  std::string prompt;
  std::string continuation;
  std::string expected_answer;

  // Derived by score().
  std::string stripped;
  std::optional<std::string> answer_raw;
  std::optional<std::string> answer_stripped;
  bool triggered = false;      // correction tag for the planted step opens the continuation
  bool any_tag = false;        // a tag anywhere in the continuation
  bool misplaced_tag = false;  // a tag, but not addressing the planted step
  bool correct_raw = false;
  bool correct_stripped = false;
};

/// Fills the derived fields from prompt, continuation and expected answer.
/// The first completed line is the prompt's last line plus the continuation up
/// to the first newline; a correction is triggered when that line carries a
/// well-formed tag, or when it carries none and the next line is a lone tag.
void score(Transcript& t);

/// Text after "So the final answer is " on the last answer line, if any.
std::optional<std::string> final_answer(std::string_view text);

struct Breakdown {
  std::size_t n_cases = 0;
  std::size_t n_controls = 0;
  double correction_trigger_rate = 0.0;
  double false_correction_rate = 0.0;
  double final_accuracy_stripped = 0.0;
  double final_accuracy_raw = 0.0;
  double misplaced_tag_rate = 0.0;
  double control_accuracy_stripped = 0.0;
};

struct EvalReport {
  std::string label;
  std::string suite_fingerprint;
  Breakdown overall;
  std::map<std::string, Breakdown> per_kind;
  std::map<std::string, Breakdown> per_strategy;
};

/// Pure function of the transcripts: case rates use forced-error
/// transcripts, false corrections use controls only.
EvalReport report_from_transcripts(const std::vector<Transcript>& transcripts, std::string label,
                                   std::string suite_fingerprint);

using Generator = std::function<std::string(std::string_view prompt)>;

struct Evaluation {
  EvalReport report;
  std::vector<Transcript> transcripts;  // cases then controls, each in suite order
};

/// Throws EvalError for an empty suite.
Evaluation evaluate(const Generator& generate, const Suite& suite, std::string label);

/// Throws EvalError naming every suite piece missing from the checkpoint vocabulary.
Evaluation evaluate(const lm::Checkpoint& ckpt, const Suite& suite, const lm::DecodeConfig& decode, std::string label);

void to_json(nlohmann::json& j, const Transcript& t);
void from_json(const nlohmann::json& j, Transcript& t);
std::string transcripts_to_jsonl(const std::vector<Transcript>& transcripts);
std::vector<Transcript> transcripts_from_jsonl(std::string_view text);

void to_json(nlohmann::json& j, const Breakdown& b);
void from_json(const nlohmann::json& j, Breakdown& b);
void to_json(nlohmann::json& j, const EvalReport& r);
void from_json(const nlohmann::json& j, EvalReport& r);

struct Thresholds {
  double min_trigger_rate = 0.5;
  double min_trigger_delta = 0.4;
  double min_accuracy_delta = 0.3;  // stripped accuracy (InSeC) minus raw accuracy (baseline)
  double max_baseline_trigger_rate = 0.05;
  double max_false_correction_rate = 0.2;
};

void to_json(nlohmann::json& j, const Thresholds& t);
void from_json(const nlohmann::json& j, Thresholds& t);

struct Check {
  std::string name;
  double value = 0.0;
  double threshold = 0.0;
  bool at_least = true;  // value >= threshold, otherwise value <= threshold
  bool pass = false;
};

struct ComparisonSummary {
  std::string suite_fingerprint;
  double trigger_delta = 0.0;
  double false_correction_delta = 0.0;
  double accuracy_stripped_delta = 0.0;
  double accuracy_raw_delta = 0.0;
  double accuracy_delta = 0.0;  // stripped (InSeC) minus raw (baseline)
  std::vector<Check> checks;
  bool pass = false;
};

class ComparisonError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Throws ComparisonError when the reports cover different suites.
ComparisonSummary compare(const EvalReport& insec, const EvalReport& baseline, const Thresholds& thresholds = {});

void to_json(nlohmann::json& j, const Check& c);
void to_json(nlohmann::json& j, const ComparisonSummary& s);

}  // namespace insec::eval
