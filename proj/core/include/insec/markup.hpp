#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json_fwd.hpp>

// Inline correction markup: a reasoning line that is wrong carries a trailing
// tag, and the corrected line follows with the same step number.
//
//   Question: What is the perimeter of a rectangle with length 7 cm and width 3 cm?
//   Reasoning steps:
//       1. The formula for the perimeter of a rectangle is 2 * (length + width).
//       2. Substitute the given values: length = 6 cm, width = 3 cm. <Found a mistake in the previous sentence. Reason: wrong substitution for length>
//       2. Substitute the given values: length = 7 cm, width = 3 cm.
//       3. Calculate the perimeter: 2 * (7 + 3) = 2 * 10 = 20 cm.
//   So the final answer is 20 cm
//
// A "sentence" is one physical line.
namespace insec::markup {

inline constexpr std::string_view kTagPrefix = "<Found a mistake in the previous sentence. Reason:";
inline constexpr std::string_view kTagClose = ">";
inline constexpr std::string_view kQuestionPrefix = "Question: ";
inline constexpr std::string_view kReasoningHeader = "Reasoning steps:";
inline constexpr std::string_view kAnswerPrefix = "So the final answer is ";
inline constexpr std::string_view kIndent = "    ";

struct CorrectionTag {
  std::string reason;

  /// Nonempty, no newline, no '>'.
  static bool valid_reason(std::string_view reason) noexcept;
  /// `<Found a mistake in the previous sentence. Reason: {reason}>`
  [[nodiscard]] std::string serialize() const;
  /// Inverse of serialize(); the whole input must be exactly one tag.
  static std::optional<CorrectionTag> parse(std::string_view text);

  friend bool operator==(const CorrectionTag&, const CorrectionTag&) = default;
};

// UntaggedAnomaly is only produced by lenient parsing: an untagged line that
// is immediately restated under the same step number.
enum class UnitKind { Clean, Mistake, UntaggedAnomaly };

std::string_view to_string(UnitKind kind) noexcept;
std::optional<UnitKind> unit_kind_from_string(std::string_view name) noexcept;

struct ReasoningUnit {
  int index = 0;
  std::string text;
  UnitKind kind = UnitKind::Clean;
  std::optional<std::string> reason;  // present iff kind == Mistake

  static ReasoningUnit clean(int index, std::string text);
  static ReasoningUnit mistake(int index, std::string text, std::string reason);

  friend bool operator==(const ReasoningUnit&, const ReasoningUnit&) = default;
};

struct AnnotatedDocument {
  std::string question;
  std::vector<ReasoningUnit> units;
  std::string final_answer;

  [[nodiscard]] std::size_t mistake_count() const noexcept;

  friend bool operator==(const AnnotatedDocument&, const AnnotatedDocument&) = default;
};

enum class Rule {
  InvalidQuestion,
  InvalidFinalAnswer,
  NoSteps,
  InvalidIndex,
  InvalidText,
  InvalidReason,
  MissingReason,
  ReasonOnCleanUnit,
  UntaggedAnomaly,
  MistakeMustBeCorrected,
  ConsecutiveMistakes,
  CorrectionIndexMismatch,
  NonConsecutiveIndex,
};

/// Kebab-case rule identifier, e.g. "mistake-must-be-corrected".
std::string_view rule_name(Rule rule) noexcept;

struct Violation {
  std::optional<std::size_t> unit;  // position in units; empty for document-level rules
  Rule rule;
  std::string detail;

  friend bool operator==(const Violation&, const Violation&) = default;
};

/// Empty iff every document invariant holds.
std::vector<Violation> validate(const AnnotatedDocument& doc);

class ValidationError : public std::runtime_error {
 public:
  explicit ValidationError(std::vector<Violation> violations);
  [[nodiscard]] const std::vector<Violation>& violations() const noexcept { return violations_; }

 private:
  std::vector<Violation> violations_;
};

/// Canonical text (LF line endings, four-space step indentation, no trailing
/// newline). Throws ValidationError on an invalid document.
std::string render(const AnnotatedDocument& doc);

/// The same document with every Mistake unit removed.
AnnotatedDocument drop_mistakes(const AnnotatedDocument& doc);

enum class ParseMode {
  Strict,   // training corpora: any deviation from the canonical form is an error
  Lenient,  // model output: tolerate indentation drift, uncorrected or untagged mistakes
};

enum class ParseErrorKind {
  MissingQuestion,
  MissingReasoningHeader,
  MalformedStep,
  MalformedTag,
  MissingSteps,
  UncorrectedMistake,
  UntaggedDuplicate,
  IndexGap,
  MissingAnswer,
  TrailingContent,
};

std::string_view to_string(ParseErrorKind kind) noexcept;

struct ParseError {
  ParseErrorKind kind;
  std::size_t line;  // 1-based
  std::string message;
};

using ParseResult = std::variant<AnnotatedDocument, ParseError>;

/// Never throws. In lenient mode the returned document may violate invariants;
/// run validate() on it to see which.
ParseResult parse(std::string_view text, ParseMode mode = ParseMode::Strict);

struct StripWarning {
  std::size_t line;  // 1-based
  std::string message;
};

struct StripResult {
  std::string text;
  std::vector<StripWarning> warnings;
};

/// Deletes each mistake sentence together with its tag. A tag that opens a
/// line refers to the previous kept line; a tag with no previous line is
/// dropped on its own and reported as a warning. Idempotent, identity on
/// tag-free text.
StripResult strip_report(std::string_view text);
std::string strip(std::string_view text);

void to_json(nlohmann::json& j, const ReasoningUnit& unit);
void from_json(const nlohmann::json& j, ReasoningUnit& unit);
void to_json(nlohmann::json& j, const AnnotatedDocument& doc);
void from_json(const nlohmann::json& j, AnnotatedDocument& doc);

}  // namespace insec::markup
