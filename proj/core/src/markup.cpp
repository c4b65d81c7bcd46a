#include "insec/markup.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_util.hpp"

namespace insec::markup {

namespace {

bool has_delimiter(std::string_view s) noexcept {
  return s.find('<') != std::string_view::npos || s.find('>') != std::string_view::npos;
}

bool valid_line_text(std::string_view s) noexcept {
  return !s.empty() && !text::contains_newline(s) && !has_delimiter(s) && text::trim(s) == s;
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream out;
  out << "invalid annotated document:";
  for (const auto& v : violations) {
    out << " [" << rule_name(v.rule);
    if (v.unit) out << " @unit " << *v.unit;
    if (!v.detail.empty()) out << ": " << v.detail;
    out << "]";
  }
  return out.str();
}

struct RawStep {
  std::size_t line;
  int index;
  std::string text;
  std::optional<std::string> reason;
};

// Parses "<indent>N. text[ <tag>]". Returns an error kind on failure.
std::variant<RawStep, ParseErrorKind> parse_step_line(std::string_view line, std::size_t line_no,
                                                       ParseMode mode) {
  std::string_view rest = line;
  if (mode == ParseMode::Strict) {
    if (!rest.starts_with(kIndent)) return ParseErrorKind::MalformedStep;
    rest.remove_prefix(kIndent.size());
  } else {
    rest = text::ltrim(rest);
  }
  int index = 0;
  const auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), index);
  if (ec != std::errc{} || index < 1) return ParseErrorKind::MalformedStep;
  rest.remove_prefix(static_cast<std::size_t>(ptr - rest.data()));
  if (!rest.starts_with(". ")) return ParseErrorKind::MalformedStep;
  rest.remove_prefix(2);

  RawStep step{line_no, index, {}, std::nullopt};
  const auto tag_pos = rest.find(kTagPrefix);
  std::string_view body = rest;
  if (tag_pos != std::string_view::npos) {
    body = rest.substr(0, tag_pos);
    if (!body.ends_with(' ')) return ParseErrorKind::MalformedTag;
    body.remove_suffix(1);
    if (mode == ParseMode::Lenient) body = text::rtrim(body);
    std::string_view tag_text = rest.substr(tag_pos);
    if (mode == ParseMode::Lenient) tag_text = text::rtrim(tag_text);
    auto tag = CorrectionTag::parse(tag_text);
    if (!tag) return ParseErrorKind::MalformedTag;
    step.reason = std::move(tag->reason);
  } else if (mode == ParseMode::Lenient) {
    body = text::rtrim(body);
  }
  if (has_delimiter(body)) return ParseErrorKind::MalformedTag;
  if (body.empty() || text::trim(body) != body) return ParseErrorKind::MalformedStep;
  step.text = std::string(body);
  return step;
}

ParseError make_error(ParseErrorKind kind, std::size_t line, std::string message) {
  return ParseError{kind, line, std::move(message)};
}

}  // namespace

bool CorrectionTag::valid_reason(std::string_view reason) noexcept {
  return !reason.empty() && !text::contains_newline(reason) &&
         reason.find('>') == std::string_view::npos;
}

std::string CorrectionTag::serialize() const {
  std::string out;
  out.reserve(kTagPrefix.size() + reason.size() + 2);
  out.append(kTagPrefix).append(" ").append(reason).append(kTagClose);
  return out;
}

std::optional<CorrectionTag> CorrectionTag::parse(std::string_view text) {
  if (!text.starts_with(kTagPrefix)) return std::nullopt;
  text.remove_prefix(kTagPrefix.size());
  if (!text.starts_with(' ') || !text.ends_with(kTagClose)) return std::nullopt;
  text.remove_prefix(1);
  text.remove_suffix(kTagClose.size());
  if (!valid_reason(text)) return std::nullopt;
  return CorrectionTag{std::string(text)};
}

std::string_view to_string(UnitKind kind) noexcept {
  switch (kind) {
    case UnitKind::Clean: return "CLEAN";
    case UnitKind::Mistake: return "MISTAKE";
    case UnitKind::UntaggedAnomaly: return "UNTAGGED_ANOMALY";
  }
  return "?";
}

std::optional<UnitKind> unit_kind_from_string(std::string_view name) noexcept {
  if (name == "CLEAN") return UnitKind::Clean;
  if (name == "MISTAKE") return UnitKind::Mistake;
  if (name == "UNTAGGED_ANOMALY") return UnitKind::UntaggedAnomaly;
  return std::nullopt;
}

ReasoningUnit ReasoningUnit::clean(int index, std::string text) {
  return ReasoningUnit{index, std::move(text), UnitKind::Clean, std::nullopt};
}

ReasoningUnit ReasoningUnit::mistake(int index, std::string text, std::string reason) {
  return ReasoningUnit{index, std::move(text), UnitKind::Mistake, std::move(reason)};
}

std::size_t AnnotatedDocument::mistake_count() const noexcept {
  return static_cast<std::size_t>(std::count_if(
      units.begin(), units.end(), [](const ReasoningUnit& u) { return u.kind == UnitKind::Mistake; }));
}

std::string_view rule_name(Rule rule) noexcept {
  switch (rule) {
    case Rule::InvalidQuestion: return "invalid-question";
    case Rule::InvalidFinalAnswer: return "invalid-final-answer";
    case Rule::NoSteps: return "no-steps";
    case Rule::InvalidIndex: return "invalid-index";
    case Rule::InvalidText: return "invalid-text";
    case Rule::InvalidReason: return "invalid-reason";
    case Rule::MissingReason: return "missing-reason";
    case Rule::ReasonOnCleanUnit: return "reason-on-clean-unit";
    case Rule::UntaggedAnomaly: return "untagged-anomaly";
    case Rule::MistakeMustBeCorrected: return "mistake-must-be-corrected";
    case Rule::ConsecutiveMistakes: return "consecutive-mistakes";
    case Rule::CorrectionIndexMismatch: return "correction-index-mismatch";
    case Rule::NonConsecutiveIndex: return "non-consecutive-index";
  }
  return "?";
}

std::vector<Violation> validate(const AnnotatedDocument& doc) {
  std::vector<Violation> out;
  if (!valid_line_text(doc.question)) out.push_back({std::nullopt, Rule::InvalidQuestion, {}});
  if (!valid_line_text(doc.final_answer)) out.push_back({std::nullopt, Rule::InvalidFinalAnswer, {}});
  if (doc.units.empty()) out.push_back({std::nullopt, Rule::NoSteps, {}});

  int expected_clean = 1;
  for (std::size_t i = 0; i < doc.units.size(); ++i) {
    const auto& u = doc.units[i];
    if (u.index < 1) out.push_back({i, Rule::InvalidIndex, std::to_string(u.index)});
    if (!valid_line_text(u.text)) out.push_back({i, Rule::InvalidText, {}});

    switch (u.kind) {
      case UnitKind::Clean:
        if (u.reason) out.push_back({i, Rule::ReasonOnCleanUnit, {}});
        if (u.index != expected_clean) {
          out.push_back({i, Rule::NonConsecutiveIndex,
                         "expected " + std::to_string(expected_clean) + ", got " + std::to_string(u.index)});
        }
        expected_clean = u.index + 1;
        break;
      case UnitKind::UntaggedAnomaly:
        out.push_back({i, Rule::UntaggedAnomaly, {}});
        break;
      case UnitKind::Mistake: {
        if (!u.reason) {
          out.push_back({i, Rule::MissingReason, {}});
        } else if (!CorrectionTag::valid_reason(*u.reason)) {
          out.push_back({i, Rule::InvalidReason, {}});
        }
        if (i + 1 == doc.units.size()) {
          out.push_back({i, Rule::MistakeMustBeCorrected, "mistake is the last unit"});
        } else if (const auto& next = doc.units[i + 1]; next.kind == UnitKind::Mistake) {
          out.push_back({i, Rule::ConsecutiveMistakes, {}});
        } else if (next.index != u.index) {
          out.push_back({i, Rule::CorrectionIndexMismatch,
                         "mistake " + std::to_string(u.index) + " corrected by " + std::to_string(next.index)});
        }
        break;
      }
    }
  }
  return out;
}

ValidationError::ValidationError(std::vector<Violation> violations)
    : std::runtime_error(describe(violations)), violations_(std::move(violations)) {}

std::string render(const AnnotatedDocument& doc) {
  if (auto violations = validate(doc); !violations.empty()) throw ValidationError(std::move(violations));
  std::string out;
  out.append(kQuestionPrefix).append(doc.question).append("\n");
  out.append(kReasoningHeader).append("\n");
  for (const auto& u : doc.units) {
    out.append(kIndent).append(std::to_string(u.index)).append(". ").append(u.text);
    if (u.kind == UnitKind::Mistake) out.append(" ").append(CorrectionTag{*u.reason}.serialize());
    out.append("\n");
  }
  out.append(kAnswerPrefix).append(doc.final_answer);
  return out;
}

AnnotatedDocument drop_mistakes(const AnnotatedDocument& doc) {
  AnnotatedDocument out{doc.question, {}, doc.final_answer};
  std::copy_if(doc.units.begin(), doc.units.end(), std::back_inserter(out.units),
               [](const ReasoningUnit& u) { return u.kind != UnitKind::Mistake; });
  return out;
}

std::string_view to_string(ParseErrorKind kind) noexcept {
  switch (kind) {
    case ParseErrorKind::MissingQuestion: return "missing-question";
    case ParseErrorKind::MissingReasoningHeader: return "missing-reasoning-header";
    case ParseErrorKind::MalformedStep: return "malformed-step";
    case ParseErrorKind::MalformedTag: return "malformed-tag";
    case ParseErrorKind::MissingSteps: return "missing-steps";
    case ParseErrorKind::UncorrectedMistake: return "uncorrected-mistake";
    case ParseErrorKind::UntaggedDuplicate: return "untagged-duplicate";
    case ParseErrorKind::IndexGap: return "index-gap";
    case ParseErrorKind::MissingAnswer: return "missing-answer";
    case ParseErrorKind::TrailingContent: return "trailing-content";
  }
  return "?";
}

ParseResult parse(std::string_view input, ParseMode mode) {
  const bool lenient = mode == ParseMode::Lenient;
  auto lines = text::split_lines(input);
  if (!lines.empty() && lines.back().empty()) lines.pop_back();

  if (lines.empty() || !lines[0].starts_with(kQuestionPrefix)) {
    return make_error(ParseErrorKind::MissingQuestion, 1, "expected a line starting with 'Question: '");
  }
  AnnotatedDocument doc;
  std::string_view question = lines[0].substr(kQuestionPrefix.size());
  if (lenient) question = text::trim(question);
  if (question.empty()) return make_error(ParseErrorKind::MissingQuestion, 1, "empty question");
  doc.question = std::string(question);

  const bool header_ok = lines.size() > 1 && (lenient ? text::trim(lines[1]) == kReasoningHeader
                                                      : lines[1] == kReasoningHeader);
  if (!header_ok) {
    return make_error(ParseErrorKind::MissingReasoningHeader, 2, "expected 'Reasoning steps:'");
  }

  std::vector<RawStep> raw;
  std::size_t i = 2;
  std::optional<std::size_t> answer_line;
  for (; i < lines.size(); ++i) {
    const std::string_view line = lines[i];
    const std::string_view probe = lenient ? text::ltrim(line) : line;
    if (probe.starts_with(kAnswerPrefix) || (lenient && probe.starts_with(text::rtrim(kAnswerPrefix)))) {
      answer_line = i;
      break;
    }
    auto step = parse_step_line(line, i + 1, mode);
    if (auto* err = std::get_if<ParseErrorKind>(&step)) {
      return make_error(*err, i + 1, *err == ParseErrorKind::MalformedTag ? "malformed correction tag"
                                                                          : "expected '    N. sentence'");
    }
    raw.push_back(std::move(std::get<RawStep>(step)));
  }

  if (raw.empty() && !lenient) {
    return make_error(ParseErrorKind::MissingSteps, i + 1, "no reasoning steps");
  }

  for (std::size_t k = 0; k < raw.size(); ++k) {
    const auto& r = raw[k];
    const RawStep* next = k + 1 < raw.size() ? &raw[k + 1] : nullptr;
    ReasoningUnit unit{r.index, r.text, UnitKind::Clean, std::nullopt};
    if (r.reason) {
      unit.kind = UnitKind::Mistake;
      unit.reason = r.reason;
      if (!lenient && (next == nullptr || next->reason || next->index != r.index)) {
        return make_error(ParseErrorKind::UncorrectedMistake, r.line,
                          "step " + std::to_string(r.index) + " is tagged but not followed by its correction");
      }
    } else if (next != nullptr && !next->reason && next->index == r.index) {
      if (!lenient) {
        return make_error(ParseErrorKind::UntaggedDuplicate, next->line,
                          "step " + std::to_string(r.index) + " repeated without a correction tag");
      }
      unit.kind = UnitKind::UntaggedAnomaly;
    }
    doc.units.push_back(std::move(unit));
  }

  if (!lenient) {
    int expected = 1;
    for (std::size_t k = 0; k < doc.units.size(); ++k) {
      if (doc.units[k].kind != UnitKind::Clean) continue;
      if (doc.units[k].index != expected) {
        return make_error(ParseErrorKind::IndexGap, raw[k].line,
                          "expected step " + std::to_string(expected) + ", got " +
                              std::to_string(doc.units[k].index));
      }
      ++expected;
    }
  }

  if (!answer_line) {
    if (!lenient) return make_error(ParseErrorKind::MissingAnswer, lines.size() + 1, "missing final answer line");
    return doc;
  }
  std::string_view answer = text::ltrim(lines[*answer_line]);
  answer.remove_prefix(std::min(answer.size(), kAnswerPrefix.size()));
  if (lenient) answer = text::trim(answer);
  if (answer.empty() && !lenient) {
    return make_error(ParseErrorKind::MissingAnswer, *answer_line + 1, "empty final answer");
  }
  doc.final_answer = std::string(answer);
  if (!lenient && *answer_line + 1 != lines.size()) {
    return make_error(ParseErrorKind::TrailingContent, *answer_line + 2, "content after the final answer");
  }
  return doc;
}

StripResult strip_report(std::string_view input) {
  auto raw_lines = text::split_lines(input);
  std::vector<std::string> lines(raw_lines.begin(), raw_lines.end());
  std::vector<bool> keep(lines.size(), true);
  StripResult result;

  for (std::size_t i = 0; i < lines.size(); ++i) {
    std::size_t pos;
    while ((pos = lines[i].find(kTagPrefix)) != std::string::npos) {
      const std::string_view line = lines[i];
      const std::string_view before = line.substr(0, pos);
      if (text::trim(before).empty()) {
        // The tag opens the line: the sentence it refers to is the previous kept line.
        std::size_t j = i;
        while (j > 0 && !keep[j - 1]) --j;
        if (j > 0) {
          keep[j - 1] = false;
        } else {
          result.warnings.push_back({i + 1, "correction tag with no preceding sentence"});
        }
      }
      const auto close = line.find(kTagClose, pos + kTagPrefix.size());
      const std::string_view after =
          close == std::string_view::npos ? std::string_view{} : text::ltrim(line.substr(close + kTagClose.size()));
      if (text::trim(after).empty()) {
        keep[i] = false;
        break;
      }
      const std::size_t indent = line.size() - text::ltrim(line).size();
      lines[i] = std::string(line.substr(0, indent)) + std::string(after);
    }
  }

  bool first = true;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (!keep[i]) continue;
    if (!first) result.text.push_back('\n');
    result.text.append(lines[i]);
    first = false;
  }
  // split_lines yields a final empty line for trailing LF; it survives as "\n" above.
  return result;
}

std::string strip(std::string_view text) { return strip_report(text).text; }

void to_json(nlohmann::json& j, const ReasoningUnit& unit) {
  j = nlohmann::json{{"index", unit.index}, {"text", unit.text}, {"kind", to_string(unit.kind)}};
  if (unit.reason) j["reason"] = *unit.reason;
}

void from_json(const nlohmann::json& j, ReasoningUnit& unit) {
  unit.index = j.at("index").get<int>();
  unit.text = j.at("text").get<std::string>();
  const auto kind = unit_kind_from_string(j.at("kind").get<std::string>());
  if (!kind) throw std::invalid_argument("unknown unit kind: " + j.at("kind").get<std::string>());
  unit.kind = *kind;
  unit.reason.reset();
  if (auto it = j.find("reason"); it != j.end()) unit.reason = it->get<std::string>();
}

void to_json(nlohmann::json& j, const AnnotatedDocument& doc) {
  j = nlohmann::json{{"question", doc.question}, {"units", doc.units}, {"final_answer", doc.final_answer}};
}

void from_json(const nlohmann::json& j, AnnotatedDocument& doc) {
  doc.question = j.at("question").get<std::string>();
  doc.units = j.at("units").get<std::vector<ReasoningUnit>>();
  doc.final_answer = j.at("final_answer").get<std::string>();
}

}  // namespace insec::markup
