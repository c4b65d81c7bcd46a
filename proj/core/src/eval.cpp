#include "insec/eval.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "insec/hash.hpp"
#include "insec/markup.hpp"
#include "text_util.hpp"

namespace insec::eval {

namespace {

constexpr int kCorruptionRedraws = 32;

std::string_view last_line(std::string_view text) {
  const auto nl = text.rfind('\n');
  return nl == std::string_view::npos ? text : text.substr(nl + 1);
}

// True when `line` holds a complete tag: prefix, then a '>' later on.
bool has_tag(std::string_view line) {
  const auto at = line.find(markup::kTagPrefix);
  if (at == std::string_view::npos) return false;
  return line.find(markup::kTagClose, at + markup::kTagPrefix.size()) != std::string_view::npos;
}

bool is_lone_tag(std::string_view line) {
  const auto trimmed = text::trim(line);
  if (!trimmed.starts_with(markup::kTagPrefix)) return false;
  const auto close = trimmed.find(markup::kTagClose, markup::kTagPrefix.size());
  return close != std::string_view::npos && markup::CorrectionTag::parse(trimmed.substr(0, close + 1)).has_value();
}

double ratio(std::size_t num, std::size_t den) { return den ? static_cast<double>(num) / static_cast<double>(den) : 0.0; }

struct Tally {
  std::size_t cases = 0, controls = 0, triggered = 0, false_corrections = 0, correct_stripped = 0, correct_raw = 0,
              misplaced = 0, control_correct = 0;

  void add(const Transcript& t) {
    if (t.control) {
      ++controls;
      false_corrections += t.any_tag;
      control_correct += t.correct_stripped;
    } else {
      ++cases;
      triggered += t.triggered;
      correct_stripped += t.correct_stripped;
      correct_raw += t.correct_raw;
      misplaced += t.misplaced_tag;
    }
  }

  [[nodiscard]] Breakdown breakdown() const {
    return Breakdown{cases,
                     controls,
                     ratio(triggered, cases),
                     ratio(false_corrections, controls),
                     ratio(correct_stripped, cases),
                     ratio(correct_raw, cases),
                     ratio(misplaced, cases),
                     ratio(control_correct, controls)};
  }
};

}  // namespace

std::string prompt_with_step(const taskgen::Task& task, int step, std::string_view step_text) {
  if (step < 1 || step > static_cast<int>(task.steps.size())) throw std::out_of_range("step index out of range");
  std::string out(markup::kQuestionPrefix);
  out += task.question;
  out += '\n';
  out += markup::kReasoningHeader;
  for (int i = 1; i <= step; ++i) {
    out += '\n';
    out += markup::kIndent;
    out += std::to_string(i) + ". ";
    out += i == step ? step_text : std::string_view(task.steps[static_cast<std::size_t>(i - 1)].text);
  }
  return out;
}

ForcedErrorCase make_case(std::size_t id, const taskgen::Task& task, const corrupt::Corruption& planted) {
  ForcedErrorCase c;
  c.id = id;
  c.task = task;
  c.planted = planted;
  c.prompt = prompt_with_step(task, planted.step_index, planted.corrupted);
  c.control_prompt = prompt_with_step(task, planted.step_index, planted.original);
  c.expected_answer = task.final_answer;
  c.propagated_answer = corrupt::propagated_answer(task, planted);
  return c;
}

ForcedErrorCase reference_case() {
  const auto task = taskgen::make_task(taskgen::TaskKind::HoursToSeconds, {{"hours", 3}});
  const auto planted =
      corrupt::apply_edit(task, 1, corrupt::Strategy::WrongConversionFactor, corrupt::ReplaceFactor{50});
  return make_case(0, task, planted);
}

Suite make_suite(std::size_t n, const taskgen::Mix& mix, std::uint64_t seed, const taskgen::ParamRanges& ranges) {
  if (n == 0) throw std::invalid_argument("suite size must be >= 1");
  const auto corpus = taskgen::build_corpus(n, mix, seed, ranges);
  const SplitMix64 streams = SplitMix64(seed).split(~std::uint64_t{1});

  Suite suite{{}, seed, mix};
  suite.cases.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& task = corpus.tasks[i];
    SplitMix64 rng = streams.split(i);
    std::vector<int> steps;
    for (int s = 1; s <= static_cast<int>(task.steps.size()); ++s) {
      if (!corrupt::eligible_strategies(task, s).empty()) steps.push_back(s);
    }
    if (steps.empty()) throw std::logic_error("task has no corruptible step");

    std::optional<corrupt::Corruption> chosen;
    for (int attempt = 0; attempt < kCorruptionRedraws && !chosen; ++attempt) {
      const int step = steps[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(steps.size()) - 1))];
      const auto strategies = corrupt::eligible_strategies(task, step);
      const auto strategy =
          strategies[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(strategies.size()) - 1))];
      auto c = corrupt::corrupt_step(task, step, strategy, rng);
      if (corrupt::propagated_answer(task, c) != task.final_answer) chosen = std::move(c);
    }
    if (!chosen) throw std::logic_error("no answer-changing corruption found for suite case " + std::to_string(i));
    suite.cases.push_back(make_case(i, task, *chosen));
  }
  return suite;
}

void to_json(nlohmann::json& j, const ForcedErrorCase& c) {
  j = nlohmann::json{{"id", c.id},
                     {"task", c.task},
                     {"planted", c.planted},
                     {"prompt", c.prompt},
                     {"control_prompt", c.control_prompt},
                     {"expected_answer", c.expected_answer},
                     {"propagated_answer", c.propagated_answer}};
}

void from_json(const nlohmann::json& j, ForcedErrorCase& c) {
  c.id = j.at("id").get<std::size_t>();
  c.task = j.at("task").get<taskgen::Task>();
  c.planted = j.at("planted").get<corrupt::Corruption>();
  c.prompt = j.at("prompt").get<std::string>();
  c.control_prompt = j.at("control_prompt").get<std::string>();
  c.expected_answer = j.at("expected_answer").get<std::string>();
  c.propagated_answer = j.at("propagated_answer").get<std::string>();
}

std::string Suite::to_jsonl() const {
  std::string out;
  for (const auto& c : cases) {
    out += nlohmann::json(c).dump();
    out += '\n';
  }
  return out;
}

std::string Suite::fingerprint() const { return sha256_hex(to_jsonl()); }

Suite suite_from_jsonl(std::string_view text) {
  Suite suite;
  for (auto line : text::split_lines(text)) {
    if (text::trim(line).empty()) continue;
    suite.cases.push_back(nlohmann::json::parse(line).get<ForcedErrorCase>());
  }
  return suite;
}

std::optional<std::string> final_answer(std::string_view text) {
  std::optional<std::string> found;
  for (auto line : text::split_lines(text)) {
    const auto trimmed = text::ltrim(line);
    if (trimmed.starts_with(markup::kAnswerPrefix)) {
      found = std::string(text::rtrim(trimmed.substr(markup::kAnswerPrefix.size())));
    }
  }
  return found;
}

void score(Transcript& t) {
  const std::string full = t.prompt + t.continuation;
  t.stripped = markup::strip(full);
  t.answer_raw = final_answer(full);
  t.answer_stripped = final_answer(t.stripped);
  t.correct_raw = t.answer_raw == t.expected_answer;
  t.correct_stripped = t.answer_stripped == t.expected_answer;
  t.any_tag = t.continuation.find(markup::kTagPrefix) != std::string::npos;

  t.triggered = false;
  if (!t.control) {
    const auto nl = t.continuation.find('\n');
    const std::string first = std::string(last_line(t.prompt)) + t.continuation.substr(0, nl);
    if (has_tag(first)) {
      t.triggered = true;
    } else if (nl != std::string::npos) {
      const std::string_view rest = std::string_view(t.continuation).substr(nl + 1);
      t.triggered = is_lone_tag(rest.substr(0, rest.find('\n')));
    }
  }
  t.misplaced_tag = !t.control && t.any_tag && !t.triggered;
}

EvalReport report_from_transcripts(const std::vector<Transcript>& transcripts, std::string label,
                                   std::string suite_fingerprint) {
  Tally all;
  std::map<std::string, Tally> by_kind, by_strategy;
  for (const auto& t : transcripts) {
    all.add(t);
    by_kind[std::string(taskgen::to_string(t.kind))].add(t);
    by_strategy[std::string(corrupt::to_string(t.strategy))].add(t);
  }
  EvalReport report;
  report.label = std::move(label);
  report.suite_fingerprint = std::move(suite_fingerprint);
  report.overall = all.breakdown();
  for (const auto& [k, tally] : by_kind) report.per_kind[k] = tally.breakdown();
  for (const auto& [k, tally] : by_strategy) report.per_strategy[k] = tally.breakdown();
  return report;
}

Evaluation evaluate(const Generator& generate, const Suite& suite, std::string label) {
  if (suite.cases.empty()) throw EvalError("evaluation suite is empty");
  Evaluation out;
  out.transcripts.reserve(2 * suite.cases.size());
  for (const bool control : {false, true}) {
    for (const auto& c : suite.cases) {
      Transcript t;
      t.case_id = c.id;
      t.control = control;
      t.kind = c.task.kind;
      t.strategy = c.planted.strategy;
      t.planted_step = c.planted.step_index;
      t.prompt = control ? c.control_prompt : c.prompt;
      t.expected_answer = c.expected_answer;
      t.continuation = generate(t.prompt);
      score(t);
      out.transcripts.push_back(std::move(t));
    }
  }
  out.report = report_from_transcripts(out.transcripts, std::move(label), suite.fingerprint());
  return out;
}

Evaluation evaluate(const lm::Checkpoint& ckpt, const Suite& suite, const lm::DecodeConfig& decode, std::string label) {
  if (suite.cases.empty()) throw EvalError("evaluation suite is empty");
  std::vector<std::string> missing;
  for (const auto& c : suite.cases) {
    for (const auto* prompt : {&c.prompt, &c.control_prompt}) {
      for (auto& piece : ckpt.vocab.unknown_pieces(*prompt)) {
        if (std::find(missing.begin(), missing.end(), piece) == missing.end()) missing.push_back(std::move(piece));
      }
    }
  }
  if (!missing.empty()) {
    std::string msg = "suite text has pieces outside the checkpoint vocabulary:";
    for (const auto& p : missing) msg += " '" + p + "'";
    throw EvalError(msg);
  }
  return evaluate([&](std::string_view prompt) { return lm::generate(ckpt, prompt, decode).text; }, suite,
                  std::move(label));
}

void to_json(nlohmann::json& j, const Transcript& t) {
  j = nlohmann::json{{"case_id", t.case_id},
                     {"control", t.control},
                     {"kind", taskgen::to_string(t.kind)},
                     {"strategy", corrupt::to_string(t.strategy)},
                     {"planted_step", t.planted_step},
                     {"prompt", t.prompt},
                     {"continuation", t.continuation},
                     {"expected_answer", t.expected_answer},
                     {"stripped", t.stripped},
                     {"answer_raw", t.answer_raw ? nlohmann::json(*t.answer_raw) : nlohmann::json(nullptr)},
                     {"answer_stripped", t.answer_stripped ? nlohmann::json(*t.answer_stripped) : nlohmann::json(nullptr)},
                     {"triggered", t.triggered},
                     {"any_tag", t.any_tag},
                     {"misplaced_tag", t.misplaced_tag},
                     {"correct_raw", t.correct_raw},
                     {"correct_stripped", t.correct_stripped}};
}

void from_json(const nlohmann::json& j, Transcript& t) {
  t.case_id = j.at("case_id").get<std::size_t>();
  t.control = j.at("control").get<bool>();
  const auto kind = taskgen::kind_from_string(j.at("kind").get<std::string>());
  const auto strategy = corrupt::strategy_from_string(j.at("strategy").get<std::string>());
  if (!kind || !strategy) throw EvalError("transcript has an unknown kind or strategy");
  t.kind = *kind;
  t.strategy = *strategy;
  t.planted_step = j.at("planted_step").get<int>();
  t.prompt = j.at("prompt").get<std::string>();
  t.continuation = j.at("continuation").get<std::string>();
  t.expected_answer = j.at("expected_answer").get<std::string>();
  score(t);
}

std::string transcripts_to_jsonl(const std::vector<Transcript>& transcripts) {
  std::string out;
  for (const auto& t : transcripts) {
    out += nlohmann::json(t).dump();
    out += '\n';
  }
  return out;
}

std::vector<Transcript> transcripts_from_jsonl(std::string_view text) {
  std::vector<Transcript> out;
  for (auto line : text::split_lines(text)) {
    if (text::trim(line).empty()) continue;
    out.push_back(nlohmann::json::parse(line).get<Transcript>());
  }
  return out;
}

void to_json(nlohmann::json& j, const Breakdown& b) {
  j = nlohmann::json{{"n_cases", b.n_cases},
                     {"n_controls", b.n_controls},
                     {"correction_trigger_rate", b.correction_trigger_rate},
                     {"false_correction_rate", b.false_correction_rate},
                     {"final_accuracy_stripped", b.final_accuracy_stripped},
                     {"final_accuracy_raw", b.final_accuracy_raw},
                     {"misplaced_tag_rate", b.misplaced_tag_rate},
                     {"control_accuracy_stripped", b.control_accuracy_stripped}};
}

void from_json(const nlohmann::json& j, Breakdown& b) {
  b.n_cases = j.at("n_cases").get<std::size_t>();
  b.n_controls = j.at("n_controls").get<std::size_t>();
  b.correction_trigger_rate = j.at("correction_trigger_rate").get<double>();
  b.false_correction_rate = j.at("false_correction_rate").get<double>();
  b.final_accuracy_stripped = j.at("final_accuracy_stripped").get<double>();
  b.final_accuracy_raw = j.at("final_accuracy_raw").get<double>();
  b.misplaced_tag_rate = j.at("misplaced_tag_rate").get<double>();
  b.control_accuracy_stripped = j.at("control_accuracy_stripped").get<double>();
}

void to_json(nlohmann::json& j, const EvalReport& r) {
  j = nlohmann::json{{"label", r.label},
                     {"suite_fingerprint", r.suite_fingerprint},
                     {"overall", r.overall},
                     {"per_kind", r.per_kind},
                     {"per_strategy", r.per_strategy}};
}

void from_json(const nlohmann::json& j, EvalReport& r) {
  r.label = j.at("label").get<std::string>();
  r.suite_fingerprint = j.at("suite_fingerprint").get<std::string>();
  r.overall = j.at("overall").get<Breakdown>();
  r.per_kind = j.at("per_kind").get<std::map<std::string, Breakdown>>();
  r.per_strategy = j.at("per_strategy").get<std::map<std::string, Breakdown>>();
}

void to_json(nlohmann::json& j, const Thresholds& t) {
  j = nlohmann::json{{"min_trigger_rate", t.min_trigger_rate},
                     {"min_trigger_delta", t.min_trigger_delta},
                     {"min_accuracy_delta", t.min_accuracy_delta},
                     {"max_baseline_trigger_rate", t.max_baseline_trigger_rate},
                     {"max_false_correction_rate", t.max_false_correction_rate}};
}

void from_json(const nlohmann::json& j, Thresholds& t) {
  Thresholds d;
  t.min_trigger_rate = j.value("min_trigger_rate", d.min_trigger_rate);
  t.min_trigger_delta = j.value("min_trigger_delta", d.min_trigger_delta);
  t.min_accuracy_delta = j.value("min_accuracy_delta", d.min_accuracy_delta);
  t.max_baseline_trigger_rate = j.value("max_baseline_trigger_rate", d.max_baseline_trigger_rate);
  t.max_false_correction_rate = j.value("max_false_correction_rate", d.max_false_correction_rate);
}

ComparisonSummary compare(const EvalReport& insec, const EvalReport& baseline, const Thresholds& thresholds) {
  if (insec.suite_fingerprint != baseline.suite_fingerprint) {
    throw ComparisonError("reports were computed on different suites (" + insec.suite_fingerprint + " vs " +
                          baseline.suite_fingerprint + ")");
  }
  const auto& a = insec.overall;
  const auto& b = baseline.overall;
  ComparisonSummary s;
  s.suite_fingerprint = insec.suite_fingerprint;
  s.trigger_delta = a.correction_trigger_rate - b.correction_trigger_rate;
  s.false_correction_delta = a.false_correction_rate - b.false_correction_rate;
  s.accuracy_stripped_delta = a.final_accuracy_stripped - b.final_accuracy_stripped;
  s.accuracy_raw_delta = a.final_accuracy_raw - b.final_accuracy_raw;
  s.accuracy_delta = a.final_accuracy_stripped - b.final_accuracy_raw;

  auto add = [&](std::string name, double value, double threshold, bool at_least) {
    const bool pass = at_least ? value >= threshold : value <= threshold;
    s.checks.push_back(Check{std::move(name), value, threshold, at_least, pass});
  };
  add("insec_trigger_rate", a.correction_trigger_rate, thresholds.min_trigger_rate, true);
  add("trigger_delta", s.trigger_delta, thresholds.min_trigger_delta, true);
  add("accuracy_delta", s.accuracy_delta, thresholds.min_accuracy_delta, true);
  add("baseline_trigger_rate", b.correction_trigger_rate, thresholds.max_baseline_trigger_rate, false);
  add("insec_false_correction_rate", a.false_correction_rate, thresholds.max_false_correction_rate, false);
  s.pass = std::all_of(s.checks.begin(), s.checks.end(), [](const Check& c) { return c.pass; });
  return s;
}

void to_json(nlohmann::json& j, const Check& c) {
  j = nlohmann::json{{"name", c.name},
                     {"value", c.value},
                     {"threshold", c.threshold},
                     {"comparison", c.at_least ? ">=" : "<="},
                     {"pass", c.pass}};
}

void to_json(nlohmann::json& j, const ComparisonSummary& s) {
  j = nlohmann::json{{"suite_fingerprint", s.suite_fingerprint},
                     {"trigger_delta", s.trigger_delta},
                     {"false_correction_delta", s.false_correction_delta},
                     {"accuracy_stripped_delta", s.accuracy_stripped_delta},
                     {"accuracy_raw_delta", s.accuracy_raw_delta},
                     {"accuracy_delta", s.accuracy_delta},
                     {"checks", s.checks},
                     {"verdict", s.pass ? "PASS" : "FAIL"}};
}

}  // namespace insec::eval
