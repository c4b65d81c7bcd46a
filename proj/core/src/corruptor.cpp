#include "insec/corruptor.hpp"

#include <algorithm>
#include <sstream>

#include <nlohmann/json.hpp>

#include "text_util.hpp"

namespace insec::corrupt {

using taskgen::Formula;
using taskgen::Slot;
using taskgen::Task;
using taskgen::TaskKind;

namespace {

std::string num(std::int64_t v) { return std::to_string(v); }

std::int64_t& slot_ref(std::vector<Slot>& slots, std::string_view name) {
  for (auto& s : slots) {
    if (s.name == name) return s.value;
  }
  throw std::invalid_argument("step has no slot '" + std::string(name) + "'");
}

std::int64_t slot_value(const std::vector<Slot>& slots, std::string_view name) {
  for (const auto& s : slots) {
    if (s.name == name) return s.value;
  }
  throw std::invalid_argument("step has no slot '" + std::string(name) + "'");
}

std::string strategy_list(const std::vector<Strategy>& list) {
  std::vector<std::string> names;
  for (auto s : list) names.emplace_back(to_string(s));
  return names.empty() ? "none" : text::join(names, ", ");
}

template <typename T>
const T& edit_as(const Edit& edit, Strategy strategy) {
  if (const T* e = std::get_if<T>(&edit)) return *e;
  throw std::invalid_argument("edit does not match strategy " + std::string(to_string(strategy)));
}

bool is_rectangle(TaskKind kind) { return kind == TaskKind::RectPerimeter || kind == TaskKind::RectArea; }

std::string_view measure(TaskKind kind) { return kind == TaskKind::RectPerimeter ? "perimeter" : "area"; }

std::int64_t chain_apply(std::int64_t left, std::int64_t op, std::int64_t right) {
  return op == 0 ? left + right : left - right;
}

std::string_view chain_op(std::int64_t op) { return op == 0 ? "+" : "-"; }

// Picks a uniformly random element of a nonempty candidate list.
std::int64_t pick(const std::vector<std::int64_t>& candidates, SplitMix64& rng) {
  if (candidates.empty()) throw std::logic_error("no corruption candidate available");
  return candidates[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(candidates.size()) - 1))];
}

std::vector<std::int64_t> small_offsets(std::int64_t base, std::int64_t min_value) {
  std::vector<std::int64_t> out;
  for (std::int64_t d : {-3, -2, -1, 1, 2, 3}) {
    if (base + d >= min_value) out.push_back(base + d);
  }
  return out;
}

}  // namespace

std::string_view to_string(Strategy s) noexcept {
  switch (s) {
    case Strategy::WrongSubstitution: return "WRONG_SUBSTITUTION";
    case Strategy::WrongConversionFactor: return "WRONG_CONVERSION_FACTOR";
    case Strategy::OmitElements: return "OMIT_ELEMENTS";
    case Strategy::ArithmeticSlip: return "ARITHMETIC_SLIP";
    case Strategy::WrongFormula: return "WRONG_FORMULA";
  }
  return "?";
}

std::optional<Strategy> strategy_from_string(std::string_view name) noexcept {
  for (auto s : kAllStrategies) {
    if (to_string(s) == name) return s;
  }
  return std::nullopt;
}

EligibilityError::EligibilityError(const std::string& what, std::vector<Strategy> applicable)
    : std::invalid_argument(what + " (applicable: " + strategy_list(applicable) + ")"),
      applicable_(std::move(applicable)) {}

std::vector<Strategy> eligible_strategies(const Task& task, int step) {
  if (step < 1 || static_cast<std::size_t>(step) > task.steps.size()) return {};
  switch (task.kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea:
      if (step == 1) return {Strategy::WrongFormula};
      if (step == 2) return {Strategy::WrongSubstitution};
      return {Strategy::ArithmeticSlip};
    case TaskKind::HoursToSeconds:
      if (step <= 2) return {Strategy::WrongConversionFactor};
      return {Strategy::ArithmeticSlip};
    case TaskKind::FirstNIntegers:
      if (task.params.at("n") >= 3) return {Strategy::OmitElements};
      return {};
    case TaskKind::ArithChain: return {Strategy::WrongSubstitution, Strategy::ArithmeticSlip};
  }
  return {};
}

Corruption apply_edit(const Task& task, int step, Strategy strategy, const Edit& edit) {
  const auto eligible = eligible_strategies(task, step);
  if (std::find(eligible.begin(), eligible.end(), strategy) == eligible.end()) {
    throw EligibilityError(std::string(to_string(strategy)) + " does not apply to step " + num(step) + " of a " +
                               std::string(taskgen::to_string(task.kind)) + " task",
                           eligible);
  }
  const auto& original = task.steps[static_cast<std::size_t>(step - 1)];
  std::vector<Slot> slots = original.slots;
  std::string reason;

  switch (strategy) {
    case Strategy::WrongSubstitution: {
      const auto& e = edit_as<Substitute>(edit, strategy);
      if (is_rectangle(task.kind)) {
        if (e.slot != "length" && e.slot != "width") throw std::invalid_argument("substitute length or width");
        slot_ref(slots, e.slot) = e.value;
        reason = "wrong substitution for " + e.slot;
      } else {
        if (e.slot != "right") throw std::invalid_argument("chains substitute the 'right' operand");
        slot_ref(slots, "right") = e.value;
        slot_ref(slots, "result") = chain_apply(slot_value(slots, "left"), slot_value(slots, "op"), e.value);
        reason = "wrong substitution for the second operand";
      }
      break;
    }
    case Strategy::WrongConversionFactor: {
      const auto& e = edit_as<ReplaceFactor>(edit, strategy);
      slot_ref(slots, step == 1 ? "minutes_per_hour" : "seconds_per_minute") = e.value;
      reason = "incorrect conversion factor";
      break;
    }
    case Strategy::OmitElements: {
      const auto& e = edit_as<Omit>(edit, strategy);
      const auto n = slot_value(slots, "n");
      if (e.count < 1 || e.first < 1 || e.first + e.count - 1 > n || e.count >= n) {
        throw std::invalid_argument("omitted range must lie inside 1.." + num(n) + " and leave an item");
      }
      std::erase_if(slots, [&](const Slot& s) {
        return s.name == "item" && s.value >= e.first && s.value < e.first + e.count;
      });
      std::vector<std::string> missing;
      for (auto v = e.first; v < e.first + e.count; ++v) missing.push_back(num(v));
      reason = (e.count == 1 ? "missing number " : "missing numbers ") + text::join(missing, ", ");
      break;
    }
    case Strategy::ArithmeticSlip: {
      const auto& e = edit_as<Slip>(edit, strategy);
      switch (task.kind) {
        case TaskKind::RectPerimeter: {
          const auto l = slot_value(slots, "length");
          const auto w = slot_value(slots, "width");
          if (e.slot == "sum") {
            slot_ref(slots, "sum") = e.value;
            slot_ref(slots, "result") = 2 * e.value;
            reason = "arithmetic error in " + num(l) + " + " + num(w);
          } else if (e.slot == "result") {
            slot_ref(slots, "result") = e.value;
            reason = "arithmetic error in 2 * " + num(slot_value(slots, "sum"));
          } else {
            throw std::invalid_argument("perimeter slips target 'sum' or 'result'");
          }
          break;
        }
        case TaskKind::RectArea:
          if (e.slot != "result") throw std::invalid_argument("area slips target 'result'");
          slot_ref(slots, "result") = e.value;
          reason = "arithmetic error in " + num(slot_value(slots, "length")) + " * " + num(slot_value(slots, "width"));
          break;
        case TaskKind::HoursToSeconds:
          if (e.slot != "result") throw std::invalid_argument("conversion slips target 'result'");
          slot_ref(slots, "result") = e.value;
          reason = "arithmetic error in " + num(slot_value(slots, "hours")) + " * " +
                   num(slot_value(slots, "minutes_per_hour")) + " * " + num(slot_value(slots, "seconds_per_minute"));
          break;
        case TaskKind::ArithChain:
          if (e.slot != "result") throw std::invalid_argument("chain slips target 'result'");
          slot_ref(slots, "result") = e.value;
          reason = "arithmetic error in " + num(slot_value(slots, "left")) + " " +
                   std::string(chain_op(slot_value(slots, "op"))) + " " + num(slot_value(slots, "right"));
          break;
        case TaskKind::FirstNIntegers: break;  // not eligible
      }
      break;
    }
    case Strategy::WrongFormula: {
      const auto& e = edit_as<ReplaceFormula>(edit, strategy);
      slot_ref(slots, "formula") = static_cast<std::int64_t>(e.formula);
      reason = "wrong formula for the " + std::string(measure(task.kind));
      break;
    }
  }

  if (slots == original.slots) throw std::invalid_argument("edit leaves the step unchanged");
  Corruption c{step, original.text, taskgen::render_step(task.kind, task.params, step, slots), strategy,
               std::move(reason), std::move(slots)};
  if (c.corrupted == c.original || !is_falsified(task, c)) {
    throw std::logic_error("corruption of step " + num(step) + " is not falsified by the oracle");
  }
  return c;
}

Corruption corrupt_step(const Task& task, int step, Strategy strategy, SplitMix64& rng) {
  const auto eligible = eligible_strategies(task, step);
  if (std::find(eligible.begin(), eligible.end(), strategy) == eligible.end()) {
    throw EligibilityError(std::string(to_string(strategy)) + " does not apply to step " + num(step), eligible);
  }
  const auto& slots = task.steps[static_cast<std::size_t>(step - 1)].slots;

  switch (strategy) {
    case Strategy::WrongSubstitution: {
      if (is_rectangle(task.kind)) {
        const std::string name = rng.uniform_int(0, 1) == 0 ? "length" : "width";
        return apply_edit(task, step, strategy, Substitute{name, pick(small_offsets(slot_value(slots, name), 1), rng)});
      }
      const auto left = slot_value(slots, "left");
      const auto op = slot_value(slots, "op");
      std::vector<std::int64_t> candidates;
      for (auto v : small_offsets(slot_value(slots, "right"), 1)) {
        if (chain_apply(left, op, v) >= 0) candidates.push_back(v);
      }
      return apply_edit(task, step, strategy, Substitute{"right", pick(candidates, rng)});
    }
    case Strategy::WrongConversionFactor: {
      const auto current = slot_value(slots, step == 1 ? "minutes_per_hour" : "seconds_per_minute");
      std::vector<std::int64_t> candidates;
      for (std::int64_t v : {30, 40, 50, 100}) {
        if (v != current) candidates.push_back(v);
      }
      return apply_edit(task, step, strategy, ReplaceFactor{pick(candidates, rng)});
    }
    case Strategy::OmitElements: {
      const auto n = slot_value(slots, "n");
      const std::int64_t count = (n >= 4 && rng.bernoulli(0.5)) ? 2 : 1;
      const auto first = rng.uniform_int(2, n - count);
      return apply_edit(task, step, strategy, Omit{first, count});
    }
    case Strategy::ArithmeticSlip: {
      std::string target = "result";
      if (task.kind == TaskKind::RectPerimeter && rng.uniform_int(0, 1) == 0) target = "sum";
      const auto current = slot_value(slots, target);
      std::vector<std::int64_t> candidates;
      if (task.kind == TaskKind::HoursToSeconds) {
        for (std::int64_t d : {-3600, -1200, -600, 600, 1200, 3600}) {
          if (current + d > 0) candidates.push_back(current + d);
        }
      } else {
        candidates = small_offsets(current, task.kind == TaskKind::ArithChain ? 0 : 1);
      }
      return apply_edit(task, step, strategy, Slip{target, pick(candidates, rng)});
    }
    case Strategy::WrongFormula: {
      const auto current = slot_value(slots, "formula");
      std::vector<std::int64_t> candidates;
      for (std::int64_t f = 0; f < 4; ++f) {
        if (f != current) candidates.push_back(f);
      }
      return apply_edit(task, step, strategy, ReplaceFormula{static_cast<Formula>(pick(candidates, rng))});
    }
  }
  throw std::logic_error("unknown strategy");
}

Task with_corruption(const Task& task, const Corruption& c) {
  Task out = task;
  auto& step = out.steps.at(static_cast<std::size_t>(c.step_index - 1));
  step.text = c.corrupted;
  step.slots = c.corrupted_slots;
  return out;
}

bool is_falsified(const Task& task, const Corruption& c) { return !taskgen::verify(with_corruption(task, c)).pass; }

std::string propagated_answer(const Task& task, const Corruption& c) {
  return taskgen::derive(task.kind, task.params, taskgen::StepOverride{c.step_index, c.corrupted_slots}).final_answer;
}

void AnnotationConfig::check() const {
  if (!(rate >= 0.0 && rate <= 1.0)) throw std::invalid_argument("annotation rate must lie in [0, 1]");
  if (strategies.empty()) throw std::invalid_argument("at least one corruption strategy must be enabled");
  if (passes == 0) throw std::invalid_argument("annotation passes must be >= 1");
}

markup::AnnotatedDocument annotate_with(const Task& task, const std::vector<Corruption>& corruptions) {
  markup::AnnotatedDocument doc{task.question, {}, task.final_answer};
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    const int index = static_cast<int>(i + 1);
    const auto it = std::find_if(corruptions.begin(), corruptions.end(),
                                 [&](const Corruption& c) { return c.step_index == index; });
    if (it != corruptions.end()) doc.units.push_back(markup::ReasoningUnit::mistake(index, it->corrupted, it->reason));
    doc.units.push_back(markup::ReasoningUnit::clean(index, task.steps[i].text));
  }
  return doc;
}

AnnotatedTask annotate(const Task& task, const AnnotationConfig& config, SplitMix64& rng) {
  config.check();
  std::vector<Corruption> corruptions;
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    const int step = static_cast<int>(i + 1);
    if (!rng.bernoulli(config.rate)) continue;
    if (config.max_mistakes_per_doc && corruptions.size() >= *config.max_mistakes_per_doc) continue;
    std::vector<Strategy> usable;
    for (auto s : eligible_strategies(task, step)) {
      if (std::find(config.strategies.begin(), config.strategies.end(), s) != config.strategies.end()) {
        usable.push_back(s);
      }
    }
    if (usable.empty()) continue;
    const auto strategy = usable[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(usable.size()) - 1))];
    corruptions.push_back(corrupt_step(task, step, strategy, rng));
  }
  auto doc = annotate_with(task, corruptions);
  return AnnotatedTask{std::move(doc), std::move(corruptions)};
}

std::optional<double> AuditStats::empirical_rate() const {
  if (total_steps == 0) return std::nullopt;
  return static_cast<double>(corrupted_steps) / static_cast<double>(total_steps);
}

std::optional<double> AuditStats::falsity_rate() const {
  if (corrupted_steps == 0) return std::nullopt;
  return static_cast<double>(falsified) / static_cast<double>(corrupted_steps);
}

AnnotatedCorpus annotate_corpus(const std::vector<Task>& tasks, const AnnotationConfig& config) {
  config.check();
  const SplitMix64 root(config.seed);
  AnnotatedCorpus out;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (auto v = taskgen::verify(tasks[i]); !v) {
      throw std::invalid_argument("task " + num(static_cast<std::int64_t>(i)) + " fails verification at " + v.check);
    }
  }
  out.documents.reserve(tasks.size() * config.passes);
  for (std::size_t k = 0; k < tasks.size() * config.passes; ++k) {
    const auto& task = tasks[k % tasks.size()];
    SplitMix64 rng = root.split(k);
    auto annotated = annotate(task, config, rng);
    out.stats.documents += 1;
    out.stats.total_steps += task.steps.size();
    out.stats.corrupted_steps += annotated.corruptions.size();
    for (const auto& c : annotated.corruptions) {
      out.stats.per_strategy[static_cast<std::size_t>(c.strategy)] += 1;
      if (is_falsified(task, c)) out.stats.falsified += 1;
    }
    out.documents.push_back(std::move(annotated));
  }
  return out;
}

void to_json(nlohmann::json& j, const Corruption& c) {
  j = nlohmann::json{{"step_index", c.step_index}, {"original", c.original},         {"corrupted", c.corrupted},
                     {"strategy", to_string(c.strategy)}, {"reason", c.reason}, {"slots", c.corrupted_slots}};
}

void from_json(const nlohmann::json& j, Corruption& c) {
  c.step_index = j.at("step_index").get<int>();
  c.original = j.at("original").get<std::string>();
  c.corrupted = j.at("corrupted").get<std::string>();
  const auto name = j.at("strategy").get<std::string>();
  const auto s = strategy_from_string(name);
  if (!s) throw std::invalid_argument("unknown strategy: " + name);
  c.strategy = *s;
  c.reason = j.at("reason").get<std::string>();
  c.corrupted_slots = j.at("slots").get<std::vector<Slot>>();
}

void to_json(nlohmann::json& j, const AuditStats& stats) {
  nlohmann::json per = nlohmann::json::object();
  for (auto s : kAllStrategies) per[std::string(to_string(s))] = stats.per_strategy[static_cast<std::size_t>(s)];
  j = nlohmann::json{{"documents", stats.documents},
                     {"total_steps", stats.total_steps},
                     {"corrupted_steps", stats.corrupted_steps},
                     {"per_strategy", per},
                     {"falsified", stats.falsified}};
  const auto rate = stats.empirical_rate();
  j["empirical_rate"] = rate ? nlohmann::json(*rate) : nlohmann::json(nullptr);
  const auto falsity = stats.falsity_rate();
  j["oracle_falsity_rate"] = falsity ? nlohmann::json(*falsity) : nlohmann::json(nullptr);
}

std::string documents_to_jsonl(const AnnotatedCorpus& corpus) {
  std::string out;
  for (const auto& d : corpus.documents) {
    out += nlohmann::json(d.document).dump();
    out += '\n';
  }
  return out;
}

std::vector<markup::AnnotatedDocument> documents_from_jsonl(std::string_view text) {
  std::vector<markup::AnnotatedDocument> docs;
  for (auto line : text::split_lines(text)) {
    if (text::trim(line).empty()) continue;
    docs.push_back(nlohmann::json::parse(line).get<markup::AnnotatedDocument>());
  }
  return docs;
}

}  // namespace insec::corrupt
