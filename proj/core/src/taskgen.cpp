#include "insec/taskgen.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "insec/rng.hpp"
#include "text_util.hpp"

namespace insec::taskgen {

namespace {

// Values flowing from step to step. Starts as the task parameters; each step
// writes the values it produces.
struct Env {
  Params vars;
  std::vector<std::int64_t> items;
};

std::int64_t slot(const std::vector<Slot>& slots, std::string_view name) {
  for (const auto& s : slots) {
    if (s.name == name) return s.value;
  }
  throw TaskError("step is missing slot '" + std::string(name) + "'");
}

std::int64_t var(const Env& env, const std::string& name) {
  auto it = env.vars.find(name);
  if (it == env.vars.end()) throw TaskError("missing parameter '" + name + "'");
  return it->second;
}

std::string num(std::int64_t v) { return std::to_string(v); }

std::string key(std::string_view prefix, std::int64_t i) { return std::string(prefix) + std::to_string(i); }

std::string_view formula_text(Formula f) {
  switch (f) {
    case Formula::TwiceSum: return "2 * (length + width)";
    case Formula::Product: return "length * width";
    case Formula::Sum: return "length + width";
    case Formula::TwiceLengthPlusWidth: return "2 * length + width";
  }
  throw TaskError("unknown formula");
}

Formula formula_of(std::int64_t v) {
  if (v < 0 || v > 3) throw TaskError("formula id out of range: " + num(v));
  return static_cast<Formula>(v);
}

Formula correct_formula(TaskKind kind) {
  return kind == TaskKind::RectPerimeter ? Formula::TwiceSum : Formula::Product;
}

std::string_view measure(TaskKind kind) { return kind == TaskKind::RectPerimeter ? "perimeter" : "area"; }
std::string_view area_unit(TaskKind kind) { return kind == TaskKind::RectPerimeter ? "cm" : "square cm"; }

std::string hours_phrase(std::int64_t h) { return num(h) + (h == 1 ? " hour" : " hours"); }

std::string join_items(const std::vector<std::int64_t>& items) {
  std::vector<std::string> parts;
  parts.reserve(items.size());
  for (auto v : items) parts.push_back(num(v));
  return text::join(parts, ", ");
}

std::string_view op_text(std::int64_t op) { return op == 0 ? "+" : "-"; }

std::int64_t apply_op(std::int64_t left, std::int64_t op, std::int64_t right) {
  return op == 0 ? left + right : left - right;
}

void check_params(TaskKind kind, const Params& p) {
  auto need = [&](const std::string& name, std::int64_t min) {
    auto it = p.find(name);
    if (it == p.end()) throw TaskError(std::string(to_string(kind)) + ": missing parameter '" + name + "'");
    if (it->second < min) {
      throw TaskError(std::string(to_string(kind)) + ": parameter '" + name + "' must be >= " + num(min));
    }
    return it->second;
  };
  std::size_t expected_keys = 0;
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea:
      need("length", 1);
      need("width", 1);
      expected_keys = 2;
      break;
    case TaskKind::HoursToSeconds:
      need("hours", 1);
      expected_keys = 1;
      break;
    case TaskKind::FirstNIntegers:
      need("n", 1);
      expected_keys = 1;
      break;
    case TaskKind::ArithChain: {
      const auto len = need("len", 2);
      need("x0", 0);
      for (std::int64_t i = 1; i < len; ++i) {
        need(key("x", i), 0);
        if (need(key("op", i), 0) > 1) throw TaskError("ARITH_CHAIN: op must be 0 (+) or 1 (-)");
      }
      expected_keys = static_cast<std::size_t>(2 * len);
      break;
    }
  }
  if (p.size() != expected_keys) throw TaskError(std::string(to_string(kind)) + ": unexpected extra parameters");
}

int step_count(TaskKind kind, const Params& p) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea:
    case TaskKind::HoursToSeconds: return 3;
    case TaskKind::FirstNIntegers: return 1;
    case TaskKind::ArithChain: return static_cast<int>(p.at("len") - 1);
  }
  return 0;
}

std::string question(TaskKind kind, const Params& p) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea:
      return "What is the " + std::string(measure(kind)) + " of a rectangle with length " + num(p.at("length")) +
             " cm and width " + num(p.at("width")) + " cm?";
    case TaskKind::HoursToSeconds: return "Convert " + hours_phrase(p.at("hours")) + " into seconds.";
    case TaskKind::FirstNIntegers: return "List the first " + num(p.at("n")) + " positive integers.";
    case TaskKind::ArithChain: {
      std::string q = "What is " + num(p.at("x0"));
      for (std::int64_t i = 1; i < p.at("len"); ++i) {
        q += " " + std::string(op_text(p.at(key("op", i)))) + " " + num(p.at(key("x", i)));
      }
      return q + "?";
    }
  }
  return {};
}

Env initial_env(const Params& p) { return Env{p, {}}; }

std::vector<Slot> compute_slots(TaskKind kind, int step, const Env& env) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea: {
      if (step == 1) return {{"formula", static_cast<std::int64_t>(correct_formula(kind))}};
      const auto l = var(env, "length");
      const auto w = var(env, "width");
      if (step == 2) return {{"length", l}, {"width", w}};
      switch (formula_of(var(env, "formula"))) {
        case Formula::TwiceSum: return {{"length", l}, {"width", w}, {"sum", l + w}, {"result", 2 * (l + w)}};
        case Formula::Product: return {{"length", l}, {"width", w}, {"result", l * w}};
        case Formula::Sum: return {{"length", l}, {"width", w}, {"result", l + w}};
        case Formula::TwiceLengthPlusWidth: return {{"length", l}, {"width", w}, {"result", 2 * l + w}};
      }
      break;
    }
    case TaskKind::HoursToSeconds:
      if (step == 1) return {{"minutes_per_hour", 60}};
      if (step == 2) return {{"seconds_per_minute", 60}};
      {
        const auto h = var(env, "hours");
        const auto m = var(env, "minutes_per_hour");
        const auto s = var(env, "seconds_per_minute");
        return {{"hours", h}, {"minutes_per_hour", m}, {"seconds_per_minute", s}, {"result", h * m * s}};
      }
    case TaskKind::FirstNIntegers: {
      const auto n = var(env, "n");
      std::vector<Slot> slots{{"n", n}};
      for (std::int64_t i = 1; i <= n; ++i) slots.push_back({"item", i});
      return slots;
    }
    case TaskKind::ArithChain: {
      const auto left = step == 1 ? var(env, "x0") : var(env, "running");
      const auto op = var(env, key("op", step));
      const auto right = var(env, key("x", step));
      return {{"left", left}, {"op", op}, {"right", right}, {"result", apply_op(left, op, right)}};
    }
  }
  throw TaskError("unreachable step");
}

void absorb(TaskKind kind, int step, const std::vector<Slot>& slots, Env& env) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea:
      if (step == 1) env.vars["formula"] = slot(slots, "formula");
      if (step == 2) {
        env.vars["length"] = slot(slots, "length");
        env.vars["width"] = slot(slots, "width");
      }
      if (step == 3) env.vars["result"] = slot(slots, "result");
      break;
    case TaskKind::HoursToSeconds:
      if (step == 1) env.vars["minutes_per_hour"] = slot(slots, "minutes_per_hour");
      if (step == 2) env.vars["seconds_per_minute"] = slot(slots, "seconds_per_minute");
      if (step == 3) env.vars["result"] = slot(slots, "result");
      break;
    case TaskKind::FirstNIntegers:
      env.items.clear();
      for (const auto& s : slots) {
        if (s.name == "item") env.items.push_back(s.value);
      }
      break;
    case TaskKind::ArithChain:
      env.vars["running"] = slot(slots, "result");
      break;
  }
}

std::string step_text(TaskKind kind, int step, const std::vector<Slot>& slots, const Env& before) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea: {
      if (step == 1) {
        return "The formula for the " + std::string(measure(kind)) + " of a rectangle is " +
               std::string(formula_text(formula_of(slot(slots, "formula")))) + ".";
      }
      const auto l = num(slot(slots, "length"));
      const auto w = num(slot(slots, "width"));
      if (step == 2) return "Substitute the given values: length = " + l + " cm, width = " + w + " cm.";
      std::string expr;
      switch (formula_of(var(before, "formula"))) {
        case Formula::TwiceSum: expr = "2 * (" + l + " + " + w + ") = 2 * " + num(slot(slots, "sum")); break;
        case Formula::Product: expr = l + " * " + w; break;
        case Formula::Sum: expr = l + " + " + w; break;
        case Formula::TwiceLengthPlusWidth: expr = "2 * " + l + " + " + w; break;
      }
      return "Calculate the " + std::string(measure(kind)) + ": " + expr + " = " + num(slot(slots, "result")) + " " +
             std::string(area_unit(kind)) + ".";
    }
    case TaskKind::HoursToSeconds:
      if (step == 1) return "There are " + num(slot(slots, "minutes_per_hour")) + " minutes in 1 hour.";
      if (step == 2) return "There are " + num(slot(slots, "seconds_per_minute")) + " seconds in 1 minute.";
      return "Multiply the number of hours by the conversion factors: " + hours_phrase(slot(slots, "hours")) +
             " * " + num(slot(slots, "minutes_per_hour")) + " minutes/hour * " +
             num(slot(slots, "seconds_per_minute")) + " seconds/minute = " + num(slot(slots, "result")) +
             " seconds.";
    case TaskKind::FirstNIntegers: {
      const auto n = slot(slots, "n");
      std::vector<std::int64_t> items;
      for (const auto& s : slots) {
        if (s.name == "item") items.push_back(s.value);
      }
      if (n == 1) return "The first 1 positive integer is " + join_items(items) + ".";
      return "The first " + num(n) + " positive integers are " + join_items(items) + ".";
    }
    case TaskKind::ArithChain:
      return "Compute " + num(slot(slots, "left")) + " " + std::string(op_text(slot(slots, "op"))) + " " +
             num(slot(slots, "right")) + " = " + num(slot(slots, "result")) + ".";
  }
  return {};
}

std::string answer(TaskKind kind, const Env& env) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea: return num(var(env, "result")) + " " + std::string(area_unit(kind));
    case TaskKind::HoursToSeconds: return num(var(env, "result")) + " seconds";
    case TaskKind::FirstNIntegers: return join_items(env.items);
    case TaskKind::ArithChain: return num(var(env, "running"));
  }
  return {};
}

Params draw_params(TaskKind kind, SplitMix64& rng, const ParamRanges& r) {
  switch (kind) {
    case TaskKind::RectPerimeter:
    case TaskKind::RectArea: {
      const auto l = rng.uniform_int(r.side_min, r.side_max);
      const auto w = rng.uniform_int(r.side_min, r.side_max);
      return {{"length", l}, {"width", w}};
    }
    case TaskKind::HoursToSeconds: return {{"hours", rng.uniform_int(r.hours_min, r.hours_max)}};
    case TaskKind::FirstNIntegers: return {{"n", rng.uniform_int(r.n_min, r.n_max)}};
    case TaskKind::ArithChain: {
      const auto len = rng.uniform_int(r.chain_len_min, r.chain_len_max);
      Params p{{"len", len}};
      std::int64_t running = rng.uniform_int(r.operand_min, r.operand_max);
      p["x0"] = running;
      for (std::int64_t i = 1; i < len; ++i) {
        const auto x = rng.uniform_int(r.operand_min, r.operand_max);
        std::int64_t op = rng.uniform_int(0, 1);
        if (op == 1 && running < x) op = 0;  // keep running values nonnegative
        p[key("x", i)] = x;
        p[key("op", i)] = op;
        running = apply_op(running, op, x);
      }
      return p;
    }
  }
  return {};
}

std::string slots_to_string(const std::vector<Slot>& slots) {
  std::vector<std::string> parts;
  for (const auto& s : slots) parts.push_back(s.name + "=" + num(s.value));
  return "{" + text::join(parts, ", ") + "}";
}

}  // namespace

std::string_view to_string(TaskKind kind) noexcept {
  switch (kind) {
    case TaskKind::RectPerimeter: return "RECT_PERIMETER";
    case TaskKind::RectArea: return "RECT_AREA";
    case TaskKind::HoursToSeconds: return "HOURS_TO_SECONDS";
    case TaskKind::FirstNIntegers: return "FIRST_N_INTEGERS";
    case TaskKind::ArithChain: return "ARITH_CHAIN";
  }
  return "?";
}

std::optional<TaskKind> kind_from_string(std::string_view name) noexcept {
  for (auto k : kAllKinds) {
    if (to_string(k) == name) return k;
  }
  return std::nullopt;
}

Derivation derive(TaskKind kind, const Params& params, const std::optional<StepOverride>& override_at) {
  check_params(kind, params);
  const int count = step_count(kind, params);
  if (override_at && (override_at->step < 1 || override_at->step > count)) {
    throw TaskError("override step " + num(override_at->step) + " out of range 1.." + num(count));
  }
  Env env = initial_env(params);
  Derivation out;
  for (int k = 1; k <= count; ++k) {
    auto slots = (override_at && override_at->step == k) ? override_at->slots : compute_slots(kind, k, env);
    std::string text = step_text(kind, k, slots, env);
    absorb(kind, k, slots, env);
    out.steps.push_back(Step{std::move(text), std::move(slots)});
  }
  out.final_answer = answer(kind, env);
  return out;
}

std::string render_step(TaskKind kind, const Params& params, int step, const std::vector<Slot>& slots) {
  check_params(kind, params);
  const int count = step_count(kind, params);
  if (step < 1 || step > count) throw TaskError("step " + num(step) + " out of range 1.." + num(count));
  Env env = initial_env(params);
  for (int k = 1; k < step; ++k) absorb(kind, k, compute_slots(kind, k, env), env);
  return step_text(kind, step, slots, env);
}

Task make_task(TaskKind kind, const Params& params) {
  auto d = derive(kind, params);
  return Task{kind, params, question(kind, params), std::move(d.steps), std::move(d.final_answer), 0};
}

Task generate(TaskKind kind, std::uint64_t seed, const ParamRanges& ranges) {
  SplitMix64 rng(seed);
  Task task = make_task(kind, draw_params(kind, rng, ranges));
  task.seed = seed;
  return task;
}

VerificationResult verify(const Task& task) {
  auto fail = [](std::optional<int> step, std::string check, std::string expected, std::string actual) {
    return VerificationResult{false, step, std::move(check), std::move(expected), std::move(actual)};
  };
  Derivation expected;
  try {
    expected = derive(task.kind, task.params);
  } catch (const TaskError& e) {
    return fail(std::nullopt, "params", "valid parameters", e.what());
  }
  if (const auto q = question(task.kind, task.params); q != task.question) {
    return fail(std::nullopt, "question", q, task.question);
  }
  if (expected.steps.size() != task.steps.size()) {
    return fail(std::nullopt, "step-count", num(static_cast<std::int64_t>(expected.steps.size())),
                num(static_cast<std::int64_t>(task.steps.size())));
  }
  for (std::size_t i = 0; i < expected.steps.size(); ++i) {
    const int step = static_cast<int>(i + 1);
    const auto& want = expected.steps[i].slots;
    const auto& got = task.steps[i].slots;
    const std::size_t common = std::min(want.size(), got.size());
    for (std::size_t s = 0; s < common; ++s) {
      if (want[s] != got[s]) {
        const auto name = want[s].name == got[s].name ? want[s].name : want[s].name + "/" + got[s].name;
        return fail(step, name, num(want[s].value), num(got[s].value));
      }
    }
    if (want.size() != got.size()) return fail(step, "slots", slots_to_string(want), slots_to_string(got));
    if (expected.steps[i].text != task.steps[i].text) {
      return fail(step, "text", expected.steps[i].text, task.steps[i].text);
    }
  }
  if (expected.final_answer != task.final_answer) {
    return fail(std::nullopt, "final_answer", expected.final_answer, task.final_answer);
  }
  return VerificationResult{};
}

markup::AnnotatedDocument to_document(const Task& task) {
  markup::AnnotatedDocument doc{task.question, {}, task.final_answer};
  for (std::size_t i = 0; i < task.steps.size(); ++i) {
    doc.units.push_back(markup::ReasoningUnit::clean(static_cast<int>(i + 1), task.steps[i].text));
  }
  return doc;
}

Mix Mix::uniform() {
  Mix m;
  m.weights.fill(1.0 / static_cast<double>(kKindCount));
  return m;
}

Mix Mix::only(TaskKind kind) {
  Mix m;
  m.weights[kind_index(kind)] = 1.0;
  return m;
}

void Mix::check() const {
  double sum = 0.0;
  for (double w : weights) {
    if (!std::isfinite(w) || w < 0.0) throw TaskError("mix weights must be finite and nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw TaskError("mix weights must sum to 1 (got " + std::to_string(sum) + ")");
}

std::array<std::size_t, kKindCount> Mix::counts(std::size_t size) const {
  std::array<std::size_t, kKindCount> out{};
  std::array<double, kKindCount> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < kKindCount; ++k) {
    const double exact = weights[k] * static_cast<double>(size);
    out[k] = static_cast<std::size_t>(std::floor(exact + 1e-9));
    remainder[k] = exact - static_cast<double>(out[k]);
    assigned += out[k];
  }
  std::array<std::size_t, kKindCount> order{};
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < size; ++i, ++assigned) {
    const auto k = order[i % kKindCount];
    if (weights[k] > 0.0) {
      ++out[k];
    } else {
      --assigned;
    }
  }
  return out;
}

Corpus build_corpus(std::size_t size, const Mix& mix, std::uint64_t seed, const ParamRanges& ranges) {
  if (size == 0) throw TaskError("corpus size must be >= 1");
  mix.check();
  const auto counts = mix.counts(size);

  std::vector<TaskKind> kinds;
  kinds.reserve(size);
  for (std::size_t k = 0; k < kKindCount; ++k) kinds.insert(kinds.end(), counts[k], kAllKinds[k]);

  const SplitMix64 root(seed);
  SplitMix64 order_rng = root.split(~std::uint64_t{0});
  for (std::size_t i = kinds.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(order_rng.uniform_int(0, static_cast<std::int64_t>(i - 1)));
    std::swap(kinds[i - 1], kinds[j]);
  }

  constexpr int kRedraws = 8;
  std::array<std::set<Params>, kKindCount> used;
  Corpus corpus{{}, seed, mix};
  corpus.tasks.reserve(size);
  for (std::size_t i = 0; i < size; ++i) {
    const auto kind = kinds[i];
    const SplitMix64 task_stream = root.split(i);
    Task task;
    for (int attempt = 0; attempt < kRedraws; ++attempt) {
      task = generate(kind, task_stream.split(static_cast<std::uint64_t>(attempt)).state(), ranges);
      if (!used[kind_index(kind)].contains(task.params)) break;
    }
    used[kind_index(kind)].insert(task.params);
    corpus.tasks.push_back(std::move(task));
  }
  return corpus;
}

void to_json(nlohmann::json& j, const Slot& slot) { j = nlohmann::json::array({slot.name, slot.value}); }

void from_json(const nlohmann::json& j, Slot& slot) {
  slot.name = j.at(0).get<std::string>();
  slot.value = j.at(1).get<std::int64_t>();
}

void to_json(nlohmann::json& j, const Step& step) { j = nlohmann::json{{"text", step.text}, {"slots", step.slots}}; }

void from_json(const nlohmann::json& j, Step& step) {
  step.text = j.at("text").get<std::string>();
  step.slots = j.at("slots").get<std::vector<Slot>>();
}

void to_json(nlohmann::json& j, const Task& task) {
  j = nlohmann::json{{"kind", to_string(task.kind)}, {"params", task.params},         {"question", task.question},
                     {"steps", task.steps},          {"final_answer", task.final_answer}, {"seed", task.seed}};
}

void from_json(const nlohmann::json& j, Task& task) {
  const auto name = j.at("kind").get<std::string>();
  const auto kind = kind_from_string(name);
  if (!kind) throw TaskError("unknown task kind: " + name);
  task.kind = *kind;
  task.params = j.at("params").get<Params>();
  task.question = j.at("question").get<std::string>();
  task.steps = j.at("steps").get<std::vector<Step>>();
  task.final_answer = j.at("final_answer").get<std::string>();
  task.seed = j.value("seed", std::uint64_t{0});
}

void to_json(nlohmann::json& j, const Mix& mix) {
  j = nlohmann::json::object();
  for (auto k : kAllKinds) j[std::string(to_string(k))] = mix.weights[kind_index(k)];
}

void from_json(const nlohmann::json& j, Mix& mix) {
  mix.weights.fill(0.0);
  for (const auto& [name, value] : j.items()) {
    const auto kind = kind_from_string(name);
    if (!kind) throw TaskError("unknown task kind in mix: " + name);
    mix.weights[kind_index(*kind)] = value.get<double>();
  }
}

void to_json(nlohmann::json& j, const ParamRanges& r) {
  j = nlohmann::json{{"side", {r.side_min, r.side_max}},
                     {"hours", {r.hours_min, r.hours_max}},
                     {"n", {r.n_min, r.n_max}},
                     {"chain_len", {r.chain_len_min, r.chain_len_max}},
                     {"operand", {r.operand_min, r.operand_max}}};
}

void from_json(const nlohmann::json& j, ParamRanges& r) {
  auto read = [&](const char* name, std::int64_t& lo, std::int64_t& hi) {
    if (auto it = j.find(name); it != j.end()) {
      lo = it->at(0).get<std::int64_t>();
      hi = it->at(1).get<std::int64_t>();
      if (lo > hi) throw TaskError(std::string("range '") + name + "' is empty");
    }
  };
  read("side", r.side_min, r.side_max);
  read("hours", r.hours_min, r.hours_max);
  read("n", r.n_min, r.n_max);
  read("chain_len", r.chain_len_min, r.chain_len_max);
  read("operand", r.operand_min, r.operand_max);
  if (r.side_min < 1 || r.hours_min < 1 || r.n_min < 1 || r.chain_len_min < 2 || r.operand_min < 0) {
    throw TaskError("parameter ranges below the schema minimum");
  }
}

std::string corpus_to_jsonl(const Corpus& corpus) {
  std::string out;
  for (const auto& t : corpus.tasks) {
    out += nlohmann::json(t).dump();
    out += '\n';
  }
  return out;
}

std::vector<Task> tasks_from_jsonl(std::string_view text) {
  std::vector<Task> tasks;
  for (auto line : text::split_lines(text)) {
    if (text::trim(line).empty()) continue;
    tasks.push_back(nlohmann::json::parse(line).get<Task>());
  }
  return tasks;
}

}  // namespace insec::taskgen
