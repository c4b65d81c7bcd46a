#include "insec_cli/run_config.hpp"

#include <cmath>
#include <limits>
#include <set>

#include "insec/rng.hpp"
#include "run_config_schema.hpp"

namespace insec::cli {

namespace {

std::string join_path(const std::string& base, std::string_view key) {
  return base.empty() ? std::string(key) : base + "." + std::string(key);
}

// Reads one JSON object, remembering which keys were consumed so leftovers
// can be reported as unknown.
class ObjectReader {
 public:
  ObjectReader(const nlohmann::json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_, "expected an object");
  }

  [[nodiscard]] const nlohmann::json* find(std::string_view key) {
    seen_.emplace(key);
    const auto it = j_.find(std::string(key));
    return it == j_.end() ? nullptr : &*it;
  }

  [[nodiscard]] std::string path(std::string_view key) const { return join_path(path_, key); }

  void integer(std::string_view key, std::uint64_t& out, std::uint64_t min = 0) {
    if (const auto* v = find(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<std::int64_t>() >= 0)) {
        throw ConfigError(path(key), "expected a nonnegative integer");
      }
      out = v->get<std::uint64_t>();
      if (out < min) throw ConfigError(path(key), "must be >= " + std::to_string(min));
    }
  }

  void integer(std::string_view key, int& out, int min) {
    if (const auto* v = find(key)) {
      if (!v->is_number_integer()) throw ConfigError(path(key), "expected an integer");
      const auto value = v->get<std::int64_t>();
      if (value < min || value > std::numeric_limits<int>::max()) {
        throw ConfigError(path(key), "must be an integer >= " + std::to_string(min));
      }
      out = static_cast<int>(value);
    }
  }

  void number(std::string_view key, double& out, double min, double max, bool exclusive_min = false) {
    if (const auto* v = find(key)) {
      if (!v->is_number()) throw ConfigError(path(key), "expected a number");
      out = v->get<double>();
      const bool low = exclusive_min ? !(out > min) : !(out >= min);
      if (!std::isfinite(out) || low || out > max) {
        throw ConfigError(path(key), "out of range");
      }
    }
  }

  void boolean(std::string_view key, bool& out) {
    if (const auto* v = find(key)) {
      if (!v->is_boolean()) throw ConfigError(path(key), "expected a boolean");
      out = v->get<bool>();
    }
  }

  void finish() const {
    for (const auto& [key, _] : j_.items()) {
      if (!seen_.contains(key)) throw ConfigError(join_path(path_, key), "unknown key");
    }
  }

 private:
  const nlohmann::json& j_;
  std::string path_;
  std::set<std::string, std::less<>> seen_;
};

taskgen::Mix read_mix(const nlohmann::json& j, const std::string& path) {
  if (!j.is_object()) throw ConfigError(path, "expected an object of kind weights");
  taskgen::Mix mix;
  mix.weights.fill(0.0);
  for (const auto& [name, value] : j.items()) {
    const auto kind = taskgen::kind_from_string(name);
    if (!kind) throw ConfigError(join_path(path, name), "unknown task kind");
    if (!value.is_number() || value.get<double>() < 0.0) {
      throw ConfigError(join_path(path, name), "weight must be a nonnegative number");
    }
    mix.weights[taskgen::kind_index(*kind)] = value.get<double>();
  }
  try {
    mix.check();
  } catch (const std::exception& e) {
    throw ConfigError(path, e.what());
  }
  return mix;
}

taskgen::ParamRanges read_ranges(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  taskgen::ParamRanges ranges;
  auto pair = [&](std::string_view key, std::int64_t& lo, std::int64_t& hi, std::int64_t min) {
    const auto* v = r.find(key);
    if (!v) return;
    if (!v->is_array() || v->size() != 2 || !(*v)[0].is_number_integer() || !(*v)[1].is_number_integer()) {
      throw ConfigError(r.path(key), "expected [min, max] integers");
    }
    lo = (*v)[0].get<std::int64_t>();
    hi = (*v)[1].get<std::int64_t>();
    if (lo < min) throw ConfigError(r.path(key), "minimum must be >= " + std::to_string(min));
    if (lo > hi) throw ConfigError(r.path(key), "empty range");
  };
  pair("side", ranges.side_min, ranges.side_max, 1);
  pair("hours", ranges.hours_min, ranges.hours_max, 1);
  pair("n", ranges.n_min, ranges.n_max, 1);
  pair("chain_len", ranges.chain_len_min, ranges.chain_len_max, 2);
  pair("operand", ranges.operand_min, ranges.operand_max, 0);
  r.finish();
  return ranges;
}

TaskGenSection read_taskgen(const nlohmann::json& j) {
  ObjectReader r(j, "taskgen");
  TaskGenSection s;
  r.integer("size", s.size, 1);
  r.integer("seed", s.seed);
  if (const auto* v = r.find("mix")) s.mix = read_mix(*v, r.path("mix"));
  if (const auto* v = r.find("ranges")) s.ranges = read_ranges(*v, r.path("ranges"));
  r.finish();
  return s;
}

AnnotationSection read_annotation(const nlohmann::json& j) {
  ObjectReader r(j, "annotation");
  AnnotationSection s;
  r.number("rate", s.rate, 0.0, 1.0);
  r.integer("seed", s.seed);
  if (const auto* v = r.find("strategies")) {
    if (!v->is_array() || v->empty()) throw ConfigError(r.path("strategies"), "expected a nonempty array");
    s.strategies.clear();
    for (const auto& item : *v) {
      const auto strategy = item.is_string() ? corrupt::strategy_from_string(item.get<std::string>()) : std::nullopt;
      if (!strategy) throw ConfigError(r.path("strategies"), "unknown strategy " + item.dump());
      s.strategies.push_back(*strategy);
    }
  }
  if (const auto* v = r.find("max_mistakes_per_doc"); v && !v->is_null()) {
    if (!v->is_number_unsigned()) throw ConfigError(r.path("max_mistakes_per_doc"), "expected a nonnegative integer");
    s.max_mistakes_per_doc = v->get<std::size_t>();
  }
  r.integer("passes", s.passes, 1);
  r.finish();
  return s;
}

lm::TrainConfig read_train(const nlohmann::json& j) {
  ObjectReader r(j, "train");
  lm::TrainConfig c;
  r.integer("d_model", c.d_model, 1);
  r.integer("n_layers", c.n_layers, 1);
  r.integer("n_heads", c.n_heads, 1);
  r.integer("context", c.context, 2);
  r.integer("batch_size", c.batch_size, 1);
  r.number("learning_rate", c.learning_rate, 0.0, std::numeric_limits<double>::max(), true);
  r.integer("epochs", c.epochs, 0);
  r.integer("seed", c.seed);
  r.number("clip_norm", c.clip_norm, 0.0, 1e6, true);
  r.number("beta1", c.beta1, 0.0, 0.999999);
  r.number("beta2", c.beta2, 0.0, 0.999999);
  r.number("adam_eps", c.adam_eps, 0.0, 1.0, true);
  r.finish();
  if (c.d_model % c.n_heads != 0) throw ConfigError("train.n_heads", "d_model must be divisible by n_heads");
  return c;
}

lm::DecodeConfig read_decode(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  lm::DecodeConfig c;
  if (const auto* v = r.find("mode")) {
    if (*v == "greedy") {
      c.mode = lm::DecodeMode::Greedy;
    } else if (*v == "temperature") {
      c.mode = lm::DecodeMode::Temperature;
    } else {
      throw ConfigError(r.path("mode"), "expected \"greedy\" or \"temperature\"");
    }
  }
  r.number("temperature", c.temperature, 0.0, 100.0, true);
  r.integer("max_tokens", c.max_tokens, 0);
  r.integer("seed", c.seed);
  r.boolean("stop_after_answer", c.stop_after_answer);
  r.finish();
  return c;
}

eval::Thresholds read_thresholds(const nlohmann::json& j, const std::string& path) {
  ObjectReader r(j, path);
  eval::Thresholds t;
  r.number("min_trigger_rate", t.min_trigger_rate, 0.0, 1.0);
  r.number("min_trigger_delta", t.min_trigger_delta, -1.0, 1.0);
  r.number("min_accuracy_delta", t.min_accuracy_delta, -1.0, 1.0);
  r.number("max_baseline_trigger_rate", t.max_baseline_trigger_rate, 0.0, 1.0);
  r.number("max_false_correction_rate", t.max_false_correction_rate, 0.0, 1.0);
  r.finish();
  return t;
}

EvalSection read_eval(const nlohmann::json& j) {
  ObjectReader r(j, "eval");
  EvalSection s;
  r.integer("suite_size", s.suite_size, 1);
  r.integer("seed", s.seed);
  if (const auto* v = r.find("mix")) s.mix = read_mix(*v, r.path("mix"));
  if (const auto* v = r.find("decode")) s.decode = read_decode(*v, r.path("decode"));
  if (const auto* v = r.find("thresholds")) s.thresholds = read_thresholds(*v, r.path("thresholds"));
  r.finish();
  return s;
}

}  // namespace

corrupt::AnnotationConfig AnnotationSection::config() const {
  corrupt::AnnotationConfig c;
  c.rate = rate;
  c.seed = seed;
  c.strategies = strategies;
  c.max_mistakes_per_doc = max_mistakes_per_doc;
  c.passes = passes;
  return c;
}

RunConfig::RunConfig() {
  annotation.passes = 5;
  train.seed = 3;
  train.epochs = 8;
  train.learning_rate = 1e-3;
}

RunConfig parse_run_config(const nlohmann::json& doc) {
  ObjectReader r(doc, "");
  RunConfig c;
  if (const auto* v = r.find("output_dir")) {
    if (!v->is_string() || v->get<std::string>().empty()) throw ConfigError("output_dir", "expected a nonempty string");
    c.output_dir = v->get<std::string>();
  }
  if (const auto* v = r.find("taskgen")) c.taskgen = read_taskgen(*v);
  if (const auto* v = r.find("annotation")) c.annotation = read_annotation(*v);
  if (const auto* v = r.find("train")) c.train = read_train(*v);
  if (const auto* v = r.find("eval")) c.eval = read_eval(*v);
  r.finish();
  return c;
}

nlohmann::json to_json(const RunConfig& c) {
  nlohmann::json strategies = nlohmann::json::array();
  for (auto s : c.annotation.strategies) strategies.push_back(corrupt::to_string(s));
  return nlohmann::json{
      {"output_dir", c.output_dir},
      {"taskgen", {{"size", c.taskgen.size}, {"seed", c.taskgen.seed}, {"mix", c.taskgen.mix}, {"ranges", c.taskgen.ranges}}},
      {"annotation",
       {{"rate", c.annotation.rate},
        {"seed", c.annotation.seed},
        {"strategies", strategies},
        {"max_mistakes_per_doc",
         c.annotation.max_mistakes_per_doc ? nlohmann::json(*c.annotation.max_mistakes_per_doc) : nlohmann::json(nullptr)},
        {"passes", c.annotation.passes}}},
      {"train", c.train},
      {"eval",
       {{"suite_size", c.eval.suite_size},
        {"seed", c.eval.seed},
        {"mix", c.eval.mix},
        {"decode", c.eval.decode},
        {"thresholds", c.eval.thresholds}}}};
}

void apply_override(nlohmann::json& doc, std::string_view dotted_path, std::string_view value) {
  if (dotted_path.empty()) throw ConfigError("", "empty override key");
  nlohmann::json* node = &doc;
  std::size_t start = 0;
  while (true) {
    const auto dot = dotted_path.find('.', start);
    const std::string key(dotted_path.substr(start, dot == std::string_view::npos ? std::string_view::npos : dot - start));
    if (key.empty()) throw ConfigError(std::string(dotted_path), "malformed override key");
    if (!node->is_object()) throw ConfigError(std::string(dotted_path), "override descends into a non-object");
    if (dot == std::string_view::npos) {
      auto parsed = nlohmann::json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? nlohmann::json(std::string(value)) : std::move(parsed);
      return;
    }
    if (!node->contains(key)) (*node)[key] = nlohmann::json::object();
    node = &(*node)[key];
    start = dot + 1;
  }
}

RunConfig with_seed(RunConfig config, std::uint64_t seed) {
  const SplitMix64 root(seed);
  config.taskgen.seed = root.split(0).state();
  config.annotation.seed = root.split(1).state();
  config.train.seed = root.split(2).state();
  config.eval.seed = root.split(3).state();
  return config;
}

const nlohmann::json& run_config_schema() {
  static const nlohmann::json schema = nlohmann::json::parse(kRunConfigSchema);
  return schema;
}

}  // namespace insec::cli
