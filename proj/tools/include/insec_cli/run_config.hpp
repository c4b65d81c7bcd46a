#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "insec/corruptor.hpp"
#include "insec/eval.hpp"
#include "insec/generate.hpp"
#include "insec/taskgen.hpp"
#include "insec/train.hpp"

namespace insec::cli {

/// Raised for anything that does not match the run-config schema. `path` is
/// the dotted location of the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string path, const std::string& message)
      : std::invalid_argument(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
  [[nodiscard]] const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

struct TaskGenSection {
  std::size_t size = 1000;
  std::uint64_t seed = 1;
  taskgen::Mix mix = taskgen::Mix::uniform();
  taskgen::ParamRanges ranges;
};

struct AnnotationSection {
  double rate = 0.15;
  std::uint64_t seed = 2;
  std::vector<corrupt::Strategy> strategies{corrupt::kAllStrategies.begin(), corrupt::kAllStrategies.end()};
  std::optional<std::size_t> max_mistakes_per_doc;
  std::uint64_t passes = 1;

  [[nodiscard]] corrupt::AnnotationConfig config() const;
};

struct EvalSection {
  std::size_t suite_size = 200;
  std::uint64_t seed = 4;
  taskgen::Mix mix = taskgen::Mix::uniform();
  lm::DecodeConfig decode;
  eval::Thresholds thresholds;
};

// Defaults are the demo settings: five annotation passes, eight epochs at
// learning rate 1e-3.
struct RunConfig {
  std::string output_dir = "insec-out";
  TaskGenSection taskgen;
  AnnotationSection annotation;
  lm::TrainConfig train;
  EvalSection eval;

  RunConfig();
};

/// Strict: unknown keys, wrong types and out-of-range values raise
/// ConfigError. Missing keys keep their defaults.
RunConfig parse_run_config(const nlohmann::json& doc);
nlohmann::json to_json(const RunConfig& config);

/// Sets `dotted.path` in a config document. The value is read as JSON when it
/// parses as JSON and as a string otherwise.
void apply_override(nlohmann::json& doc, std::string_view dotted_path, std::string_view value);

/// Seed the demo uses when none is given.
inline constexpr std::uint64_t kDemoSeed = 1;

/// Derives every section seed from one demo seed.
RunConfig with_seed(RunConfig config, std::uint64_t seed);

/// JSON Schema (draft 2020-12) describing the accepted documents.
const nlohmann::json& run_config_schema();

}  // namespace insec::cli
