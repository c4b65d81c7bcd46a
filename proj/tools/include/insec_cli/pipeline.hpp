#pragma once

#include <filesystem>
#include <fstream>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "insec/corruptor.hpp"
#include "insec/eval.hpp"
#include "insec/markup.hpp"
#include "insec/train.hpp"
#include "insec_cli/run_config.hpp"

namespace insec::cli {

enum class ExitCode : int {
  Ok = 0,
  Internal = 1,
  Usage = 2,
  Schema = 3,
  MissingFile = 4,
  Vocabulary = 5,
  Divergence = 6,
  BadInput = 7,
  VerdictFail = 8,
};

/// Failure carrying the process exit code and a stable machine-readable kind.
class CliError : public std::runtime_error {
 public:
  CliError(ExitCode code, std::string kind, const std::string& message)
      : std::runtime_error(message), code_(code), kind_(std::move(kind)) {}
  [[nodiscard]] ExitCode code() const noexcept { return code_; }
  [[nodiscard]] const std::string& kind() const noexcept { return kind_; }

 private:
  ExitCode code_;
  std::string kind_;
};

/// {"error": {"kind", "exit_code", "message"}}
nlohmann::json error_json(const CliError& e);

/// Line-delimited JSON events. Timestamps live only here, never in artifacts.
class EventLog {
 public:
  EventLog() = default;  // discards events
  explicit EventLog(const std::filesystem::path& path);
  void event(std::string_view name, nlohmann::json fields = nlohmann::json::object());

 private:
  std::optional<std::ofstream> out_;
};

/// Artifact file names inside the output directory.
struct Layout {
  std::filesystem::path dir;

  [[nodiscard]] std::filesystem::path corpus() const { return dir / "corpus.jsonl"; }
  [[nodiscard]] std::filesystem::path annotated() const { return dir / "annotated.jsonl"; }
  [[nodiscard]] std::filesystem::path audit() const { return dir / "audit.json"; }
  [[nodiscard]] std::filesystem::path suite() const { return dir / "suite.jsonl"; }
  [[nodiscard]] std::filesystem::path checkpoint(std::string_view label) const {
    return dir / (std::string(label) + ".ckpt");
  }
  [[nodiscard]] std::filesystem::path report(std::string_view label) const {
    return dir / ("report_" + std::string(label) + ".json");
  }
  [[nodiscard]] std::filesystem::path transcripts(std::string_view label) const {
    return dir / ("transcripts_" + std::string(label) + ".jsonl");
  }
  [[nodiscard]] std::filesystem::path comparison() const { return dir / "comparison.json"; }
  [[nodiscard]] std::filesystem::path demo() const { return dir / "demo.txt"; }
  [[nodiscard]] std::filesystem::path log() const { return dir / "log.jsonl"; }
};

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view content);

/// Training text for either model: the annotated rendering, or the same
/// documents with every mistake and tag removed.
std::vector<std::string> training_text(const std::vector<markup::AnnotatedDocument>& docs, bool clean);

/// One vocabulary for both models: annotated and clean renderings plus every
/// suite prompt, so the two checkpoints can be evaluated on identical input.
lm::Vocabulary shared_vocabulary(const std::vector<markup::AnnotatedDocument>& docs, const eval::Suite& suite);

taskgen::Corpus run_gen(const RunConfig& config, EventLog& log);
corrupt::AnnotatedCorpus run_annotate(const RunConfig& config, const std::vector<taskgen::Task>& tasks, EventLog& log);
eval::Suite run_suite(const RunConfig& config, EventLog& log);
lm::Checkpoint run_train(const RunConfig& config, const std::vector<markup::AnnotatedDocument>& docs, bool clean,
                         const eval::Suite& suite, EventLog& log);
eval::Evaluation run_eval(const RunConfig& config, const lm::Checkpoint& ckpt, const eval::Suite& suite,
                          std::string label, EventLog& log);

struct DemoResult {
  eval::EvalReport insec;
  eval::EvalReport baseline;
  eval::ComparisonSummary comparison;
  std::string insec_continuation;
  std::string baseline_continuation;
  std::string stripped;
  std::string text;  // what the demo prints
};

/// Full pipeline: corpus, annotation, suite, both trainings, evaluation,
/// comparison and the reference forced-error prompt. Every artifact lands in
/// config.output_dir.
DemoResult run_demo(const RunConfig& config, EventLog& log);

/// Loads a corpus of tasks or annotated documents, whichever the file holds.
std::vector<markup::AnnotatedDocument> load_documents(const std::filesystem::path& path);

}  // namespace insec::cli
