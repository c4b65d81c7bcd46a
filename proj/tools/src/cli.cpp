#include "insec_cli/cli.hpp"

#include <CLI11.hpp>
#include <iostream>
#include <sstream>

#include "insec/eval.hpp"
#include "insec/markup.hpp"
#include "insec/train.hpp"
#include "insec_cli/pipeline.hpp"
#include "insec_cli/run_config.hpp"

namespace insec::cli {

namespace fs = std::filesystem;

namespace {

struct Options {
  std::string config_path;
  std::vector<std::string> sets;

  // Flag values translated into config overrides, in declaration order.
  std::vector<std::pair<std::string, std::string>> overrides;
};

// Registers a flag whose value becomes a config override at `path`.
void override_flag(CLI::App* app, Options& opts, const std::string& flag, const std::string& path,
                   const std::string& help) {
  app->add_option_function<std::string>(
      flag, [&opts, path](const std::string& v) { opts.overrides.emplace_back(path, v); }, help);
}

// File, then derived seeds, then --set, then dedicated flags.
RunConfig load_config(const Options& opts, std::optional<std::uint64_t> seed) {
  nlohmann::json doc = nlohmann::json::object();
  if (!opts.config_path.empty()) {
    const std::string text = read_file(opts.config_path);
    doc = nlohmann::json::parse(text, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("", opts.config_path + " is not valid JSON");
  }
  if (seed) doc = to_json(with_seed(parse_run_config(doc), *seed));
  for (const auto& s : opts.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("", "--set expects KEY=VALUE, got '" + s + "'");
    apply_override(doc, s.substr(0, eq), s.substr(eq + 1));
  }
  for (const auto& [path, value] : opts.overrides) {
    if (path == "annotation.strategies") {
      nlohmann::json list = nlohmann::json::array();
      std::stringstream ss(value);
      for (std::string item; std::getline(ss, item, ',');) list.push_back(item);
      apply_override(doc, path, list.dump());
    } else if (path == "output_dir") {
      apply_override(doc, path, nlohmann::json(value).dump());
    } else {
      apply_override(doc, path, value);
    }
  }
  return parse_run_config(doc);
}

int fail(std::ostream& err, const CliError& e) {
  err << error_json(e).dump() << '\n';
  return static_cast<int>(e.code());
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Internalized self-correction: synthetic corpora, negative-sample annotation, toy LM training and "
               "forced-error evaluation"};
  app.require_subcommand(0, 1);
  Options opts;
  app.add_option("-c,--config", opts.config_path, "Run configuration (JSON)");
  app.add_option("--set", opts.sets, "Override a config key, e.g. --set train.epochs=5")->type_name("KEY=VALUE");
  app.add_option_function<std::string>(
      "-o,--out", [&](const std::string& v) { opts.overrides.emplace_back("output_dir", v); }, "Output directory");
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "Print the config schema and exit");

  auto* gen = app.add_subcommand("gen", "Generate a task corpus");
  override_flag(gen, opts, "--size", "taskgen.size", "Number of tasks");
  override_flag(gen, opts, "--seed", "taskgen.seed", "Corpus seed");

  auto* annotate = app.add_subcommand("annotate", "Inject tagged mistakes into a task corpus");
  std::string annotate_input;
  annotate->add_option("--corpus", annotate_input, "Task corpus (default: <out>/corpus.jsonl)");
  override_flag(annotate, opts, "--rate", "annotation.rate", "Per-step corruption probability");
  override_flag(annotate, opts, "--seed", "annotation.seed", "Annotation seed");
  override_flag(annotate, opts, "--strategies", "annotation.strategies", "Comma-separated strategies");
  override_flag(annotate, opts, "--max-mistakes", "annotation.max_mistakes_per_doc",
                             "Cap on mistakes per document");
  override_flag(annotate, opts, "--passes", "annotation.passes", "Independent annotations of every task");

  auto* train = app.add_subcommand("train", "Train a model on an annotated corpus");
  std::string train_input;
  std::string train_output;
  bool train_clean = false;
  train->add_option("--corpus", train_input, "Annotated corpus (default: <out>/annotated.jsonl)");
  train->add_flag("--clean", train_clean, "Drop every mistake and tag first (baseline model)");
  train->add_option("--checkpoint", train_output, "Output checkpoint (default: <out>/insec.ckpt or baseline.ckpt)");
  override_flag(train, opts, "--epochs", "train.epochs", "Training epochs");
  override_flag(train, opts, "--seed", "train.seed", "Initialization and shuffling seed");
  override_flag(train, opts, "--lr", "train.learning_rate", "Learning rate");

  auto* evaluate = app.add_subcommand("eval", "Evaluate checkpoints on the forced-error suite");
  std::string insec_ckpt;
  std::string baseline_ckpt;
  evaluate->add_option("--insec", insec_ckpt, "Checkpoint trained with negative samples");
  evaluate->add_option("--baseline", baseline_ckpt, "Checkpoint trained without negative samples");
  override_flag(evaluate, opts, "--cases", "eval.suite_size", "Suite size");
  override_flag(evaluate, opts, "--seed", "eval.seed", "Suite seed");

  auto* strip = app.add_subcommand("strip", "Remove mistakes and correction tags from text");
  std::string strip_input;
  std::string strip_output;
  strip->add_option("input", strip_input, "Text file ('-' for stdin)")->required();
  strip->add_option("--output", strip_output, "Write here instead of stdout");

  auto* demo = app.add_subcommand("demo", "Train both models and reproduce the forced-error comparison");
  std::uint64_t demo_seed = kDemoSeed;
  bool require_pass = false;
  demo->add_option("--seed", demo_seed, "Derive every seed from this one")->capture_default_str();
  override_flag(demo, opts, "--epochs", "train.epochs", "Training epochs for each model");
  demo->add_flag("--require-pass", require_pass, "Exit nonzero when the comparison verdict is FAIL");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    return fail(err, CliError(ExitCode::Usage, "usage_error", e.what()));
  }

  try {
    if (print_schema) {
      out << run_config_schema().dump(2) << '\n';
      return 0;
    }
    if (app.get_subcommands().empty()) throw CliError(ExitCode::Usage, "usage_error", "a subcommand is required");
    if (evaluate->parsed() && insec_ckpt.empty() && baseline_ckpt.empty()) {
      throw CliError(ExitCode::Usage, "usage_error", "eval needs --insec and/or --baseline");
    }
    const RunConfig config = load_config(opts, demo->parsed() ? std::optional(demo_seed) : std::nullopt);
    const Layout layout{config.output_dir};
    const bool writes_outputs = !strip->parsed();
    if (writes_outputs) fs::create_directories(layout.dir);
    EventLog log = writes_outputs ? EventLog(layout.log()) : EventLog();
    log.event("command", {{"name", app.get_subcommands().front()->get_name()}, {"config", to_json(config)}});

    if (gen->parsed()) {
      const auto corpus = run_gen(config, log);
      write_file(layout.corpus(), taskgen::corpus_to_jsonl(corpus));
      out << nlohmann::json{{"corpus", layout.corpus().string()}, {"tasks", corpus.tasks.size()}}.dump() << '\n';
    } else if (annotate->parsed()) {
      const fs::path input = annotate_input.empty() ? layout.corpus() : fs::path(annotate_input);
      const auto text = read_file(input);
      std::vector<taskgen::Task> tasks;
      try {
        tasks = taskgen::tasks_from_jsonl(text);
      } catch (const std::exception& e) {
        throw CliError(ExitCode::BadInput, "bad_input", input.string() + ": " + e.what());
      }
      const auto annotated = run_annotate(config, tasks, log);
      write_file(layout.annotated(), corrupt::documents_to_jsonl(annotated));
      write_file(layout.audit(), nlohmann::json(annotated.stats).dump(2) + "\n");
      out << nlohmann::json(annotated.stats).dump() << '\n';
    } else if (train->parsed()) {
      const fs::path input = train_input.empty() ? layout.annotated() : fs::path(train_input);
      const auto docs = load_documents(input);
      const auto suite = run_suite(config, log);
      const auto ckpt = run_train(config, docs, train_clean, suite, log);
      const fs::path target = train_output.empty() ? layout.checkpoint(train_clean ? "baseline" : "insec")
                                                   : fs::path(train_output);
      lm::save(ckpt, target);
      out << nlohmann::json{{"checkpoint", target.string()}, {"loss_history", ckpt.loss_history}}.dump() << '\n';
    } else if (evaluate->parsed()) {
      const auto suite = run_suite(config, log);
      write_file(layout.suite(), suite.to_jsonl());
      std::optional<eval::EvalReport> insec_report, baseline_report;
      for (const auto& [label, path] : {std::pair{std::string("insec"), insec_ckpt},
                                        std::pair{std::string("baseline"), baseline_ckpt}}) {
        if (path.empty()) continue;
        if (!fs::exists(path)) throw CliError(ExitCode::MissingFile, "missing_file", "no such checkpoint " + path);
        const auto ckpt = lm::load(path);
        auto evaluation = run_eval(config, ckpt, suite, label, log);
        write_file(layout.report(label), nlohmann::json(evaluation.report).dump(2) + "\n");
        write_file(layout.transcripts(label), eval::transcripts_to_jsonl(evaluation.transcripts));
        (label == "insec" ? insec_report : baseline_report) = std::move(evaluation.report);
      }
      nlohmann::json summary = nlohmann::json::object();
      if (insec_report) summary["insec"] = insec_report->overall;
      if (baseline_report) summary["baseline"] = baseline_report->overall;
      if (insec_report && baseline_report) {
        const auto cmp = eval::compare(*insec_report, *baseline_report, config.eval.thresholds);
        write_file(layout.comparison(), nlohmann::json(cmp).dump(2) + "\n");
        summary["verdict"] = cmp.pass ? "PASS" : "FAIL";
      }
      out << summary.dump() << '\n';
    } else if (strip->parsed()) {
      std::string text;
      if (strip_input == "-") {
        std::ostringstream ss;
        ss << std::cin.rdbuf();
        text = ss.str();
      } else {
        text = read_file(strip_input);
      }
      const std::string cleaned = markup::strip(text);
      if (strip_output.empty()) {
        out << cleaned;
      } else {
        write_file(strip_output, cleaned);
      }
    } else if (demo->parsed()) {
      const auto result = run_demo(config, log);
      out << result.text;
      if (require_pass && !result.comparison.pass) {
        throw CliError(ExitCode::VerdictFail, "verdict_fail", "comparison verdict is FAIL");
      }
    }
    return 0;
  } catch (const CliError& e) {
    return fail(err, e);
  } catch (const ConfigError& e) {
    return fail(err, CliError(ExitCode::Schema, "schema_error", e.what()));
  } catch (const taskgen::TaskError& e) {
    return fail(err, CliError(ExitCode::Schema, "schema_error", e.what()));
  } catch (const lm::UnknownTokenError& e) {
    return fail(err, CliError(ExitCode::Vocabulary, "vocabulary_mismatch", e.what()));
  } catch (const eval::EvalError& e) {
    return fail(err, CliError(ExitCode::Vocabulary, "vocabulary_mismatch", e.what()));
  } catch (const lm::DivergenceError& e) {
    return fail(err, CliError(ExitCode::Divergence, "training_diverged", e.what()));
  } catch (const lm::CheckpointError& e) {
    return fail(err, CliError(ExitCode::BadInput, "bad_input", e.what()));
  } catch (const nlohmann::json::exception& e) {
    return fail(err, CliError(ExitCode::BadInput, "bad_input", e.what()));
  } catch (const std::exception& e) {
    return fail(err, CliError(ExitCode::Internal, "internal_error", e.what()));
  }
}

}  // namespace insec::cli
