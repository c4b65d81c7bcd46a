#include "insec_cli/pipeline.hpp"

#include <chrono>
#include <cstdio>
#include <ctime>
#include <sstream>

#include "insec/generate.hpp"
#include "insec/taskgen.hpp"

namespace insec::cli {

namespace fs = std::filesystem;

namespace {

std::string utc_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto secs = std::chrono::system_clock::to_time_t(now);
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(now.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[64];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ", tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday,
                tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<int>(ms));
  return buf;
}

std::string pct(double v) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

}  // namespace

nlohmann::json error_json(const CliError& e) {
  return {{"error", {{"kind", e.kind()}, {"exit_code", static_cast<int>(e.code())}, {"message", e.what()}}}};
}

EventLog::EventLog(const fs::path& path) {
  out_.emplace(path, std::ios::app);
  if (!*out_) throw CliError(ExitCode::MissingFile, "io_error", "cannot open log file " + path.string());
}

void EventLog::event(std::string_view name, nlohmann::json fields) {
  if (!out_) return;
  nlohmann::json line = {{"ts", utc_timestamp()}, {"event", name}};
  for (auto& [k, v] : fields.items()) line[k] = std::move(v);
  *out_ << line.dump() << '\n';
  out_->flush();
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CliError(ExitCode::MissingFile, "missing_file", "cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CliError(ExitCode::MissingFile, "io_error", "cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw CliError(ExitCode::MissingFile, "io_error", "failed writing " + path.string());
}

std::vector<std::string> training_text(const std::vector<markup::AnnotatedDocument>& docs, bool clean) {
  std::vector<std::string> out;
  out.reserve(docs.size());
  for (const auto& d : docs) out.push_back(markup::render(clean ? markup::drop_mistakes(d) : d));
  return out;
}

lm::Vocabulary shared_vocabulary(const std::vector<markup::AnnotatedDocument>& docs, const eval::Suite& suite) {
  auto text = training_text(docs, false);
  const auto clean = training_text(docs, true);
  text.insert(text.end(), clean.begin(), clean.end());
  for (const auto& c : suite.cases) {
    text.push_back(c.prompt);
    text.push_back(c.control_prompt);
  }
  return lm::Vocabulary::build(text);
}

taskgen::Corpus run_gen(const RunConfig& config, EventLog& log) {
  auto corpus = taskgen::build_corpus(config.taskgen.size, config.taskgen.mix, config.taskgen.seed, config.taskgen.ranges);
  log.event("gen", {{"tasks", corpus.tasks.size()}, {"seed", config.taskgen.seed}});
  return corpus;
}

corrupt::AnnotatedCorpus run_annotate(const RunConfig& config, const std::vector<taskgen::Task>& tasks, EventLog& log) {
  auto annotated = corrupt::annotate_corpus(tasks, config.annotation.config());
  log.event("annotate", {{"audit", annotated.stats}});
  return annotated;
}

eval::Suite run_suite(const RunConfig& config, EventLog& log) {
  auto suite = eval::make_suite(config.eval.suite_size, config.eval.mix, config.eval.seed, config.taskgen.ranges);
  log.event("suite", {{"cases", suite.cases.size()}, {"fingerprint", suite.fingerprint()}});
  return suite;
}

lm::Checkpoint run_train(const RunConfig& config, const std::vector<markup::AnnotatedDocument>& docs, bool clean,
                         const eval::Suite& suite, EventLog& log) {
  const auto text = training_text(docs, clean);
  const auto vocab = shared_vocabulary(docs, suite);
  const std::string label = clean ? "baseline" : "insec";
  log.event("train_start", {{"model", label}, {"documents", text.size()}, {"vocab_size", vocab.size()}});
  auto ckpt = lm::train(config.train, text, vocab, [&](int epoch, double loss) {
    log.event("epoch", {{"model", label}, {"epoch", epoch}, {"loss", loss}});
  });
  log.event("train_done", {{"model", label}, {"final_loss", ckpt.loss_history.empty() ? 0.0 : ckpt.loss_history.back()}});
  return ckpt;
}

eval::Evaluation run_eval(const RunConfig& config, const lm::Checkpoint& ckpt, const eval::Suite& suite,
                          std::string label, EventLog& log) {
  auto result = eval::evaluate(ckpt, suite, config.eval.decode, label);
  log.event("eval", {{"model", label}, {"overall", result.report.overall}});
  return result;
}

std::vector<markup::AnnotatedDocument> load_documents(const fs::path& path) {
  const std::string text = read_file(path);
  std::vector<markup::AnnotatedDocument> docs;
  std::size_t line_no = 0;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (j.contains("units")) {
        docs.push_back(j.get<markup::AnnotatedDocument>());
      } else {
        docs.push_back(taskgen::to_document(j.get<taskgen::Task>()));
      }
    } catch (const std::exception& e) {
      throw CliError(ExitCode::BadInput, "bad_input",
                     path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (docs.empty()) throw CliError(ExitCode::BadInput, "bad_input", path.string() + " holds no documents");
  return docs;
}

DemoResult run_demo(const RunConfig& config, EventLog& log) {
  const Layout out{config.output_dir};
  fs::create_directories(out.dir);
  log.event("demo_start", {{"config", to_json(config)}});

  const auto corpus = run_gen(config, log);
  write_file(out.corpus(), taskgen::corpus_to_jsonl(corpus));
  const auto annotated = run_annotate(config, corpus.tasks, log);
  write_file(out.annotated(), corrupt::documents_to_jsonl(annotated));
  write_file(out.audit(), nlohmann::json(annotated.stats).dump(2) + "\n");
  const auto suite = run_suite(config, log);
  write_file(out.suite(), suite.to_jsonl());

  std::vector<markup::AnnotatedDocument> docs;
  docs.reserve(annotated.documents.size());
  for (const auto& d : annotated.documents) docs.push_back(d.document);

  DemoResult result;
  const auto reference = eval::reference_case();
  std::vector<std::pair<std::string, lm::Checkpoint>> models;
  for (const bool clean : {false, true}) {
    const std::string label = clean ? "baseline" : "insec";
    auto ckpt = run_train(config, docs, clean, suite, log);
    lm::save(ckpt, out.checkpoint(label));
    auto evaluation = run_eval(config, ckpt, suite, label, log);
    write_file(out.report(label), nlohmann::json(evaluation.report).dump(2) + "\n");
    write_file(out.transcripts(label), eval::transcripts_to_jsonl(evaluation.transcripts));
    const auto continuation = lm::generate(ckpt, reference.prompt, config.eval.decode).text;
    if (clean) {
      result.baseline = std::move(evaluation.report);
      result.baseline_continuation = continuation;
    } else {
      result.insec = std::move(evaluation.report);
      result.insec_continuation = continuation;
    }
  }
  result.stripped = markup::strip(reference.prompt + result.insec_continuation);
  result.comparison = eval::compare(result.insec, result.baseline, config.eval.thresholds);
  write_file(out.comparison(), nlohmann::json(result.comparison).dump(2) + "\n");

  std::ostringstream text;
  text << "== Forced-error prompt ==\n" << reference.prompt << "\n\n";
  text << "== Model trained without negative samples ==\n" << reference.prompt << result.baseline_continuation << "\n\n";
  text << "== Model trained with negative samples ==\n" << reference.prompt << result.insec_continuation << "\n\n";
  text << "== Same continuation after strip ==\n" << result.stripped << "\n\n";
  text << "== Forced-error suite: " << result.insec.overall.n_cases << " cases, " << result.insec.overall.n_controls
       << " clean controls ==\n";
  text << "metric                      insec   baseline\n";
  const auto row = [&](std::string_view name, double a, double b) {
    std::string padded(name);
    padded.resize(28, ' ');
    text << padded << pct(a) << "   " << pct(b) << "\n";
  };
  row("correction_trigger_rate", result.insec.overall.correction_trigger_rate,
      result.baseline.overall.correction_trigger_rate);
  row("false_correction_rate", result.insec.overall.false_correction_rate, result.baseline.overall.false_correction_rate);
  row("final_accuracy_stripped", result.insec.overall.final_accuracy_stripped,
      result.baseline.overall.final_accuracy_stripped);
  row("final_accuracy_raw", result.insec.overall.final_accuracy_raw, result.baseline.overall.final_accuracy_raw);
  text << "\n";
  for (const auto& c : result.comparison.checks) {
    text << (c.pass ? "PASS  " : "FAIL  ") << c.name << " = " << pct(c.value) << (c.at_least ? " >= " : " <= ")
         << pct(c.threshold) << "\n";
  }
  text << "verdict: " << (result.comparison.pass ? "PASS" : "FAIL") << "\n";
  result.text = text.str();
  write_file(out.demo(), result.text);
  log.event("demo_done", {{"verdict", result.comparison.pass ? "PASS" : "FAIL"}});
  return result;
}

}  // namespace insec::cli
