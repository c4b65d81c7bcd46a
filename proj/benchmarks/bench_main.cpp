#include <benchmark/benchmark.h>

#include <string>
#include <vector>

#include "insec/corruptor.hpp"
#include "insec/markup.hpp"
#include "insec/model.hpp"
#include "insec/taskgen.hpp"
#include "insec/train.hpp"

using namespace insec;

namespace {

std::vector<std::string> annotated_text(std::size_t n) {
  const auto corpus = taskgen::build_corpus(n, taskgen::Mix::uniform(), 1);
  corrupt::AnnotationConfig cfg;
  cfg.seed = 2;
  std::vector<std::string> out;
  for (const auto& d : corrupt::annotate_corpus(corpus.tasks, cfg).documents) out.push_back(markup::render(d.document));
  return out;
}

void BM_BuildCorpus(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(taskgen::build_corpus(static_cast<std::size_t>(state.range(0)), taskgen::Mix::uniform(), 1));
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BuildCorpus)->Arg(1000)->Unit(benchmark::kMillisecond);

void BM_Annotate(benchmark::State& state) {
  const auto corpus = taskgen::build_corpus(1000, taskgen::Mix::uniform(), 1);
  corrupt::AnnotationConfig cfg;
  for (auto _ : state) benchmark::DoNotOptimize(corrupt::annotate_corpus(corpus.tasks, cfg));
  state.SetItemsProcessed(state.iterations() * 1000);
}
BENCHMARK(BM_Annotate)->Unit(benchmark::kMillisecond);

void BM_ParseStrip(benchmark::State& state) {
  const auto text = annotated_text(200);
  std::size_t bytes = 0;
  for (const auto& t : text) bytes += t.size();
  for (auto _ : state) {
    for (const auto& t : text) {
      benchmark::DoNotOptimize(markup::parse(t));
      benchmark::DoNotOptimize(markup::strip(t));
    }
  }
  state.SetBytesProcessed(static_cast<std::int64_t>(state.iterations() * bytes));
}
BENCHMARK(BM_ParseStrip)->Unit(benchmark::kMillisecond);

// One optimizer-sized batch at the default model shape.
void BM_LossAndGrad(benchmark::State& state) {
  const auto text = annotated_text(64);
  const auto vocab = lm::Vocabulary::build(text);
  lm::TrainConfig tc;
  const auto cfg = tc.model(static_cast<int>(vocab.size()));
  const auto params = init_params(cfg, 1);
  auto windows = lm::encode_corpus(vocab, text, cfg.context);
  windows.resize(std::min<std::size_t>(windows.size(), static_cast<std::size_t>(state.range(0))));
  std::vector<float> grad(params.size());
  std::size_t tokens = 0;
  for (const auto& w : windows) tokens += w.size();
  for (auto _ : state) {
    benchmark::DoNotOptimize(lm::loss_and_grad<float>(cfg, params, windows, grad));
  }
  state.SetItemsProcessed(static_cast<std::int64_t>(state.iterations() * tokens));
}
BENCHMARK(BM_LossAndGrad)->Arg(8)->Arg(32)->Unit(benchmark::kMillisecond);

void BM_DecoderStep(benchmark::State& state) {
  lm::ModelConfig cfg;
  cfg.vocab_size = 300;
  const auto params = init_params(cfg, 1);
  lm::Decoder dec(cfg, params);
  lm::TokenId token = 7;
  for (auto _ : state) {
    if (dec.length() == cfg.context) dec.reset();
    benchmark::DoNotOptimize(dec.step(token));
    token = token % 290 + 7;
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_DecoderStep);

}  // namespace

BENCHMARK_MAIN();
