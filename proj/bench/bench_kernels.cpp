// SPDX-License-Identifier: Apache-2.0
// Serial reference against the OpenMP kernels on one synthetic corpus.
#include <benchmark/benchmark.h>
#include <spdlog/spdlog.h>

#include "xmlc/bm25.hpp"
#include "xmlc/decoder.hpp"
#include "xmlc/featurize.hpp"
#include "xmlc/svm_ovr.hpp"
#include "xmlc/synth.hpp"

namespace {

using namespace xmlc;

struct Workload {
  SynthCorpus corpus;
  LabelVocabulary vocab;
  TermVocabulary terms;
  std::vector<SparseVector> x;
  std::vector<std::vector<LabelId>> gold;
  std::vector<std::vector<std::uint32_t>> dev_tokens;

  Workload() {
    SynthConfig s;
    s.n_articles = 2000;
    s.n_labels = 100;
    s.dev_articles = 300;
    corpus = synthesize(s);
    vocab = count_frequencies(corpus.vocab, corpus.train);
    terms = build_term_vocabulary(corpus.train, FeatureConfig{});
    for (const auto &a : corpus.train) {
      x.push_back(tfidf(a, terms));
      gold.push_back(gold_ids(a, vocab));
    }
    for (const auto &a : corpus.dev) {
      std::vector<std::uint32_t> ids;
      for (const auto &t : document_terms(a, terms.config())) {
        if (const auto *k = terms.find(t)) ids.push_back(*k);
      }
      dev_tokens.push_back(ids);
    }
  }
};

const Workload &workload() {
  static const Workload w;
  return w;
}

Execution exec_of(const benchmark::State &state) {
  return state.range(0) == 0 ? Execution::serial : Execution::parallel;
}

void set_label(benchmark::State &state) {
  state.SetLabel(state.range(0) == 0 ? "serial" : "parallel, " + std::to_string(max_threads()) + " threads");
}

void BM_train_ovr(benchmark::State &state) {
  const auto &w = workload();
  SvmConfig cfg;
  cfg.min_label_frequency = 5;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_ovr(w.x, w.gold, w.terms.size(), w.vocab, cfg, exec_of(state)));
  }
  set_label(state);
}

void BM_knn_labels_batch(benchmark::State &state) {
  const auto &w = workload();
  const auto index = Bm25Index::build(w.corpus.train, w.vocab);
  KnnConfig cfg;
  cfg.k = 40;
  for (auto _ : state) benchmark::DoNotOptimize(knn_labels_batch(index, w.corpus.dev, cfg, exec_of(state)));
  set_label(state);
}

void BM_decoder_scores_batch(benchmark::State &state) {
  const auto &w = workload();
  DecoderConfig cfg;
  cfg.head = HeadKind::gru;
  cfg.embedding_dim = 64;
  cfg.hidden_dim = 64;
  cfg.max_steps = 30;
  const auto model = make_decoder(cfg, w.terms, w.vocab);
  for (auto _ : state) benchmark::DoNotOptimize(decoder_scores_batch(model, w.dev_tokens, exec_of(state)));
  set_label(state);
}

BENCHMARK(BM_train_ovr)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_knn_labels_batch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_decoder_scores_batch)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace

int main(int argc, char **argv) {
  spdlog::set_level(spdlog::level::warn);
  benchmark::Initialize(&argc, argv);
  if (benchmark::ReportUnrecognizedArguments(argc, argv)) return 1;
  benchmark::RunSpecifiedBenchmarks();
  benchmark::Shutdown();
  return 0;
}
