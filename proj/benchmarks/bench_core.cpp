#include <benchmark/benchmark.h>

#include <cmath>

#include "radgen/decoding.hpp"
#include "radgen/labeler.hpp"
#include "radgen/metrics.hpp"
#include "radgen/model.hpp"
#include "radgen/synth.hpp"
#include "radgen/training.hpp"

using namespace radgen;

namespace {

struct Data {
  SyntheticCorpus synth;
  Vocab vocab;
  std::vector<TrainingExample> examples;
};

const Data& data() {
  static const Data d = [] {
    Data out;
    out.synth = synth_corpus(1, 32);
    out.vocab = build_vocab(out.synth.corpus, 1);
    for (std::size_t i = 0; i < out.synth.truth.size(); ++i) {
      TrainingExample ex;
      ex.input = out.synth.inputs[i];
      ex.reference = tokenize_report(out.synth.corpus.examples[i].report);
      ex.ids = encode_tokens(ex.reference, out.vocab, 60);
      ex.obs_target = out.synth.truth[i].positive_indicator();
      out.examples.push_back(std::move(ex));
    }
    return out;
  }();
  return d;
}

Tensor filled(Shape shape, double seed) {
  std::vector<double> v(shape_size(shape));
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::sin(seed + 0.37 * static_cast<double>(i));
  return Tensor::parameter(std::move(shape), std::move(v));
}

ModelConfig config(DecoderKind kind) {
  ModelConfig c;
  c.decoder = kind;
  c.vocab_size = data().vocab.size();
  c.dropout_rate = 0.0;
  return c;
}

}  // namespace

static void BM_Matmul(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = filled({n, n}, 0.1), b = filled({n, n}, 0.7);
  for (auto _ : state) benchmark::DoNotOptimize(matmul(a, b).at(0));
}
BENCHMARK(BM_Matmul)->RangeMultiplier(2)->Range(16, 128);

static void BM_MatmulBackward(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  Tensor a = filled({n, n}, 0.1), b = filled({n, n}, 0.7);
  for (auto _ : state) {
    a.zero_grad();
    b.zero_grad();
    sum(matmul(a, b)).backward();
  }
}
BENCHMARK(BM_MatmulBackward)->RangeMultiplier(2)->Range(16, 128);

static void BM_TrainStep(benchmark::State& state) {
  const auto kind = state.range(0) == 0 ? DecoderKind::transformer : DecoderKind::lstm;
  ReportModel model(config(kind), 3);
  auto params = model.trainable_parameters();
  OptimizerState opt;
  TrainConfig tc;
  const std::span<const TrainingExample> batch(data().examples.data(), 8);
  for (auto _ : state) {
    model.parameters().zero_grad();
    Tensor loss = compute_loss(model, batch, ForwardContext{}, 1.0);
    loss.backward();
    adam_step(params, opt, tc);
  }
  state.SetLabel(std::string(to_string(kind)));
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

static void BM_BeamSearch(benchmark::State& state) {
  ReportModel model(config(DecoderKind::transformer), 4);
  const MemoryGrid mem = model.encode(data().examples[0].input);
  BeamOptions o;
  o.beam_size = static_cast<std::size_t>(state.range(0));
  o.max_len = 30;
  for (auto _ : state) benchmark::DoNotOptimize(beam_search_decode(model, mem, o));
}
BENCHMARK(BM_BeamSearch)->Arg(1)->Arg(3)->Arg(5)->Unit(benchmark::kMillisecond);

static void BM_CorpusBleu(benchmark::State& state) {
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  const auto& ex = data().examples;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    cands.push_back(ex[i].reference);
    refs.push_back({ex[(i + 1) % ex.size()].reference});
  }
  for (auto _ : state) benchmark::DoNotOptimize(corpus_bleu(cands, refs));
}
BENCHMARK(BM_CorpusBleu);

static void BM_Cider(benchmark::State& state) {
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  const auto& ex = data().examples;
  for (std::size_t i = 0; i < ex.size(); ++i) {
    cands.push_back(ex[i].reference);
    refs.push_back({ex[(i + 1) % ex.size()].reference});
  }
  for (auto _ : state) benchmark::DoNotOptimize(cider(cands, refs));
}
BENCHMARK(BM_Cider);

static void BM_LabelReport(benchmark::State& state) {
  const RuleSet rules = load_rules(std::string(RADGEN_DATA_DIR) + "/rules.txt");
  const auto& reports = data().synth.corpus.examples;
  std::size_t i = 0;
  for (auto _ : state) benchmark::DoNotOptimize(label_report(reports[i++ % reports.size()].report, rules));
}
BENCHMARK(BM_LabelReport);
BENCHMARK_MAIN();
