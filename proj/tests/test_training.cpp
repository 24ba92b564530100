#include <gtest/gtest.h>

#include <cmath>
#include <json.hpp>

#include "radgen/checkpoint.hpp"
#include "radgen/error.hpp"
#include "radgen/evaluation.hpp"
#include "support.hpp"

using namespace radgen;
using namespace radgen::testing;

namespace {

double eval_loss(const ReportModel& m, std::span<const TrainingExample> batch, double mlc_weight = 0.0) {
  NoGradGuard ng;
  return compute_loss(m, batch, ForwardContext{}, mlc_weight).item();
}

// Gives every parameter in `params` the gradient `g[i]` (same for all tensors).
void set_gradients(std::vector<Tensor>& params, const std::vector<double>& g) {
  for (auto& p : params) p.zero_grad();
  Tensor total = Tensor::scalar(0.0);
  for (auto& p : params) {
    total = add(total, sum(mul(p, Tensor::from(p.shape(), g))));
  }
  total.backward();
}

TrainConfig quick_config() {
  TrainConfig t;
  t.lr = 1e-3;
  t.dropout = 0.0;
  t.batch_size = 4;
  t.max_epochs = 3;
  t.early_stop_patience = 5;
  t.seed = 1;
  return t;
}

}  // namespace

TEST(PrepareExamples, EncodesTargetsAndShapes) {
  TempDir dir("prep");
  auto s = synth_corpus(10, 6);
  write_synthetic_corpus(s, dir.path());
  const Corpus c = load_dataset(dir / "corpus.jsonl");
  const Vocab v = build_vocab(c, 1);
  const auto tags = tag_universe(c);
  EXPECT_TRUE(std::is_sorted(tags.begin(), tags.end()));
  const auto ex = prepare_examples(c, v, tags, 60);
  ASSERT_EQ(ex.size(), 6u);
  for (std::size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(ex[i].ids.front(), kStartId);
    EXPECT_EQ(ex[i].ids.back(), kEndId);
    EXPECT_EQ(ex[i].obs_target.size(), kNumObservations);
    EXPECT_EQ(ex[i].tag_target.size(), tags.size());
    EXPECT_EQ(ex[i].obs_target, s.truth[i].positive_indicator());
    EXPECT_EQ(ex[i].reference, tokenize_report(c.examples[i].report));
  }
}

TEST(Loss, NearLogVocabAtInit) {
  const auto d = tiny_data(3, 8);
  for (auto kind : {DecoderKind::transformer, DecoderKind::lstm}) {
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ReportModel m(tiny_config(kind, d.vocab.size()), seed);
      const double l = eval_loss(m, d.examples);
      const double lnv = std::log(static_cast<double>(d.vocab.size()));
      EXPECT_GT(l, 0.8 * lnv);
      EXPECT_LT(l, 1.2 * lnv);
    }
  }
}

TEST(Loss, ForcedTargetsGiveNearZero) {
  const auto d = tiny_data(4, 2);
  ReportModel m(tiny_config(DecoderKind::transformer, d.vocab.size()), 1);
  Tensor weight = m.parameters().at("decoder.output.weight"), bias = m.parameters().at("decoder.output.bias");
  for (auto& w : weight.mutable_values()) w = 0.0;
  auto b = bias.mutable_values();
  std::fill(b.begin(), b.end(), 0.0);
  b[kEndId] = 60.0;
  TrainingExample ex = d.examples[0];
  ex.ids = {kStartId, kEndId};
  EXPECT_LT(eval_loss(m, std::span(&ex, 1)), 1e-20);
}

TEST(Loss, MlcTermAddsWeightedBce) {
  const auto d = tiny_data(5, 4, 1, true);
  ModelConfig c = tiny_config(DecoderKind::lstm, d.vocab.size());
  c.n_tags = d.tags.size();
  ReportModel m(c, 2);
  const double base = eval_loss(m, d.examples, 0.0);
  const double one = eval_loss(m, d.examples, 1.0);
  const double two = eval_loss(m, d.examples, 2.0);
  EXPECT_GT(one, base);
  EXPECT_NEAR(two - base, 2.0 * (one - base), 1e-9);
  EXPECT_ANY_THROW(eval_loss(m, std::span<const TrainingExample>{}));
}

TEST(Loss, DecreasesOverFiftySteps) {
  const auto d = tiny_data(6, 4);
  for (auto kind : {DecoderKind::transformer, DecoderKind::lstm}) {
    ReportModel m(tiny_config(kind, d.vocab.size()), 3);
    auto params = m.trainable_parameters();
    OptimizerState st;
    TrainConfig cfg = quick_config();
    const double before = eval_loss(m, d.examples);
    for (int step = 0; step < 50; ++step) {
      m.parameters().zero_grad();
      compute_loss(m, d.examples, ForwardContext{}, 0.0).backward();
      adam_step(params, st, cfg);
    }
    const double after = eval_loss(m, d.examples);
    EXPECT_LT(after, before) << to_string(kind);
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  Rng rng(1);
  std::vector<Tensor> ps{random_tensor({3, 2}, rng), random_tensor({4}, rng)};
  const std::vector<double> a(ps[0].values().begin(), ps[0].values().end());
  OptimizerState st;
  for (int i = 0; i < 3; ++i) adam_step(ps, st, quick_config());
  EXPECT_EQ(std::vector<double>(ps[0].values().begin(), ps[0].values().end()), a);
}

TEST(Adam, MatchesReferenceRecurrence) {
  TrainConfig cfg = quick_config();
  cfg.lr = 0.01;
  Rng rng(2);
  std::vector<Tensor> ps{random_tensor({5}, rng)};
  std::vector<double> theta(ps[0].values().begin(), ps[0].values().end());
  std::vector<double> m(5, 0.0), v(5, 0.0);
  OptimizerState st;
  const std::vector<std::vector<double>> grads{
      {0.5, -2.0, 1e-3, 3.0, -0.25}, {0.5, -2.0, 1e-3, 3.0, -0.25}, {-1.0, 0.0, 4.0, 0.1, 2.0}};
  for (std::size_t t = 0; t < grads.size(); ++t) {
    set_gradients(ps, grads[t]);
    adam_step(ps, st, cfg);
    for (std::size_t i = 0; i < 5; ++i) {
      const double g = grads[t][i];
      m[i] = cfg.beta1 * m[i] + (1 - cfg.beta1) * g;
      v[i] = cfg.beta2 * v[i] + (1 - cfg.beta2) * g * g;
      const double mh = m[i] / (1 - std::pow(cfg.beta1, t + 1.0));
      const double vh = v[i] / (1 - std::pow(cfg.beta2, t + 1.0));
      const double before = theta[i];
      theta[i] -= cfg.lr * mh / (std::sqrt(vh) + cfg.adam_eps);
      if (t == 0) {
        // First step moves each weight by lr in the direction of -sign(g).
        EXPECT_NEAR(theta[i] - before, -cfg.lr * g / (std::abs(g) + cfg.adam_eps), 1e-15);
      }
      EXPECT_NEAR(ps[0].values()[i], theta[i], 1e-14) << "step " << t << " i " << i;
    }
  }
}

TEST(Adam, TenStepsAreDeterministic) {
  const auto d = tiny_data(7, 4);
  auto run = [&] {
    ReportModel m(tiny_config(DecoderKind::transformer, d.vocab.size()), 9);
    m.set_dropout(0.1);
    auto params = m.trainable_parameters();
    OptimizerState st;
    Rng rng(99);
    for (int s = 0; s < 10; ++s) {
      m.parameters().zero_grad();
      compute_loss(m, d.examples, ForwardContext{true, &rng, 0.0}, 1.0).backward();
      adam_step(params, st, quick_config());
    }
    return m.parameters().snapshot();
  };
  EXPECT_EQ(run(), run());
}

TEST(Step, SmallStepDecreasesSingleExampleLoss) {
  const auto d = tiny_data(8, 3);
  TrainConfig cfg = quick_config();
  cfg.lr = 1e-5;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto kind = seed % 2 == 0 ? DecoderKind::transformer : DecoderKind::lstm;
    ReportModel m(tiny_config(kind, d.vocab.size()), 100 + seed);
    auto params = m.trainable_parameters();
    const auto one = std::span(&d.examples[seed % 3], 1);
    const double before = eval_loss(m, one);
    OptimizerState st;
    m.parameters().zero_grad();
    compute_loss(m, one, ForwardContext{}, 0.0).backward();
    adam_step(params, st, cfg);
    EXPECT_LT(eval_loss(m, one), before) << "init " << seed;
  }
}

TEST(Step, ZeroedGradientsDoNotAccumulate) {
  const auto d = tiny_data(9, 2);
  ReportModel m(tiny_config(DecoderKind::lstm, d.vocab.size()), 4);
  auto params = m.trainable_parameters();
  auto grads = [&] {
    m.parameters().zero_grad();
    compute_loss(m, d.examples, ForwardContext{}, 1.0).backward();
    std::vector<std::vector<double>> out;
    for (auto& p : params) out.emplace_back(p.grad().begin(), p.grad().end());
    return out;
  };
  const auto g1 = grads();
  const auto g2 = grads();
  EXPECT_EQ(g1, g2);

  // Identical state and gradients give identical updates.
  OptimizerState a, b;
  const auto start = m.parameters().snapshot();
  grads();
  adam_step(params, a, quick_config());
  const auto after_a = m.parameters().snapshot();
  m.parameters().restore(start);
  grads();
  adam_step(params, b, quick_config());
  EXPECT_EQ(m.parameters().snapshot(), after_a);
}

TEST(Train, PatienceOneWithFlatBleuStopsAfterTwoEpochs) {
  const auto d = tiny_data(11, 6);
  ReportModel m(tiny_config(DecoderKind::transformer, d.vocab.size()), 1);
  TrainConfig cfg = quick_config();
  cfg.lr = 1e-14;
  cfg.early_stop_patience = 1;
  cfg.max_epochs = 10;
  std::size_t callbacks = 0;
  const auto r = train(m, d.vocab, d.examples, d.examples, cfg, [&](const EpochRecord&) { ++callbacks; });
  ASSERT_EQ(r.history.size(), 2u);
  EXPECT_EQ(callbacks, 2u);
  EXPECT_EQ(r.history[0].bleu4, r.history[1].bleu4);
  EXPECT_EQ(r.best_epoch, 1u);
}

TEST(Train, BestEpochDominatesLaterOnesAndIsRestored) {
  const auto d = tiny_data(12, 12);
  const std::span<const TrainingExample> all(d.examples);
  ReportModel m(tiny_config(DecoderKind::transformer, d.vocab.size()), 2);
  TrainConfig cfg = quick_config();
  cfg.lr = 3e-3;
  cfg.max_epochs = 8;
  cfg.early_stop_patience = 3;
  const auto r = train(m, d.vocab, all.subspan(0, 8), all.subspan(8), cfg);
  ASSERT_GE(r.best_epoch, 1u);
  EXPECT_EQ(r.history[r.best_epoch - 1].bleu4, r.best_bleu4);
  for (const auto& e : r.history) {
    EXPECT_LE(e.bleu4, r.best_bleu4);
    if (e.epoch < r.best_epoch) {
      EXPECT_LT(e.bleu4, r.best_bleu4);
    }
  }
  EXPECT_DOUBLE_EQ(validation_bleu4(m, d.vocab, all.subspan(8)), r.best_bleu4);
  for (std::size_t i = 1; i < r.history.size(); ++i) EXPECT_EQ(r.history[i].epoch, i + 1);

  const auto j = nlohmann::json::parse(epoch_record_json(r.history[0]));
  for (const char* k : {"epoch", "loss", "bleu4", "seconds"}) EXPECT_TRUE(j.contains(k)) << k;
}

TEST(Train, RejectsBadInput) {
  const auto d = tiny_data(13, 2);
  ReportModel m(tiny_config(DecoderKind::lstm, d.vocab.size()), 2);
  TrainConfig cfg = quick_config();
  EXPECT_ANY_THROW(train(m, d.vocab, {}, d.examples, cfg));
  EXPECT_ANY_THROW(train(m, d.vocab, d.examples, {}, cfg));
  cfg.lr = 0.0;
  EXPECT_THROW(train(m, d.vocab, d.examples, d.examples, cfg), ConfigError);
}

TEST(Train, MemorizesFourExamples) {
  const auto d = tiny_data(14, 4);
  ModelConfig c = tiny_config(DecoderKind::transformer, d.vocab.size(), 24, 2, 2);
  ReportModel m(c, 3);
  TrainConfig cfg = quick_config();
  cfg.lr = 3e-3;
  cfg.max_epochs = 150;
  cfg.early_stop_patience = 150;
  cfg.batch_size = 4;
  double best = 0.0;
  train(m, d.vocab, d.examples, d.examples, cfg, [&](const EpochRecord& r) { best = std::max(best, r.bleu4); });
  EXPECT_GT(best, 0.99);
}

TEST(Mlc, LearnsObservationsOnHeldOutData) {
  const auto d = tiny_data(15, 260);
  const RuleSet rules = load_rules(std::string(RADGEN_DATA_DIR) + "/rules.txt");
  const std::span<const TrainingExample> all(d.examples);
  const auto train_set = all.subspan(0, 200);
  for (auto kind : {DecoderKind::transformer, DecoderKind::lstm}) {
    ReportModel m(tiny_config(kind, d.vocab.size(), 32), 4);
    auto params = m.trainable_parameters();
    OptimizerState st;
    TrainConfig cfg = quick_config();
    cfg.lr = 1e-2;
    for (int epoch = 0; epoch < 15; ++epoch) {
      for (std::size_t b = 0; b < train_set.size(); b += 8) {
        m.parameters().zero_grad();
        compute_loss(m, train_set.subspan(b, 8), ForwardContext{}, 1.0).backward();
        adam_step(params, st, cfg);
      }
    }
    Corpus held;
    std::vector<MemoryGrid> mems;
    for (std::size_t i = 200; i < 260; ++i) {
      held.examples.push_back(d.synth.corpus.examples[i]);
      mems.push_back(m.encode(d.synth.inputs[i]));
    }
    const auto s1 = stage1_eval(held, mems, m, {}, rules, 0.5);
    EXPECT_GT(s1.obs.classification.micro.f1, 0.95) << to_string(kind);
  }
}

TEST(Checkpoint, RoundTripsThroughDisk) {
  TempDir dir("ckpt");
  const auto d = tiny_data(16, 3, 1, true);
  for (auto kind : {DecoderKind::transformer, DecoderKind::lstm}) {
    ModelConfig c = tiny_config(kind, d.vocab.size());
    c.n_tags = d.tags.size();
    ReportModel m(c, 8);
    const auto path = dir / (std::string(to_string(kind)) + ".ckpt");
    save_checkpoint(path, m, d.vocab, d.tags);
    EXPECT_TRUE(std::filesystem::exists(checkpoint_meta_path(path)));
    Checkpoint ck = load_checkpoint(path);
    EXPECT_EQ(ck.tags, d.tags);
    EXPECT_EQ(ck.vocab.size(), d.vocab.size());
    EXPECT_EQ(config_fingerprint(ck.model.config()), config_fingerprint(m.config()));
    // Values are stored as float32.
    const auto a = m.parameters().snapshot(), b = ck.model.parameters().snapshot();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t t = 0; t < a.size(); ++t)
      for (std::size_t i = 0; i < a[t].size(); ++i) EXPECT_EQ(static_cast<float>(a[t][i]), b[t][i]);
    const auto again = dir / "again.ckpt";
    save_checkpoint(again, ck.model, ck.vocab, ck.tags);
    Checkpoint ck2 = load_checkpoint(again);
    EXPECT_EQ(ck2.model.parameters().snapshot(), b);
    EXPECT_NEAR(eval_loss(ck.model, d.examples, 1.0), eval_loss(m, d.examples, 1.0), 1e-4);
  }
  EXPECT_ANY_THROW(load_checkpoint(dir / "missing.ckpt"));
}

TEST(Checkpoint, TensorCodecRejectsCorruption) {
  const std::vector<NamedTensor> ts{{"a", {2, 2}, {1.0, 2.0, 3.0, 4.0}}, {"b", {1}, {0.5}}};
  const std::string bytes = encode_tensors(ts);
  const auto back = decode_tensors(bytes);
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].name, "a");
  EXPECT_EQ(back[0].shape, (Shape{2, 2}));
  EXPECT_EQ(back[1].values, (std::vector<double>{0.5}));
  EXPECT_ANY_THROW(decode_tensors(bytes.substr(0, bytes.size() - 3)));
  EXPECT_ANY_THROW(decode_tensors("XXXX" + bytes.substr(4)));
}

TEST(Benchmark, OneRowPerModelAndLength) {
  const auto d = tiny_data(17, 4, 1, false, 80);
  ModelConfig c = tiny_config(DecoderKind::transformer, d.vocab.size(), 16, 2, 2);
  c.max_len = 80;
  const auto rows = benchmark_decoders(d.examples, c, {8, 16});
  ASSERT_EQ(rows.size(), 4u);
  for (const auto& r : rows) {
    EXPECT_GT(r.seconds_per_epoch, 0.0);
    EXPECT_GT(r.parameters, 0u);
    if (r.model == "transformer") {
      EXPECT_EQ(r.sequential_depth, c.n_layers);
    } else {
      EXPECT_EQ(r.model, "lstm");
      EXPECT_EQ(r.sequential_depth, r.seq_len);
    }
  }
  const double ratio = static_cast<double>(rows[0].parameters) / static_cast<double>(rows[1].parameters);
  EXPECT_GT(ratio, 0.8);
  EXPECT_LT(ratio, 1.25);
}
