#include "radgen/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

#include <json.hpp>

#include "radgen/decoding.hpp"
#include "radgen/error.hpp"

namespace radgen {

std::vector<std::string> tag_universe(const Corpus& corpus) {
  std::set<std::string> s;
  for (const auto& ex : corpus.examples)
    if (ex.tags) s.insert(ex.tags->begin(), ex.tags->end());
  return {s.begin(), s.end()};
}

std::vector<TrainingExample> prepare_examples(const Corpus& corpus, const Vocab& vocab,
                                              const std::vector<std::string>& tags,
                                              std::size_t max_len) {
  std::vector<TrainingExample> out;
  out.reserve(corpus.size());
  for (const auto& ex : corpus.examples) {
    TrainingExample t;
    t.id = ex.id;
    t.input = load_image_input(corpus, ex);
    t.reference = tokenize_report(ex.report);
    t.ids = encode_tokens(t.reference, vocab, max_len);
    if (ex.observations) t.obs_target = ex.observations->positive_indicator();
    if (ex.tags && !tags.empty()) {
      t.tag_target.assign(tags.size(), 0.0);
      for (const auto& tag : *ex.tags) {
        auto it = std::lower_bound(tags.begin(), tags.end(), tag);
        if (it != tags.end() && *it == tag) t.tag_target[static_cast<std::size_t>(it - tags.begin())] = 1.0;
      }
    }
    out.push_back(std::move(t));
  }
  return out;
}

Tensor compute_loss(const ReportModel& model, std::span<const TrainingExample> batch,
                    const ForwardContext& ctx, double mlc_weight) {
  if (batch.empty()) throw std::invalid_argument("compute_loss: empty batch");
  Tensor total;
  for (const auto& ex : batch) {
    if (ex.ids.size() < 2) throw ShapeError("compute_loss: example '" + ex.id + "' has no target");
    const MemoryGrid mem = model.encode(ex.input);
    std::span<const TokenId> ids(ex.ids);
    Tensor loss = cross_entropy(model.decode_logits(ids.first(ids.size() - 1), mem, ctx),
                                ids.subspan(1), kPadId);
    if (mlc_weight > 0.0 && (!ex.obs_target.empty() || !ex.tag_target.empty())) {
      const MlcOutput mlc = model.mlc(mem);
      Tensor m;
      if (!ex.obs_target.empty()) m = binary_cross_entropy_with_logits(mlc.obs_logits, ex.obs_target);
      if (!ex.tag_target.empty() && mlc.tag_logits.defined() &&
          mlc.tag_logits.size() == ex.tag_target.size()) {
        Tensor t = binary_cross_entropy_with_logits(mlc.tag_logits, ex.tag_target);
        m = m.defined() ? add(m, t) : t;
      }
      if (m.defined()) loss = add(loss, scale(m, mlc_weight));
    }
    total = total.defined() ? add(total, loss) : loss;
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

void adam_step(std::span<Tensor> params, OptimizerState& state, const TrainConfig& config) {
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.size(), 0.0);
      state.v.emplace_back(p.size(), 0.0);
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("adam_step: parameter count changed");
  ++state.t;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    if (m.size() != p.size()) throw ShapeError("adam_step: shape mismatch for parameter " + std::to_string(i));
    if (!p.has_grad()) {
      // Moments still decay.
      for (std::size_t j = 0; j < m.size(); ++j) {
        m[j] *= b1;
        v[j] *= b2;
      }
    }
    auto g = p.grad();
    auto w = p.mutable_values();
    for (std::size_t j = 0; j < w.size(); ++j) {
      if (p.has_grad()) {
        m[j] = b1 * m[j] + (1.0 - b1) * g[j];
        v[j] = b2 * v[j] + (1.0 - b2) * g[j] * g[j];
      }
      const double mhat = m[j] / c1, vhat = v[j] / c2;
      w[j] -= config.lr * mhat / (std::sqrt(vhat) + config.adam_eps);
    }
  }
}

std::string epoch_record_json(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  j["loss"] = r.loss;
  j["bleu4"] = r.bleu4;
  j["seconds"] = r.seconds;
  return j.dump();
}

double validation_bleu4(const ReportModel& model, const Vocab& vocab,
                        std::span<const TrainingExample> examples) {
  if (examples.empty()) return 0.0;
  NoGradGuard ng;
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (const auto& ex : examples) {
    const auto h = greedy_decode(model, model.encode(ex.input), model.config().max_len);
    cands.push_back(tokenize_report(decode_tokens(h.tokens, vocab)));
    refs.push_back({tokenize_report(decode_tokens(ex.ids, vocab))});
  }
  return corpus_bleu(cands, refs).smoothed[3];
}

TrainResult train(ReportModel& model, const Vocab& vocab,
                  std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> valid_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw std::invalid_argument("train: empty training set");
  if (valid_set.empty()) throw std::invalid_argument("train: empty validation set");
  model.set_dropout(config.dropout);
  model.set_encoder_trainable(config.fine_tune_encoder);
  std::vector<Tensor> params = model.trainable_parameters();
  OptimizerState opt;

  TrainResult result;
  double best = -1.0;
  std::size_t since_best = 0;
  std::vector<std::vector<double>> best_weights;
  std::vector<std::size_t> order(train_set.size());

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::uint64_t epoch_key = hash_combine(config.seed, epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(epoch_key);
    shuffle_rng.shuffle(std::span<std::size_t>(order));
    Rng dropout_rng = Rng(epoch_key).fork(0xd20);
    const ForwardContext ctx{true, &dropout_rng, 0.0};

    double loss_sum = 0.0;
    for (std::size_t b = 0; b < order.size(); b += config.batch_size) {
      std::vector<TrainingExample> batch;
      for (std::size_t i = b; i < std::min(order.size(), b + config.batch_size); ++i) {
        batch.push_back(train_set[order[i]]);
      }
      model.parameters().zero_grad();
      Tensor loss = compute_loss(model, batch, ctx, config.mlc_loss_weight);
      loss.backward();
      adam_step(params, opt, config);
      loss_sum += loss.item() * static_cast<double>(batch.size());
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.loss = loss_sum / static_cast<double>(train_set.size());
    rec.bleu4 = validation_bleu4(model, vocab, valid_set);
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.history.push_back(rec);
    if (on_epoch) on_epoch(rec);

    if (rec.bleu4 > best) {
      best = rec.bleu4;
      best_weights = model.parameters().snapshot();
      result.best_epoch = epoch;
      result.best_bleu4 = rec.bleu4;
      since_best = 0;
    } else if (++since_best >= config.early_stop_patience) {
      break;
    }
  }
  model.parameters().zero_grad();
  model.parameters().restore(best_weights);
  return result;
}

std::vector<BenchmarkRow> benchmark_decoders(std::span<const TrainingExample> examples,
                                             const ModelConfig& transformer_config,
                                             const std::vector<std::size_t>& seq_lens,
                                             std::size_t repeats, std::uint64_t seed) {
  if (examples.empty()) throw std::invalid_argument("benchmark_decoders: no examples");
  if (repeats == 0) repeats = 1;
  std::vector<BenchmarkRow> rows;
  for (std::size_t T : seq_lens) {
    ModelConfig tc = transformer_config;
    tc.decoder = DecoderKind::transformer;
    tc.max_len = std::max(tc.max_len, T + 1);
    ModelConfig lc = tc;
    lc.decoder = DecoderKind::lstm;
    lc.lstm_hidden = matched_lstm_hidden(lc, parameter_count(tc));

    // Sequences of exactly T+1 ids: each report's ids repeated to length.
    std::vector<TrainingExample> seqs(examples.begin(), examples.end());
    for (auto& ex : seqs) {
      std::vector<TokenId> body(ex.ids.begin() + 1, ex.ids.end());
      if (body.empty()) body.push_back(kEndId);
      std::vector<TokenId> ids{kStartId};
      for (std::size_t i = 0; ids.size() < T + 1; ++i) ids.push_back(body[i % body.size()]);
      ex.ids = std::move(ids);
    }

    for (const ModelConfig& cfg : {tc, lc}) {
      ReportModel model(cfg, seed);
      std::vector<Tensor> params = model.trainable_parameters();
      OptimizerState opt;
      TrainConfig train_cfg;
      Rng rng(seed);
      const ForwardContext ctx{true, &rng, 0.0};
      BenchmarkRow row;
      row.model = std::string(to_string(cfg.decoder));
      row.seq_len = T;
      row.parameters = model.parameters().scalar_count();
      {
        DecodeTrace trace;
        std::vector<TokenId> probe(seqs[0].ids.begin(), seqs[0].ids.begin() + static_cast<std::ptrdiff_t>(T));
        NoGradGuard ng;
        model.decode_logits(probe, model.encode(seqs[0].input), ForwardContext{}, &trace);
        row.sequential_depth = trace.sequential_depth;
      }
      double total = 0.0;
      for (std::size_t r = 0; r < repeats; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        for (std::size_t b = 0; b < seqs.size(); b += train_cfg.batch_size) {
          std::span<const TrainingExample> batch(seqs.data() + b,
                                                 std::min(train_cfg.batch_size, seqs.size() - b));
          model.parameters().zero_grad();
          Tensor loss = compute_loss(model, batch, ctx, 0.0);
          loss.backward();
          adam_step(params, opt, train_cfg);
        }
        total += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      }
      row.seconds_per_epoch = total / static_cast<double>(repeats);
      rows.push_back(row);
    }
  }
  return rows;
}

}  // namespace radgen
