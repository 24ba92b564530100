#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "radgen/config.hpp"
#include "radgen/corpus.hpp"
#include "radgen/metrics.hpp"
#include "radgen/model.hpp"

namespace radgen {

// One example made ready for the model.
struct TrainingExample {
  std::string id;
  ImageInput input;
  std::vector<TokenId> ids;           // [start, w1 .. wN, end]
  std::vector<double> obs_target;     // 0/1 per observation; empty if unknown
  std::vector<double> tag_target;     // 0/1 per tag; empty if unknown
  Tokens reference;                   // tokenized report text
};

// Loads inputs, encodes reports and builds MLC targets. `tags` is the tag
// universe in model order (may be empty).
std::vector<TrainingExample> prepare_examples(const Corpus& corpus, const Vocab& vocab,
                                              const std::vector<std::string>& tags,
                                              std::size_t max_len);

// Sorted distinct tags of a corpus.
std::vector<std::string> tag_universe(const Corpus& corpus);

// Mean over the batch of the teacher-forced cross-entropy (inputs
// ids[0..N-1], targets ids[1..N]) plus mlc_weight times the MLC binary
// cross-entropy on whichever targets an example has.
Tensor compute_loss(const ReportModel& model, std::span<const TrainingExample> batch,
                    const ForwardContext& ctx, double mlc_weight);

struct OptimizerState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::size_t t = 0;
};

// Bias-corrected Adam over `params`; absent gradients count as zero.
void adam_step(std::span<Tensor> params, OptimizerState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double bleu4 = 0.0;
  double seconds = 0.0;
};

std::string epoch_record_json(const EpochRecord& r);

struct TrainResult {
  std::vector<EpochRecord> history;
  std::size_t best_epoch = 0;
  double best_bleu4 = 0.0;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Greedy-decoded validation BLEU-4 (corpus level) against each example's
// encoded target, i.e. what the vocabulary can express.
double validation_bleu4(const ReportModel& model, const Vocab& vocab,
                        std::span<const TrainingExample> examples);

// Shuffled mini-batches per epoch (order seeded by hash(seed, epoch)), Adam,
// dropout; after each epoch the model is kept iff validation BLEU-4 strictly
// improves. Stops on patience or max_epochs and leaves the best weights in
// `model`.
TrainResult train(ReportModel& model, const Vocab& vocab,
                  std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> valid_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

struct BenchmarkRow {
  std::string model;  // "transformer" or "lstm"
  std::size_t seq_len = 0;
  std::size_t parameters = 0;
  double seconds_per_epoch = 0.0;
  std::size_t sequential_depth = 0;
};

// Times one teacher-forced training epoch (forward, backward, Adam) per
// model and sequence length. The LSTM's hidden size is chosen to match the
// transformer's parameter count.
std::vector<BenchmarkRow> benchmark_decoders(std::span<const TrainingExample> examples,
                                             const ModelConfig& transformer_config,
                                             const std::vector<std::size_t>& seq_lens,
                                             std::size_t repeats = 1, std::uint64_t seed = 0);

}  // namespace radgen
