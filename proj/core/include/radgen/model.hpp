#pragma once

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "radgen/config.hpp"
#include "radgen/corpus.hpp"
#include "radgen/incremental.hpp"
#include "radgen/layers.hpp"
#include "radgen/rng.hpp"
#include "radgen/tensor.hpp"

namespace radgen {

// Named trainable tensors, in registration order (which is checkpoint order).
class ParameterSet {
 public:
  Tensor add(std::string name, Shape shape, std::vector<double> values);
  const Tensor& at(std::string_view name) const;
  bool contains(std::string_view name) const;
  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }
  std::size_t scalar_count() const;
  void zero_grad();

  // Deep copy of all values, for snapshot/restore of the best epoch.
  std::vector<std::vector<double>> snapshot() const;
  void restore(const std::vector<std::vector<double>>& values);

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// Train mode enables dropout, which draws from `rng`.
struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;
  double dropout_rate = 0.0;
};

// Counts computation stages that must run one after another along the time
// axis: one per layer for the transformer, one per token for the LSTM.
struct DecodeTrace {
  std::size_t sequential_depth = 0;
};

// Encoder output the decoder attends to: [memory_slots x d_model].
struct MemoryGrid {
  Tensor features;
};

class ImageEncoder {
 public:
  ImageEncoder(const ModelConfig& config, ParameterSet& params, Rng& init);

  // Backend per config: "precomputed" projects a [slots x feature_dim]
  // record; "tiny-conv" runs two stride-2 conv+ReLU stages then projects.
  MemoryGrid encode(const ImageInput& input) const;
  void set_trainable(bool on);
  const std::vector<Tensor>& parameters() const { return params_; }

 private:
  MemoryGrid encode_features(const FeatureRecord& rec) const;
  MemoryGrid encode_image(const GrayImage& img) const;

  ModelConfig config_;
  Tensor conv1_w_, conv1_b_, conv2_w_, conv2_b_;
  Tensor proj_w_, proj_b_;
  std::vector<Tensor> params_;
};

class SequenceDecoder {
 public:
  virtual ~SequenceDecoder() = default;
  // Teacher-forced logits [T x V] for all positions of `tokens`.
  virtual Tensor logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                        const ForwardContext& ctx, DecodeTrace* trace = nullptr) const = 0;
  virtual std::unique_ptr<IncrementalDecoder> start(const MemoryGrid& memory) const = 0;
};

struct TransformerLayerWeights {
  AttentionWeights self_attn;
  AttentionWeights cross_attn;
  FeedForwardWeights ffn;
  Tensor ln1_gain, ln1_bias, ln2_gain, ln2_bias, ln3_gain, ln3_bias;
};

class TransformerDecoder final : public SequenceDecoder {
 public:
  TransformerDecoder(const ModelConfig& config, ParameterSet& params, Rng& init);

  // Embedding + positional encoding, then N x (masked self-attention,
  // cross-attention over memory, FFN), each with residual + layer norm,
  // then the output projection. All positions are computed at once.
  Tensor logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                const ForwardContext& ctx, DecodeTrace* trace = nullptr) const override;
  std::unique_ptr<IncrementalDecoder> start(const MemoryGrid& memory) const override;

  const ModelConfig& config() const { return config_; }
  const std::vector<TransformerLayerWeights>& layers() const { return layers_; }
  const Tensor& embedding() const { return embedding_; }
  const Tensor& positional() const { return positional_; }
  const Tensor& output_weight() const { return out_w_; }
  const Tensor& output_bias() const { return out_b_; }

 private:
  ModelConfig config_;
  Tensor embedding_, positional_;
  std::vector<TransformerLayerWeights> layers_;
  Tensor out_w_, out_b_;
};

struct LstmStep {
  Tensor h, c;
  Tensor input_gate, forget_gate, candidate, output_gate;
};

class LstmDecoder final : public SequenceDecoder {
 public:
  LstmDecoder(const ModelConfig& config, ParameterSet& params, Rng& init);

  // Hidden/cell state initialised from the mean-pooled memory through a
  // learned projection, then one LSTM step per token.
  Tensor logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                const ForwardContext& ctx, DecodeTrace* trace = nullptr) const override;
  std::unique_ptr<IncrementalDecoder> start(const MemoryGrid& memory) const override;

  // Initial (h, c) for an image.
  std::pair<Tensor, Tensor> initial_state(const MemoryGrid& memory) const;
  // One cell step; `input_proj` is the token's embedding times the input
  // weight, a [1 x 4H] row. Gate order: input, forget, candidate, output.
  LstmStep step(const Tensor& input_proj, const Tensor& h, const Tensor& c) const;
  Tensor project_input(std::span<const TokenId> tokens) const;
  Tensor output_logits(const Tensor& hidden) const;

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  Tensor embedding_, input_w_, hidden_w_, bias_;
  Tensor init_h_w_, init_h_b_, init_c_w_, init_c_b_;
  Tensor out_w_, out_b_;
};

struct MlcOutput {
  Tensor obs_logits;  // [1 x n_observations]
  Tensor tag_logits;  // [1 x n_tags]; undefined when the model has no tags
  std::vector<double> obs_scores;
  std::vector<double> tag_scores;
};

// Multi-label classifier: mean-pooled memory -> linear heads -> sigmoid.
class MlcHead {
 public:
  MlcHead(const ModelConfig& config, ParameterSet& params, Rng& init);
  MlcOutput predict(const MemoryGrid& memory) const;

 private:
  ModelConfig config_;
  Tensor obs_w_, obs_b_, tag_w_, tag_b_;
};

// Encoder + decoder + MLC head sharing one parameter set.
class ReportModel {
 public:
  ReportModel(ModelConfig config, std::uint64_t seed);
  ReportModel(const ReportModel&) = delete;
  ReportModel& operator=(const ReportModel&) = delete;
  ReportModel(ReportModel&&) = default;
  ReportModel& operator=(ReportModel&&) = default;

  const ModelConfig& config() const { return config_; }
  void set_dropout(double rate);
  ParameterSet& parameters() { return *params_; }
  const ParameterSet& parameters() const { return *params_; }

  MemoryGrid encode(const ImageInput& input) const { return encoder_->encode(input); }
  Tensor decode_logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                       const ForwardContext& ctx, DecodeTrace* trace = nullptr) const {
    return decoder_->logits(tokens, memory, with_dropout(ctx), trace);
  }
  MlcOutput mlc(const MemoryGrid& memory) const { return mlc_->predict(memory); }
  std::unique_ptr<IncrementalDecoder> start_decoding(const MemoryGrid& memory) const {
    return decoder_->start(memory);
  }

  // fine_tune=false freezes the encoder: its tensors stop requiring grads.
  void set_encoder_trainable(bool fine_tune) { encoder_->set_trainable(fine_tune); }
  std::vector<Tensor> trainable_parameters() const;

  const ImageEncoder& encoder() const { return *encoder_; }
  const SequenceDecoder& decoder() const { return *decoder_; }

  double dropout_rate() const { return config_.dropout_rate; }

 private:
  ForwardContext with_dropout(ForwardContext ctx) const {
    ctx.dropout_rate = config_.dropout_rate;
    return ctx;
  }

  ModelConfig config_;
  std::unique_ptr<ParameterSet> params_;
  std::unique_ptr<ImageEncoder> encoder_;
  std::unique_ptr<SequenceDecoder> decoder_;
  std::unique_ptr<MlcHead> mlc_;
};

// Closed-form number of trainable scalars for a configuration.
std::size_t parameter_count(const ModelConfig& config);

// LSTM hidden size whose total parameter count is closest to `target`.
std::size_t matched_lstm_hidden(ModelConfig config, std::size_t target);

}  // namespace radgen
