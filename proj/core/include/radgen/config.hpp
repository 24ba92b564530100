#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>

namespace radgen {

enum class DecoderKind { transformer, lstm };
enum class EncoderKind { precomputed, tiny_conv };

std::string_view to_string(DecoderKind kind);
std::string_view to_string(EncoderKind kind);
DecoderKind parse_decoder_kind(std::string_view text);
EncoderKind parse_encoder_kind(std::string_view text);

// Architecture hyperparameters. Defaults are the desk-scale configuration;
// full-size values (d_model 512, lstm_hidden 1024) are accepted as well.
struct ModelConfig {
  DecoderKind decoder = DecoderKind::transformer;
  EncoderKind encoder = EncoderKind::precomputed;

  std::size_t d_model = 64;
  std::size_t n_heads = 2;
  std::size_t n_layers = 2;
  std::size_t d_ff = 128;
  std::size_t lstm_hidden = 64;
  std::size_t lstm_embed = 64;
  std::size_t vocab_size = 0;
  std::size_t max_len = 60;
  double dropout_rate = 0.5;
  double layer_norm_eps = 1e-5;

  // Encoder output grid the decoder cross-attends to.
  std::size_t memory_slots = 16;
  // Width of each slot in a precomputed feature record.
  std::size_t feature_dim = 32;
  // Tiny-conv backend input size; two stride-2 stages map it to
  // (image_height/4) x (image_width/4) == memory_slots positions.
  std::size_t image_height = 16;
  std::size_t image_width = 16;
  std::size_t conv_channels1 = 8;
  std::size_t conv_channels2 = 16;

  std::size_t n_observations = 14;
  std::size_t n_tags = 0;

  std::size_t d_k() const { return d_model / n_heads; }

  // Throws ConfigError naming the first violated invariant.
  void validate() const;
};

// Optimisation settings. Defaults follow the reported training setup; the
// few values the setup leaves open are marked.
struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;  // unspecified upstream
  std::size_t batch_size = 8;
  std::size_t max_epochs = 30;
  double dropout = 0.5;
  std::size_t early_stop_patience = 5;  // unspecified upstream
  std::uint64_t seed = 0;
  bool fine_tune_encoder = true;
  double mlc_loss_weight = 1.0;  // 0 for pure captioning

  void validate() const;
};

struct RunConfig {
  ModelConfig model;
  TrainConfig train;
};

// Applies one `key=value` setting; throws ConfigError on unknown keys or
// unparsable values. Keys are the field names above (model fields may also
// be written with a "model." prefix, training fields with "train.").
void apply_setting(RunConfig& config, std::string_view key, std::string_view value);

// Reads either a JSON object (flat or {"model": {...}, "train": {...}}) or a
// key=value file with '#' comments.
RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(std::string_view text);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(std::string_view json);
std::string run_config_to_json(const RunConfig& config);

}  // namespace radgen
