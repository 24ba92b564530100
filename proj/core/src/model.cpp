#include "radgen/model.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "radgen/error.hpp"

namespace radgen {

// ---- ParameterSet -----------------------------------------------------------

Tensor ParameterSet::add(std::string name, Shape shape, std::vector<double> values) {
  if (contains(name)) throw std::logic_error("duplicate parameter name '" + name + "'");
  Tensor t = Tensor::parameter(std::move(shape), std::move(values));
  entries_.emplace_back(std::move(name), t);
  return t;
}

const Tensor& ParameterSet::at(std::string_view name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw std::out_of_range("no parameter named '" + std::string(name) + "'");
}

bool ParameterSet::contains(std::string_view name) const {
  for (const auto& e : entries_)
    if (e.first == name) return true;
  return false;
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.second.size();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.second.zero_grad();
}

std::vector<std::vector<double>> ParameterSet::snapshot() const {
  std::vector<std::vector<double>> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) {
    auto v = e.second.values();
    out.emplace_back(v.begin(), v.end());
  }
  return out;
}

void ParameterSet::restore(const std::vector<std::vector<double>>& values) {
  if (values.size() != entries_.size()) throw ShapeError("restore: parameter count mismatch");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    auto dst = entries_[i].second.mutable_values();
    if (dst.size() != values[i].size()) {
      throw ShapeError("restore: size mismatch for '" + entries_[i].first + "'");
    }
    std::copy(values[i].begin(), values[i].end(), dst.begin());
  }
}

namespace {

Tensor uniform_param(ParameterSet& ps, const std::string& name, Shape shape, std::size_t fan_in,
                     Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return ps.add(name, std::move(shape), std::move(v));
}

Tensor const_param(ParameterSet& ps, const std::string& name, Shape shape, double value) {
  std::vector<double> v(shape_size(shape), value);
  return ps.add(name, std::move(shape), std::move(v));
}

Tensor maybe_dropout(const Tensor& x, const ForwardContext& ctx) {
  if (!ctx.training || ctx.dropout_rate == 0.0) return x;
  if (!ctx.rng) throw std::logic_error("training forward pass needs an rng for dropout");
  return dropout(x, ctx.dropout_rate, *ctx.rng, true);
}

void check_tokens(std::span<const TokenId> tokens, std::size_t vocab, std::size_t max_len) {
  if (tokens.empty()) throw ShapeError("decoder: empty token sequence");
  if (tokens.size() > max_len) {
    throw ShapeError("decoder: sequence length " + std::to_string(tokens.size()) +
                     " exceeds max_len " + std::to_string(max_len));
  }
  for (auto t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= vocab) {
      throw ShapeError("decoder: token id " + std::to_string(t) + " out of range for vocab " +
                       std::to_string(vocab));
    }
  }
}

Tensor row_of(const Tensor& v) { return reshape(v, {1, v.size()}); }

AttentionWeights attention_params(ParameterSet& ps, const std::string& prefix, std::size_t d,
                                  Rng& rng) {
  AttentionWeights w;
  w.query = uniform_param(ps, prefix + ".query", {d, d}, d, rng);
  w.key = uniform_param(ps, prefix + ".key", {d, d}, d, rng);
  w.value = uniform_param(ps, prefix + ".value", {d, d}, d, rng);
  w.output = uniform_param(ps, prefix + ".output", {d, d}, d, rng);
  return w;
}

}  // namespace

// ---- ImageEncoder -----------------------------------------------------------

ImageEncoder::ImageEncoder(const ModelConfig& config, ParameterSet& params, Rng& init)
    : config_(config) {
  const std::size_t d = config.d_model;
  if (config.encoder == EncoderKind::tiny_conv) {
    const std::size_t c1 = config.conv_channels1, c2 = config.conv_channels2;
    conv1_w_ = uniform_param(params, "encoder.conv1.weight", {c1, 1, 3, 3}, 9, init);
    conv1_b_ = uniform_param(params, "encoder.conv1.bias", {c1}, 9, init);
    conv2_w_ = uniform_param(params, "encoder.conv2.weight", {c2, c1, 3, 3}, 9 * c1, init);
    conv2_b_ = uniform_param(params, "encoder.conv2.bias", {c2}, 9 * c1, init);
    proj_w_ = uniform_param(params, "encoder.proj.weight", {c2, d}, c2, init);
    proj_b_ = uniform_param(params, "encoder.proj.bias", {d}, c2, init);
    params_ = {conv1_w_, conv1_b_, conv2_w_, conv2_b_, proj_w_, proj_b_};
  } else {
    const std::size_t f = config.feature_dim;
    proj_w_ = uniform_param(params, "encoder.proj.weight", {f, d}, f, init);
    proj_b_ = uniform_param(params, "encoder.proj.bias", {d}, f, init);
    params_ = {proj_w_, proj_b_};
  }
}

void ImageEncoder::set_trainable(bool on) {
  for (auto& p : params_) p.set_requires_grad(on);
}

MemoryGrid ImageEncoder::encode(const ImageInput& input) const {
  if (config_.encoder == EncoderKind::tiny_conv) {
    const auto* img = std::get_if<GrayImage>(&input);
    if (!img) throw ShapeError("tiny-conv encoder expects a grayscale image, got a feature record");
    return encode_image(*img);
  }
  const auto* rec = std::get_if<FeatureRecord>(&input);
  if (!rec) throw ShapeError("precomputed encoder expects a feature record, got an image");
  return encode_features(*rec);
}

MemoryGrid ImageEncoder::encode_features(const FeatureRecord& rec) const {
  const std::size_t expected = config_.memory_slots * config_.feature_dim;
  if (rec.values.size() != expected) {
    throw ShapeError("feature record: expected " + std::to_string(expected) + " values (" +
                     std::to_string(config_.memory_slots) + " slots x " +
                     std::to_string(config_.feature_dim) + "), got " +
                     std::to_string(rec.values.size()));
  }
  std::vector<double> v(rec.values.begin(), rec.values.end());
  Tensor x = Tensor::from({config_.memory_slots, config_.feature_dim}, std::move(v));
  return {add_bias(matmul(x, proj_w_), proj_b_)};
}

MemoryGrid ImageEncoder::encode_image(const GrayImage& img) const {
  if (img.height != config_.image_height || img.width != config_.image_width) {
    throw ShapeError("image: expected " + std::to_string(config_.image_height) + "x" +
                     std::to_string(config_.image_width) + ", got " + std::to_string(img.height) +
                     "x" + std::to_string(img.width));
  }
  Tensor x = Tensor::from({1, img.height, img.width}, img.pixels);
  Tensor h = relu(conv2d(x, conv1_w_, conv1_b_, 2, 1));
  h = relu(conv2d(h, conv2_w_, conv2_b_, 2, 1));
  Tensor rows = channels_to_rows(h);
  if (rows.rows() != config_.memory_slots) {
    throw ShapeError("tiny-conv: produced " + std::to_string(rows.rows()) +
                     " positions, config expects " + std::to_string(config_.memory_slots));
  }
  return {add_bias(matmul(rows, proj_w_), proj_b_)};
}

// ---- TransformerDecoder -----------------------------------------------------

TransformerDecoder::TransformerDecoder(const ModelConfig& config, ParameterSet& params, Rng& init)
    : config_(config) {
  const std::size_t d = config.d_model, v = config.vocab_size, ff = config.d_ff;
  embedding_ = uniform_param(params, "decoder.embedding", {v, d}, d, init);
  positional_ = positional_encoding(config.max_len, d);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    const std::string p = "decoder.layer" + std::to_string(l);
    TransformerLayerWeights w;
    w.self_attn = attention_params(params, p + ".self_attn", d, init);
    w.cross_attn = attention_params(params, p + ".cross_attn", d, init);
    w.ffn.w1 = uniform_param(params, p + ".ffn.w1", {d, ff}, d, init);
    w.ffn.b1 = uniform_param(params, p + ".ffn.b1", {ff}, d, init);
    w.ffn.w2 = uniform_param(params, p + ".ffn.w2", {ff, d}, ff, init);
    w.ffn.b2 = uniform_param(params, p + ".ffn.b2", {d}, ff, init);
    w.ln1_gain = const_param(params, p + ".ln1.gain", {d}, 1.0);
    w.ln1_bias = const_param(params, p + ".ln1.bias", {d}, 0.0);
    w.ln2_gain = const_param(params, p + ".ln2.gain", {d}, 1.0);
    w.ln2_bias = const_param(params, p + ".ln2.bias", {d}, 0.0);
    w.ln3_gain = const_param(params, p + ".ln3.gain", {d}, 1.0);
    w.ln3_bias = const_param(params, p + ".ln3.bias", {d}, 0.0);
    layers_.push_back(std::move(w));
  }
  out_w_ = uniform_param(params, "decoder.output.weight", {d, v}, d, init);
  out_b_ = uniform_param(params, "decoder.output.bias", {v}, d, init);
}

Tensor TransformerDecoder::logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                                  const ForwardContext& ctx, DecodeTrace* trace) const {
  check_tokens(tokens, config_.vocab_size, config_.max_len);
  const std::size_t T = tokens.size();
  const double eps = config_.layer_norm_eps;
  Tensor x = add(scale(radgen::embedding(embedding_, tokens), std::sqrt(static_cast<double>(config_.d_model))),
                 slice_rows(positional_, 0, T));
  x = maybe_dropout(x, ctx);
  const Tensor mask = causal_mask(T);
  for (const auto& w : layers_) {
    Tensor a = multi_head_attention(x, x, w.self_attn, config_.n_heads, &mask);
    x = layer_norm(add(x, maybe_dropout(a, ctx)), w.ln1_gain, w.ln1_bias, eps);
    Tensor c = multi_head_attention(x, memory.features, w.cross_attn, config_.n_heads);
    x = layer_norm(add(x, maybe_dropout(c, ctx)), w.ln2_gain, w.ln2_bias, eps);
    Tensor f = feed_forward(x, w.ffn);
    x = layer_norm(add(x, maybe_dropout(f, ctx)), w.ln3_gain, w.ln3_bias, eps);
    // All T positions of a layer are one matrix computation.
    if (trace) ++trace->sequential_depth;
  }
  return add_bias(matmul(x, out_w_), out_b_);
}

namespace {

class TransformerStepper final : public IncrementalDecoder {
 public:
  TransformerStepper(const TransformerDecoder& dec, const MemoryGrid& memory) : dec_(&dec) {
    NoGradGuard ng;
    const Tensor mem = memory.features.detach();
    for (const auto& w : dec.layers()) {
      mem_k_.push_back(matmul(mem, w.cross_attn.key));
      mem_v_.push_back(matmul(mem, w.cross_attn.value));
    }
    self_k_.resize(dec.layers().size());
    self_v_.resize(dec.layers().size());
  }

  std::unique_ptr<IncrementalDecoder> clone() const override {
    return std::make_unique<TransformerStepper>(*this);
  }

  std::vector<double> advance(TokenId token) override {
    NoGradGuard ng;
    const auto& cfg = dec_->config();
    const TokenId one[] = {token};
    check_tokens(one, cfg.vocab_size, cfg.max_len);
    if (pos_ >= cfg.max_len) throw ShapeError("decoder: position exceeds max_len");
    const double eps = cfg.layer_norm_eps;
    Tensor x = add(scale(embedding(dec_->embedding(), one), std::sqrt(static_cast<double>(cfg.d_model))),
                   slice_rows(dec_->positional(), pos_, pos_ + 1));
    for (std::size_t l = 0; l < dec_->layers().size(); ++l) {
      const auto& w = dec_->layers()[l];
      Tensor k = matmul(x, w.self_attn.key), v = matmul(x, w.self_attn.value);
      if (self_k_[l].defined()) {
        const Tensor ks[] = {self_k_[l], k}, vs[] = {self_v_[l], v};
        k = concat_rows(ks);
        v = concat_rows(vs);
      }
      self_k_[l] = k;
      self_v_[l] = v;
      Tensor a = multi_head_attention_projected(matmul(x, w.self_attn.query), k, v,
                                                w.self_attn.output, cfg.n_heads);
      x = layer_norm(add(x, a), w.ln1_gain, w.ln1_bias, eps);
      Tensor c = multi_head_attention_projected(matmul(x, w.cross_attn.query), mem_k_[l], mem_v_[l],
                                                w.cross_attn.output, cfg.n_heads);
      x = layer_norm(add(x, c), w.ln2_gain, w.ln2_bias, eps);
      x = layer_norm(add(x, feed_forward(x, w.ffn)), w.ln3_gain, w.ln3_bias, eps);
    }
    ++pos_;
    const Tensor logits = add_bias(matmul(x, dec_->output_weight()), dec_->output_bias());
    return {logits.values().begin(), logits.values().end()};
  }

  std::size_t vocab_size() const override { return dec_->config().vocab_size; }
  std::size_t position() const override { return pos_; }

 private:
  const TransformerDecoder* dec_;
  std::vector<Tensor> mem_k_, mem_v_, self_k_, self_v_;
  std::size_t pos_ = 0;
};

class LstmStepper final : public IncrementalDecoder {
 public:
  LstmStepper(const LstmDecoder& dec, const MemoryGrid& memory) : dec_(&dec) {
    NoGradGuard ng;
    std::tie(h_, c_) = dec.initial_state(MemoryGrid{memory.features.detach()});
  }

  std::unique_ptr<IncrementalDecoder> clone() const override {
    return std::make_unique<LstmStepper>(*this);
  }

  std::vector<double> advance(TokenId token) override {
    NoGradGuard ng;
    const auto& cfg = dec_->config();
    const TokenId one[] = {token};
    check_tokens(one, cfg.vocab_size, cfg.max_len);
    if (pos_ >= cfg.max_len) throw ShapeError("decoder: position exceeds max_len");
    LstmStep s = dec_->step(dec_->project_input(one), h_, c_);
    h_ = s.h;
    c_ = s.c;
    ++pos_;
    const Tensor logits = dec_->output_logits(h_);
    return {logits.values().begin(), logits.values().end()};
  }

  std::size_t vocab_size() const override { return dec_->config().vocab_size; }
  std::size_t position() const override { return pos_; }

 private:
  const LstmDecoder* dec_;
  Tensor h_, c_;
  std::size_t pos_ = 0;
};

}  // namespace

std::unique_ptr<IncrementalDecoder> TransformerDecoder::start(const MemoryGrid& memory) const {
  return std::make_unique<TransformerStepper>(*this, memory);
}

// ---- LstmDecoder ------------------------------------------------------------

LstmDecoder::LstmDecoder(const ModelConfig& config, ParameterSet& params, Rng& init)
    : config_(config) {
  const std::size_t v = config.vocab_size, e = config.lstm_embed, h = config.lstm_hidden,
                    d = config.d_model;
  embedding_ = uniform_param(params, "decoder.embedding", {v, e}, e, init);
  input_w_ = uniform_param(params, "decoder.lstm.input_weight", {e, 4 * h}, e, init);
  hidden_w_ = uniform_param(params, "decoder.lstm.hidden_weight", {h, 4 * h}, h, init);
  bias_ = uniform_param(params, "decoder.lstm.bias", {4 * h}, h, init);
  init_h_w_ = uniform_param(params, "decoder.init_h.weight", {d, h}, d, init);
  init_h_b_ = uniform_param(params, "decoder.init_h.bias", {h}, d, init);
  init_c_w_ = uniform_param(params, "decoder.init_c.weight", {d, h}, d, init);
  init_c_b_ = uniform_param(params, "decoder.init_c.bias", {h}, d, init);
  out_w_ = uniform_param(params, "decoder.output.weight", {h, v}, h, init);
  out_b_ = uniform_param(params, "decoder.output.bias", {v}, h, init);
}

std::pair<Tensor, Tensor> LstmDecoder::initial_state(const MemoryGrid& memory) const {
  Tensor pooled = row_of(mean_rows(memory.features));
  return {tanh(add_bias(matmul(pooled, init_h_w_), init_h_b_)),
          tanh(add_bias(matmul(pooled, init_c_w_), init_c_b_))};
}

Tensor LstmDecoder::project_input(std::span<const TokenId> tokens) const {
  return matmul(embedding(embedding_, tokens), input_w_);
}

LstmStep LstmDecoder::step(const Tensor& input_proj, const Tensor& h, const Tensor& c) const {
  const std::size_t H = config_.lstm_hidden;
  Tensor z = add_bias(add(input_proj, matmul(h, hidden_w_)), bias_);
  LstmStep s;
  s.input_gate = sigmoid(slice_cols(z, 0, H));
  s.forget_gate = sigmoid(slice_cols(z, H, 2 * H));
  s.candidate = tanh(slice_cols(z, 2 * H, 3 * H));
  s.output_gate = sigmoid(slice_cols(z, 3 * H, 4 * H));
  s.c = add(mul(s.forget_gate, c), mul(s.input_gate, s.candidate));
  s.h = mul(s.output_gate, tanh(s.c));
  return s;
}

Tensor LstmDecoder::output_logits(const Tensor& hidden) const {
  return add_bias(matmul(hidden, out_w_), out_b_);
}

Tensor LstmDecoder::logits(std::span<const TokenId> tokens, const MemoryGrid& memory,
                           const ForwardContext& ctx, DecodeTrace* trace) const {
  check_tokens(tokens, config_.vocab_size, config_.max_len);
  auto [h, c] = initial_state(memory);
  Tensor x = matmul(maybe_dropout(embedding(embedding_, tokens), ctx), input_w_);
  std::vector<Tensor> hs;
  hs.reserve(tokens.size());
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    LstmStep s = step(slice_rows(x, t, t + 1), h, c);
    h = s.h;
    c = s.c;
    hs.push_back(h);
    if (trace) ++trace->sequential_depth;
  }
  return output_logits(maybe_dropout(concat_rows(hs), ctx));
}

std::unique_ptr<IncrementalDecoder> LstmDecoder::start(const MemoryGrid& memory) const {
  return std::make_unique<LstmStepper>(*this, memory);
}

// ---- MlcHead ----------------------------------------------------------------

MlcHead::MlcHead(const ModelConfig& config, ParameterSet& params, Rng& init) : config_(config) {
  const std::size_t d = config.d_model;
  obs_w_ = uniform_param(params, "mlc.obs.weight", {d, config.n_observations}, d, init);
  obs_b_ = uniform_param(params, "mlc.obs.bias", {config.n_observations}, d, init);
  if (config.n_tags > 0) {
    tag_w_ = uniform_param(params, "mlc.tags.weight", {d, config.n_tags}, d, init);
    tag_b_ = uniform_param(params, "mlc.tags.bias", {config.n_tags}, d, init);
  }
}

MlcOutput MlcHead::predict(const MemoryGrid& memory) const {
  Tensor pooled = row_of(mean_rows(memory.features));
  MlcOutput out;
  out.obs_logits = add_bias(matmul(pooled, obs_w_), obs_b_);
  const Tensor s = sigmoid(out.obs_logits);
  out.obs_scores.assign(s.values().begin(), s.values().end());
  if (tag_w_.defined()) {
    out.tag_logits = add_bias(matmul(pooled, tag_w_), tag_b_);
    const Tensor t = sigmoid(out.tag_logits);
    out.tag_scores.assign(t.values().begin(), t.values().end());
  }
  return out;
}

// ---- ReportModel ------------------------------------------------------------

ReportModel::ReportModel(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), params_(std::make_unique<ParameterSet>()) {
  config_.validate();
  Rng root(seed);
  Rng enc_rng = root.fork(1), dec_rng = root.fork(2), mlc_rng = root.fork(3);
  encoder_ = std::make_unique<ImageEncoder>(config_, *params_, enc_rng);
  if (config_.decoder == DecoderKind::transformer) {
    decoder_ = std::make_unique<TransformerDecoder>(config_, *params_, dec_rng);
  } else {
    decoder_ = std::make_unique<LstmDecoder>(config_, *params_, dec_rng);
  }
  mlc_ = std::make_unique<MlcHead>(config_, *params_, mlc_rng);
}

void ReportModel::set_dropout(double rate) {
  if (rate < 0.0 || rate >= 1.0) throw ConfigError("dropout rate must be in [0, 1)");
  config_.dropout_rate = rate;
}

std::vector<Tensor> ReportModel::trainable_parameters() const {
  std::vector<Tensor> out;
  for (const auto& e : params_->entries())
    if (e.second.requires_grad()) out.push_back(e.second);
  return out;
}

// ---- parameter counts -------------------------------------------------------

std::size_t parameter_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, V = c.vocab_size;
  std::size_t n = 0;
  if (c.encoder == EncoderKind::tiny_conv) {
    const std::size_t c1 = c.conv_channels1, c2 = c.conv_channels2;
    n += 9 * c1 + c1 + 9 * c1 * c2 + c2 + c2 * d + d;
  } else {
    n += c.feature_dim * d + d;
  }
  if (c.decoder == DecoderKind::transformer) {
    const std::size_t ff = c.d_ff;
    n += V * d + c.n_layers * (8 * d * d + 2 * d * ff + ff + d + 6 * d) + d * V + V;
  } else {
    const std::size_t E = c.lstm_embed, H = c.lstm_hidden;
    n += V * E + 4 * H * E + 4 * H * H + 4 * H + 2 * (d * H + H) + H * V + V;
  }
  n += d * c.n_observations + c.n_observations;
  if (c.n_tags > 0) n += d * c.n_tags + c.n_tags;
  return n;
}

std::size_t matched_lstm_hidden(ModelConfig config, std::size_t target) {
  config.decoder = DecoderKind::lstm;
  std::size_t best = 1, best_gap = std::numeric_limits<std::size_t>::max();
  for (std::size_t h = 1; h <= 4096; ++h) {
    config.lstm_hidden = h;
    const std::size_t n = parameter_count(config);
    const std::size_t gap = n > target ? n - target : target - n;
    if (gap < best_gap) {
      best = h;
      best_gap = gap;
    }
    if (n > target) break;
  }
  return best;
}

}  // namespace radgen
