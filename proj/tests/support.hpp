#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <unistd.h>

#include "radgen/corpus.hpp"
#include "radgen/decoding.hpp"
#include "radgen/incremental.hpp"
#include "radgen/model.hpp"
#include "radgen/rng.hpp"
#include "radgen/synth.hpp"
#include "radgen/tensor.hpp"
#include "radgen/training.hpp"

namespace radgen::testing {

struct GradCheck {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

// Central differences on every entry of `params` (every `stride`-th entry
// when stride > 1) against the analytic gradient of `loss`.
inline GradCheck check_gradients(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                                 double h = 1e-4, std::size_t stride = 1) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  std::vector<std::vector<double>> analytic;
  for (auto& p : params) {
    if (p.has_grad()) analytic.emplace_back(p.grad().begin(), p.grad().end());
    else analytic.emplace_back(p.size(), 0.0);
  }
  GradCheck out;
  NoGradGuard ng;
  std::size_t counter = 0;
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto vals = params[t].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i) {
      if (counter++ % stride != 0) continue;
      const double orig = vals[i];
      vals[i] = orig + h;
      const double up = loss().item();
      vals[i] = orig - h;
      const double down = loss().item();
      vals[i] = orig;
      const double numeric = (up - down) / (2 * h);
      const double a = analytic[t][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_rel_error = std::max(out.max_rel_error, std::abs(a - numeric) / denom);
      ++out.checked;
    }
  }
  return out;
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool param = true) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return param ? Tensor::parameter(std::move(shape), std::move(v))
               : Tensor::from(std::move(shape), std::move(v));
}

// A stand-in for a trained model: next-token logits are a pseudo-random
// function of the whole prefix.
class HashDecoder final : public IncrementalDecoder {
 public:
  HashDecoder(std::uint64_t seed, std::size_t vocab, double spread = 3.0)
      : seed_(seed), vocab_(vocab), spread_(spread), key_(seed) {}

  std::unique_ptr<IncrementalDecoder> clone() const override {
    return std::make_unique<HashDecoder>(*this);
  }
  std::vector<double> advance(TokenId token) override {
    key_ = hash_combine(key_, static_cast<std::uint64_t>(token) + 1);
    ++pos_;
    Rng r(key_);
    std::vector<double> logits(vocab_);
    for (auto& l : logits) l = r.uniform(-spread_, spread_);
    return logits;
  }
  std::size_t vocab_size() const override { return vocab_; }
  std::size_t position() const override { return pos_; }

 private:
  std::uint64_t seed_;
  std::size_t vocab_;
  double spread_;
  std::uint64_t key_;
  std::size_t pos_ = 0;
};

// Small synthetic data set prepared for a model.
struct TinyData {
  SyntheticCorpus synth;
  Vocab vocab;
  std::vector<std::string> tags;
  std::vector<TrainingExample> examples;
};

inline TinyData tiny_data(std::uint64_t seed, std::size_t n, std::uint64_t min_freq = 1,
                          bool with_tags = false, std::size_t max_len = 60) {
  TinyData d;
  d.synth = synth_corpus(seed, n);
  d.vocab = build_vocab(d.synth.corpus, min_freq);
  if (with_tags) d.tags = tag_universe(d.synth.corpus);
  Corpus in_memory = d.synth.corpus;
  d.examples.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    TrainingExample ex;
    ex.id = in_memory.examples[i].id;
    ex.input = d.synth.inputs[i];
    ex.reference = tokenize_report(in_memory.examples[i].report);
    ex.ids = encode_tokens(ex.reference, d.vocab, max_len);
    ex.obs_target = d.synth.truth[i].positive_indicator();
    if (with_tags) {
      const auto& tags = *in_memory.examples[i].tags;
      for (const auto& t : d.tags)
        ex.tag_target.push_back(std::find(tags.begin(), tags.end(), t) != tags.end() ? 1.0 : 0.0);
    }
    d.examples.push_back(std::move(ex));
  }
  return d;
}

inline ModelConfig tiny_config(DecoderKind kind, std::size_t vocab, std::size_t d = 16,
                               std::size_t heads = 2, std::size_t layers = 2) {
  ModelConfig c;
  c.decoder = kind;
  c.d_model = d;
  c.n_heads = heads;
  c.n_layers = layers;
  c.d_ff = 2 * d;
  c.lstm_hidden = 16;
  c.lstm_embed = 16;
  c.vocab_size = vocab;
  c.dropout_rate = 0.0;
  return c;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("radgen-" + tag + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

}  // namespace radgen::testing
