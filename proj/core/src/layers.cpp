#include "radgen/layers.hpp"

#include <cmath>
#include <vector>

#include "radgen/error.hpp"

namespace radgen {

Tensor positional_encoding(std::size_t max_len, std::size_t d_model) {
  if (d_model == 0 || d_model % 2 != 0) {
    throw ConfigError("positional_encoding: d_model must be even, got " + std::to_string(d_model));
  }
  std::vector<double> pe(max_len * d_model);
  for (std::size_t pos = 0; pos < max_len; ++pos) {
    for (std::size_t i = 0; i < d_model / 2; ++i) {
      const double angle = static_cast<double>(pos) /
                           std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(d_model));
      pe[pos * d_model + 2 * i] = std::sin(angle);
      pe[pos * d_model + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from({max_len, d_model}, std::move(pe));
}

Tensor causal_mask(std::size_t len) {
  std::vector<double> m(len * len, 0.0);
  for (std::size_t i = 0; i < len; ++i)
    for (std::size_t j = i + 1; j < len; ++j) m[i * len + j] = kMaskSentinel;
  return Tensor::from({len, len}, std::move(m));
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor* mask) {
  if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2 || q.cols() != k.cols() ||
      k.rows() != v.rows()) {
    throw ShapeError("attention: incompatible Q " + shape_string(q.shape()) + ", K " +
                     shape_string(k.shape()) + ", V " + shape_string(v.shape()));
  }
  Tensor scores = scale(matmul(q, transpose(k)), 1.0 / std::sqrt(static_cast<double>(q.cols())));
  if (mask) {
    if (mask->rows() < q.rows() || mask->cols() < k.rows()) {
      throw ShapeError("attention: mask " + shape_string(mask->shape()) + " too small for " +
                       std::to_string(q.rows()) + "x" + std::to_string(k.rows()) + " scores");
    }
    Tensor m = *mask;
    if (mask->rows() != q.rows() || mask->cols() != k.rows()) {
      m = slice_cols(slice_rows(*mask, 0, q.rows()), 0, k.rows());
    }
    scores = add(scores, m);
  }
  Tensor weights = softmax_rows(scores);
  return {matmul(weights, v), weights};
}

Tensor multi_head_attention_projected(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const Tensor& w_out, std::size_t n_heads, const Tensor* mask) {
  if (n_heads == 0 || q.cols() % n_heads != 0 || v.cols() % n_heads != 0) {
    throw ConfigError("multi_head_attention: " + std::to_string(n_heads) +
                      " heads do not divide projection width " + std::to_string(q.cols()));
  }
  const std::size_t dk = q.cols() / n_heads, dv = v.cols() / n_heads;
  if (n_heads == 1) return matmul(scaled_dot_product_attention(q, k, v, mask).output, w_out);
  std::vector<Tensor> heads;
  heads.reserve(n_heads);
  for (std::size_t h = 0; h < n_heads; ++h) {
    heads.push_back(scaled_dot_product_attention(slice_cols(q, h * dk, (h + 1) * dk),
                                                 slice_cols(k, h * dk, (h + 1) * dk),
                                                 slice_cols(v, h * dv, (h + 1) * dv), mask)
                        .output);
  }
  return matmul(concat_cols(heads), w_out);
}

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            std::size_t n_heads, const Tensor* mask) {
  return multi_head_attention_projected(matmul(x_q, w.query), matmul(x_kv, w.key),
                                        matmul(x_kv, w.value), w.output, n_heads, mask);
}

Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w) {
  return add_bias(matmul(relu(add_bias(matmul(x, w.w1), w.b1)), w.w2), w.b2);
}

}  // namespace radgen
