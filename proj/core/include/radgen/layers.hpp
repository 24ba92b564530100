#pragma once

#include <cstddef>

#include "radgen/tensor.hpp"

namespace radgen {

// PE[pos, 2i] = sin(pos / 10000^(2i/d)), PE[pos, 2i+1] = cos(same angle).
Tensor positional_encoding(std::size_t max_len, std::size_t d_model);

// [len x len]; 0 on and below the diagonal, kMaskSentinel above it.
Tensor causal_mask(std::size_t len);

struct AttentionResult {
  Tensor output;   // [Lq x d_v]
  Tensor weights;  // [Lq x Lk], rows sum to 1
};

// softmax(Q K^T / sqrt(d_k) + mask) V
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             const Tensor* mask = nullptr);

// Per-head projections stacked column-wise: head i of `query` is columns
// [i*d_k, (i+1)*d_k). `output` is W^O [h*d_v x d_model].
struct AttentionWeights {
  Tensor query;
  Tensor key;
  Tensor value;
  Tensor output;
};

Tensor multi_head_attention(const Tensor& x_q, const Tensor& x_kv, const AttentionWeights& w,
                            std::size_t n_heads, const Tensor* mask = nullptr);

// Same, starting from already-projected queries, keys and values.
Tensor multi_head_attention_projected(const Tensor& q, const Tensor& k, const Tensor& v,
                                      const Tensor& w_out, std::size_t n_heads,
                                      const Tensor* mask = nullptr);

struct FeedForwardWeights {
  Tensor w1;  // [d_model x d_ff]
  Tensor b1;  // [d_ff]
  Tensor w2;  // [d_ff x d_model]
  Tensor b2;  // [d_model]
};

// max(0, x W1 + b1) W2 + b2, row by row.
Tensor feed_forward(const Tensor& x, const FeedForwardWeights& w);

}  // namespace radgen
