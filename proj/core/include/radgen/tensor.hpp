#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "radgen/rng.hpp"

namespace radgen {

using Shape = std::vector<std::size_t>;
using TokenId = int;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

// Attention logits at masked positions receive this additive sentinel.
inline constexpr double kMaskSentinel = -1.7976931348623157e308;

namespace detail {
struct Node;
}

// Dense row-major array of doubles that records the operation producing it so
// gradients can flow back to its inputs. Values are immutable once created,
// except for leaf tensors (parameters), which optimizers update in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double value);
  static Tensor from(Shape shape, std::vector<double> values);
  static Tensor scalar(double value);
  // Leaf tensor that accumulates gradients during backward().
  static Tensor parameter(Shape shape, std::vector<double> values);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  // Only valid on leaf tensors; used by optimizers and checkpoint loading.
  std::span<double> mutable_values();
  double item() const;
  double at(std::size_t i) const { return values()[i]; }
  double at(std::size_t r, std::size_t c) const { return values()[r * cols() + c]; }

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Reverse-mode accumulation of d(this)/d(leaf) into every reachable leaf
  // that requires gradients. `this` must hold exactly one element.
  void backward() const;

  // Same values, no history.
  Tensor detach() const;

  // Identity of the underlying node.
  const void* id() const { return node_.get(); }

  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  const std::shared_ptr<detail::Node>& node() const { return node_; }

 private:
  std::shared_ptr<detail::Node> node_;
};

bool grad_enabled();

// Disables graph recording on this thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

// ---- primitives -----------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
// x [m x n] + bias [n], broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Row-wise softmax with max subtraction.
Tensor softmax_rows(const Tensor& x);
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// Mean negative log-likelihood of `targets` under row-wise softmax(logits),
// skipping positions whose target equals pad_id.
Tensor cross_entropy(const Tensor& logits, std::span<const TokenId> targets, TokenId pad_id);
// Mean binary cross-entropy between sigmoid(logits) and 0/1 targets.
Tensor binary_cross_entropy_with_logits(const Tensor& logits, std::span<const double> targets);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
// [m x n] -> [n]
Tensor mean_rows(const Tensor& x);

// Gathers rows of table [V x d] -> [ids.size() x d].
Tensor embedding(const Tensor& table, std::span<const TokenId> ids);

// Inverted dropout. Identity when !training or rate == 0.
Tensor dropout(const Tensor& x, double rate, Rng& rng, bool training);

Tensor concat_cols(std::span<const Tensor> parts);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& x, Shape shape);

// x {C, H, W}, weight {O, C, k, k}, bias {O} -> {O, H', W'} with zero padding.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride,
              std::size_t padding);
// {C, H, W} -> [H*W x C]; one row per spatial position.
Tensor channels_to_rows(const Tensor& x);

}  // namespace radgen
