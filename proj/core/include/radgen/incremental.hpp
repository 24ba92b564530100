#pragma once

#include <cstddef>
#include <memory>
#include <vector>

#include "radgen/tensor.hpp"

namespace radgen {

// Autoregressive decoding state bound to one encoded image. Search
// procedures clone it to branch hypotheses.
class IncrementalDecoder {
 public:
  virtual ~IncrementalDecoder() = default;
  virtual std::unique_ptr<IncrementalDecoder> clone() const = 0;
  // Consumes `token` at the next position; returns next-token logits.
  virtual std::vector<double> advance(TokenId token) = 0;
  virtual std::size_t vocab_size() const = 0;
  // Number of tokens consumed so far.
  virtual std::size_t position() const = 0;
};

}  // namespace radgen
