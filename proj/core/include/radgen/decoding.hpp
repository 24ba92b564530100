#pragma once

#include <cstddef>
#include <vector>

#include "radgen/incremental.hpp"
#include "radgen/model.hpp"
#include "radgen/tensor.hpp"

namespace radgen {

// A decoded sequence. `tokens` begins with the start id; `score` is the sum
// of natural-log next-token probabilities of every token after it.
struct Hypothesis {
  std::vector<TokenId> tokens;
  double score = 0.0;
  bool finished = false;  // ended with the end id (else truncated at max_len)

  std::size_t length() const { return tokens.empty() ? 0 : tokens.size() - 1; }
};

struct BeamOptions {
  std::size_t beam_size = 3;
  std::size_t max_len = 60;  // total tokens, start included
  double length_alpha = 0.0;  // final ranking by score / length^alpha
};

std::vector<double> log_softmax(const std::vector<double>& logits);

// True when `a` ranks before `b`: higher score, then shorter, then
// lexicographically smaller token ids.
bool ranks_before(const Hypothesis& a, double score_a, const Hypothesis& b, double score_b);

// Argmax at every step (ties to the lowest id), pad and start excluded.
Hypothesis greedy_decode(const IncrementalDecoder& initial, std::size_t max_len);
Hypothesis greedy_decode(const ReportModel& model, const MemoryGrid& memory, std::size_t max_len);

// Length-synchronous beam search. Each step keeps the beam_size best
// extensions of all live hypotheses; those ending in the end id retire to
// the completed pool. Returns the pool ranked best first.
std::vector<Hypothesis> beam_search_decode(const IncrementalDecoder& initial,
                                           const BeamOptions& options);
std::vector<Hypothesis> beam_search_decode(const ReportModel& model, const MemoryGrid& memory,
                                           const BeamOptions& options);

}  // namespace radgen
