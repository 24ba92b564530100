#include "radgen/decoding.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <stdexcept>

#include "radgen/corpus.hpp"
#include "radgen/error.hpp"

namespace radgen {

std::vector<double> log_softmax(const std::vector<double>& logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double v : logits) z += std::exp(v - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lz;
  return out;
}

bool ranks_before(const Hypothesis& a, double score_a, const Hypothesis& b, double score_b) {
  if (score_a != score_b) return score_a > score_b;
  if (a.tokens.size() != b.tokens.size()) return a.tokens.size() < b.tokens.size();
  return a.tokens < b.tokens;
}

namespace {

bool allowed(std::size_t id) {
  return id != static_cast<std::size_t>(kPadId) && id != static_cast<std::size_t>(kStartId);
}

std::size_t checked_max_len(std::size_t max_len) {
  if (max_len < 2) throw ConfigError("max_len must be at least 2");
  return max_len;
}

struct Live {
  Hypothesis hyp;
  std::unique_ptr<IncrementalDecoder> state;
  std::vector<double> next_logp;
};

struct Candidate {
  Hypothesis hyp;
  std::size_t parent;
};

}  // namespace

Hypothesis greedy_decode(const IncrementalDecoder& initial, std::size_t max_len) {
  checked_max_len(max_len);
  auto state = initial.clone();
  Hypothesis h{{kStartId}, 0.0, false};
  auto logp = log_softmax(state->advance(kStartId));
  while (h.tokens.size() < max_len) {
    // Compares accumulated scores, exactly as a width-1 beam does.
    std::size_t best = logp.size();
    double best_score = 0.0;
    for (std::size_t v = 0; v < logp.size(); ++v) {
      if (!allowed(v)) continue;
      const double s = h.score + logp[v];
      if (best == logp.size() || s > best_score) {
        best = v;
        best_score = s;
      }
    }
    h.tokens.push_back(static_cast<TokenId>(best));
    h.score = best_score;
    if (static_cast<TokenId>(best) == kEndId) {
      h.finished = true;
      break;
    }
    if (h.tokens.size() < max_len) logp = log_softmax(state->advance(static_cast<TokenId>(best)));
  }
  return h;
}

Hypothesis greedy_decode(const ReportModel& model, const MemoryGrid& memory, std::size_t max_len) {
  return greedy_decode(*model.start_decoding(memory), max_len);
}

std::vector<Hypothesis> beam_search_decode(const IncrementalDecoder& initial,
                                           const BeamOptions& options) {
  if (options.beam_size < 1) throw ConfigError("beam_size must be at least 1");
  const std::size_t max_len = checked_max_len(options.max_len);

  std::vector<Live> live;
  {
    Live root{{{kStartId}, 0.0, false}, initial.clone(), {}};
    root.next_logp = log_softmax(root.state->advance(kStartId));
    live.push_back(std::move(root));
  }
  std::vector<Hypothesis> completed;

  auto norm = [&](const Hypothesis& h) {
    if (options.length_alpha == 0.0) return h.score;
    return h.score / std::pow(static_cast<double>(h.length()), options.length_alpha);
  };

  while (!live.empty()) {
    std::vector<Candidate> cands;
    for (std::size_t b = 0; b < live.size(); ++b) {
      const auto& lp = live[b].next_logp;
      for (std::size_t v = 0; v < lp.size(); ++v) {
        if (!allowed(v)) continue;
        Candidate c{live[b].hyp, b};
        c.hyp.tokens.push_back(static_cast<TokenId>(v));
        c.hyp.score += lp[v];
        c.hyp.finished = static_cast<TokenId>(v) == kEndId;
        cands.push_back(std::move(c));
      }
    }
    std::sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) {
      return ranks_before(a.hyp, a.hyp.score, b.hyp, b.hyp.score);
    });
    // Finished candidates inside the top k retire; the best k unfinished stay live.
    std::vector<Live> next;
    for (std::size_t i = 0; i < cands.size() && next.size() < options.beam_size; ++i) {
      auto& c = cands[i];
      if (c.hyp.finished || c.hyp.tokens.size() >= max_len) {
        if (i < options.beam_size) completed.push_back(std::move(c.hyp));
        continue;
      }
      Live l{std::move(c.hyp), live[c.parent].state->clone(), {}};
      l.next_logp = log_softmax(l.state->advance(l.hyp.tokens.back()));
      next.push_back(std::move(l));
    }
    live = std::move(next);
    // Scores only fall as hypotheses grow, so an unnormalized pool leader is final.
    if (options.length_alpha == 0.0 && !completed.empty() && !live.empty()) {
      double best_done = completed.front().score;
      for (const auto& h : completed) best_done = std::max(best_done, h.score);
      if (best_done >= live.front().hyp.score) break;
    }
  }

  std::stable_sort(completed.begin(), completed.end(),
                   [&](const Hypothesis& a, const Hypothesis& b) {
                     return ranks_before(a, norm(a), b, norm(b));
                   });
  return completed;
}

std::vector<Hypothesis> beam_search_decode(const ReportModel& model, const MemoryGrid& memory,
                                           const BeamOptions& options) {
  return beam_search_decode(*model.start_decoding(memory), options);
}

}  // namespace radgen
