#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace radgen {

using Tokens = std::vector<std::string>;

inline constexpr double kBleuEpsilon = 1e-9;
inline constexpr double kRougeBeta = 1.2;

// Clipped n-gram counts for k = 1..4 plus lengths; corpus BLEU sums these.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;  // closest reference length, ties to shorter

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references);

// BP * exp(mean_k log p_k), k = 1..n. `smoothed` replaces zero precisions
// by kBleuEpsilon; otherwise any zero precision gives 0.
double bleu_from_stats(const BleuStats& stats, int n, bool smoothed = true);

double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n);
double bleu_n_raw(const Tokens& candidate, const std::vector<Tokens>& references, int n);

struct CorpusBleu {
  std::array<double, 4> smoothed{};
  std::array<double, 4> raw{};
};
CorpusBleu corpus_bleu(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references);

std::size_t lcs_length(const Tokens& a, const Tokens& b);
// LCS F-measure, (1+b^2)PR / (R + b^2 P) with b = 1.2; max over references.
double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references);

struct MeteorAlignment {
  std::size_t matches = 0;
  std::size_t chunks = 0;
};
// Leftmost-greedy exact unigram alignment.
MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference);
// Fmean = 10PR/(R+9P), penalty = 0.5 (chunks/matches)^3; max over references.
double meteor_simple(const Tokens& candidate, const std::vector<Tokens>& references);

struct CiderResult {
  std::vector<double> per_example;
  double mean = 0.0;
};
// TF-IDF n-gram cosine, n = 1..4, averaged over n and references, x10.
// IDF is log(N / df) with df counted over reference sets.
CiderResult cider(const std::vector<Tokens>& candidates,
                  const std::vector<std::vector<Tokens>>& references);

struct NlgScores {
  std::array<double, 4> bleu{};
  double meteor = 0.0;
  double rouge_l = 0.0;
  double cider = 0.0;
};

struct NlgReport {
  NlgScores corpus;                     // corpus-level BLEU, means of the rest
  std::array<double, 4> corpus_bleu_raw{};
  std::array<double, 4> mean_sentence_bleu{};
  std::vector<NlgScores> per_example;  // sentence-level BLEU
};

NlgReport evaluate_nlg(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references);

// {"bleu1", ..., "bleu4", "meteor", "rouge_l", "cider"}.
std::string nlg_scores_json(const NlgScores& s);
std::string nlg_report_json(const NlgReport& r);

}  // namespace radgen
