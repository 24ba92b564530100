#include "radgen/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace radgen {

namespace {

using NGram = std::vector<std::string>;
using Counts = std::map<NGram, std::size_t>;

Counts ngram_counts(const Tokens& toks, std::size_t n) {
  Counts c;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) {
    ++c[NGram(toks.begin() + static_cast<std::ptrdiff_t>(i),
              toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  }
  return c;
}

void check_n(int n) {
  if (n < 1 || n > 4) throw std::invalid_argument("BLEU order must be in 1..4");
}

}  // namespace

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t k = 0; k < 4; ++k) {
    matches[k] += o.matches[k];
    totals[k] += o.totals[k];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

BleuStats bleu_stats(const Tokens& candidate, const std::vector<Tokens>& references) {
  BleuStats s;
  s.candidate_length = candidate.size();
  if (!references.empty()) {
    std::size_t best = references[0].size();
    for (const auto& r : references) {
      const auto d = [&](std::size_t len) {
        return len > candidate.size() ? len - candidate.size() : candidate.size() - len;
      };
      if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
    }
    s.reference_length = best;
  }
  for (std::size_t k = 1; k <= 4; ++k) {
    const Counts cand = ngram_counts(candidate, k);
    Counts max_ref;
    for (const auto& r : references)
      for (const auto& [g, c] : ngram_counts(r, k)) max_ref[g] = std::max(max_ref[g], c);
    for (const auto& [g, c] : cand) {
      s.totals[k - 1] += c;
      auto it = max_ref.find(g);
      if (it != max_ref.end()) s.matches[k - 1] += std::min(c, it->second);
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s, int n, bool smoothed) {
  check_n(n);
  if (s.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (int k = 0; k < n; ++k) {
    double p = s.totals[k] ? static_cast<double>(s.matches[k]) / static_cast<double>(s.totals[k]) : 0.0;
    if (p == 0.0) {
      if (!smoothed) return 0.0;
      p = kBleuEpsilon;
    }
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / n);
}

double bleu_n(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  return bleu_from_stats(bleu_stats(candidate, references), n, true);
}

double bleu_n_raw(const Tokens& candidate, const std::vector<Tokens>& references, int n) {
  return bleu_from_stats(bleu_stats(candidate, references), n, false);
}

CorpusBleu corpus_bleu(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("corpus_bleu: candidate and reference counts differ");
  }
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += bleu_stats(candidates[i], references[i]);
  CorpusBleu out;
  for (int n = 1; n <= 4; ++n) {
    out.smoothed[n - 1] = bleu_from_stats(total, n, true);
    out.raw[n - 1] = bleu_from_stats(total, n, false);
  }
  return out;
}

std::size_t lcs_length(const Tokens& a, const Tokens& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double rouge_l(const Tokens& candidate, const std::vector<Tokens>& references) {
  double best = 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  for (const auto& r : references) {
    const std::size_t l = lcs_length(candidate, r);
    if (l == 0) continue;
    const double p = static_cast<double>(l) / static_cast<double>(candidate.size());
    const double rec = static_cast<double>(l) / static_cast<double>(r.size());
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

MeteorAlignment meteor_align(const Tokens& candidate, const Tokens& reference) {
  std::vector<bool> used(reference.size(), false);
  std::vector<std::ptrdiff_t> target(candidate.size(), -1);
  MeteorAlignment a;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    for (std::size_t j = 0; j < reference.size(); ++j) {
      if (!used[j] && reference[j] == candidate[i]) {
        used[j] = true;
        target[i] = static_cast<std::ptrdiff_t>(j);
        ++a.matches;
        break;
      }
    }
  }
  // A chunk is a run of adjacent candidate tokens mapped to adjacent
  // reference tokens.
  std::ptrdiff_t prev = -2;
  bool in_chunk = false;
  for (std::size_t i = 0; i < candidate.size(); ++i) {
    if (target[i] < 0) {
      in_chunk = false;
      continue;
    }
    if (!in_chunk || target[i] != prev + 1) ++a.chunks;
    in_chunk = true;
    prev = target[i];
  }
  return a;
}

double meteor_simple(const Tokens& candidate, const std::vector<Tokens>& references) {
  double best = 0.0;
  for (const auto& r : references) {
    const auto a = meteor_align(candidate, r);
    if (a.matches == 0) continue;
    const double m = static_cast<double>(a.matches);
    const double p = m / static_cast<double>(candidate.size());
    const double rec = m / static_cast<double>(r.size());
    const double fmean = 10.0 * p * rec / (rec + 9.0 * p);
    const double penalty = 0.5 * std::pow(static_cast<double>(a.chunks) / m, 3.0);
    best = std::max(best, fmean * (1.0 - penalty));
  }
  return best;
}

CiderResult cider(const std::vector<Tokens>& candidates,
                  const std::vector<std::vector<Tokens>>& references) {
  if (candidates.size() != references.size()) {
    throw std::invalid_argument("cider: candidate and reference counts differ");
  }
  if (candidates.empty()) throw std::invalid_argument("cider: needs at least one example");
  const double n_docs = static_cast<double>(candidates.size());

  std::array<std::map<NGram, std::size_t>, 4> df;
  for (const auto& refs : references) {
    for (std::size_t n = 1; n <= 4; ++n) {
      std::set<NGram> seen;
      for (const auto& r : refs)
        for (const auto& kv : ngram_counts(r, n)) seen.insert(kv.first);
      for (const auto& g : seen) ++df[n - 1][g];
    }
  }

  using Vec = std::map<NGram, double>;
  auto tfidf = [&](const Tokens& toks, std::size_t n) {
    Vec v;
    const Counts c = ngram_counts(toks, n);
    std::size_t total = 0;
    for (const auto& kv : c) total += kv.second;
    for (const auto& [g, cnt] : c) {
      auto it = df[n - 1].find(g);
      const double d = it == df[n - 1].end() ? 1.0 : static_cast<double>(it->second);
      v[g] = static_cast<double>(cnt) / static_cast<double>(total) * std::log(n_docs / d);
    }
    return v;
  };
  auto cosine = [](const Vec& a, const Vec& b) {
    double dot = 0.0, na = 0.0, nb = 0.0;
    for (const auto& [g, x] : a) {
      na += x * x;
      auto it = b.find(g);
      if (it != b.end()) dot += x * it->second;
    }
    for (const auto& kv : b) nb += kv.second * kv.second;
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot / (std::sqrt(na) * std::sqrt(nb));
  };

  CiderResult out;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    double score = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      const Vec c = tfidf(candidates[i], n);
      double s = 0.0;
      for (const auto& r : references[i]) s += cosine(c, tfidf(r, n));
      if (!references[i].empty()) s /= static_cast<double>(references[i].size());
      score += s;
    }
    out.per_example.push_back(10.0 * score / 4.0);
  }
  for (double s : out.per_example) out.mean += s;
  out.mean /= n_docs;
  return out;
}

NlgReport evaluate_nlg(const std::vector<Tokens>& candidates,
                       const std::vector<std::vector<Tokens>>& references) {
  NlgReport rep;
  const auto cb = corpus_bleu(candidates, references);
  rep.corpus.bleu = cb.smoothed;
  rep.corpus_bleu_raw = cb.raw;
  if (candidates.empty()) return rep;
  const auto cid = cider(candidates, references);
  const double n = static_cast<double>(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    NlgScores s;
    const auto st = bleu_stats(candidates[i], references[i]);
    for (int k = 1; k <= 4; ++k) s.bleu[k - 1] = bleu_from_stats(st, k, true);
    s.meteor = meteor_simple(candidates[i], references[i]);
    s.rouge_l = rouge_l(candidates[i], references[i]);
    s.cider = cid.per_example[i];
    for (int k = 0; k < 4; ++k) rep.mean_sentence_bleu[k] += s.bleu[k] / n;
    rep.corpus.meteor += s.meteor / n;
    rep.corpus.rouge_l += s.rouge_l / n;
    rep.per_example.push_back(s);
  }
  rep.corpus.cider = cid.mean;
  return rep;
}

namespace {

nlohmann::ordered_json scores_object(const NlgScores& s) {
  nlohmann::ordered_json j;
  for (int k = 0; k < 4; ++k) j["bleu" + std::to_string(k + 1)] = s.bleu[k];
  j["meteor"] = s.meteor;
  j["rouge_l"] = s.rouge_l;
  j["cider"] = s.cider;
  return j;
}

}  // namespace

std::string nlg_scores_json(const NlgScores& s) { return scores_object(s).dump(); }

std::string nlg_report_json(const NlgReport& r) {
  nlohmann::ordered_json j = scores_object(r.corpus);
  j["bleu_level"] = "corpus";
  j["bleu_raw"] = r.corpus_bleu_raw;
  j["mean_sentence_bleu"] = r.mean_sentence_bleu;
  auto arr = nlohmann::ordered_json::array();
  for (const auto& s : r.per_example) arr.push_back(scores_object(s));
  j["per_example"] = arr;
  return j.dump();
}

}  // namespace radgen
