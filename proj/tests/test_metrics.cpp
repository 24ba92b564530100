#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <json.hpp>
#include <set>
#include <sstream>

#include "radgen/metrics.hpp"
#include "radgen/rng.hpp"

using namespace radgen;

namespace {

Tokens toks(const std::string& s) {
  Tokens t;
  std::istringstream in(s);
  for (std::string w; in >> w;) t.push_back(w);
  return t;
}

std::map<std::string, int> grams(const Tokens& t, std::size_t n) {
  std::map<std::string, int> m;
  for (std::size_t i = 0; i + n <= t.size(); ++i) {
    std::string key;
    for (std::size_t k = 0; k < n; ++k) key += t[i + k] + "\x1f";
    ++m[key];
  }
  return m;
}

double oracle_bleu(const Tokens& c, const std::vector<Tokens>& refs, int n, bool smooth) {
  if (c.empty()) return 0.0;
  double log_sum = 0.0;
  for (int k = 1; k <= n; ++k) {
    const auto cg = grams(c, static_cast<std::size_t>(k));
    int total = 0, clipped = 0;
    for (const auto& [g, cnt] : cg) {
      int mx = 0;
      for (const auto& r : refs) {
        const auto rg = grams(r, static_cast<std::size_t>(k));
        auto it = rg.find(g);
        if (it != rg.end()) mx = std::max(mx, it->second);
      }
      clipped += std::min(cnt, mx);
      total += cnt;
    }
    double p = total == 0 ? 0.0 : static_cast<double>(clipped) / total;
    if (p == 0.0) {
      if (!smooth) return 0.0;
      p = 1e-9;
    }
    log_sum += std::log(p);
  }
  std::size_t r = refs.front().size();
  for (const auto& ref : refs) {
    const auto d = [&](std::size_t x) { return x > c.size() ? x - c.size() : c.size() - x; };
    if (d(ref.size()) < d(r) || (d(ref.size()) == d(r) && ref.size() < r)) r = ref.size();
  }
  const double bp = c.size() >= r ? 1.0 : std::exp(1.0 - static_cast<double>(r) / c.size());
  return bp * std::exp(log_sum / n);
}

// Longest common subsequence by trying every subsequence of a.
std::size_t brute_lcs(const Tokens& a, const Tokens& b) {
  std::size_t best = 0;
  for (std::uint32_t mask = 0; mask < (1u << a.size()); ++mask) {
    Tokens sub;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (mask & (1u << i)) sub.push_back(a[i]);
    std::size_t j = 0;
    for (const auto& w : b)
      if (j < sub.size() && sub[j] == w) ++j;
    if (j == sub.size()) best = std::max(best, sub.size());
  }
  return best;
}

double rouge_formula(double p, double r) {
  if (p == 0.0 || r == 0.0) return 0.0;
  const double b2 = 1.2 * 1.2;
  return (1 + b2) * p * r / (r + b2 * p);
}

MeteorAlignment oracle_align(const Tokens& c, const Tokens& r) {
  std::vector<int> pos(c.size(), -1);
  std::set<std::size_t> taken;
  MeteorAlignment a;
  for (std::size_t i = 0; i < c.size(); ++i) {
    for (std::size_t j = 0; j < r.size(); ++j) {
      if (r[j] == c[i] && !taken.count(j)) {
        taken.insert(j);
        pos[i] = static_cast<int>(j);
        ++a.matches;
        break;
      }
    }
  }
  for (std::size_t i = 0; i < c.size(); ++i) {
    if (pos[i] < 0) continue;
    const bool continues = i > 0 && pos[i - 1] >= 0 && pos[i] == pos[i - 1] + 1;
    if (!continues) ++a.chunks;
  }
  return a;
}

double oracle_cider_one(const std::vector<Tokens>& cands, const std::vector<std::vector<Tokens>>& refs,
                        std::size_t i) {
  const double N = static_cast<double>(cands.size());
  double total = 0.0;
  for (std::size_t n = 1; n <= 4; ++n) {
    std::map<std::string, double> df;
    for (const auto& set : refs) {
      std::set<std::string> s;
      for (const auto& r : set)
        for (const auto& kv : grams(r, n)) s.insert(kv.first);
      for (const auto& g : s) df[g] += 1;
    }
    auto vec = [&](const Tokens& t) {
      std::map<std::string, double> v;
      const auto g = grams(t, n);
      double len = 0;
      for (const auto& kv : g) len += kv.second;
      for (const auto& [k, cnt] : g) v[k] = cnt / len * std::log(N / std::max(1.0, df[k]));
      return v;
    };
    const auto cv = vec(cands[i]);
    double acc = 0.0;
    for (const auto& r : refs[i]) {
      const auto rv = vec(r);
      double dot = 0, na = 0, nb = 0;
      for (const auto& [k, x] : cv) {
        na += x * x;
        if (rv.count(k)) dot += x * rv.at(k);
      }
      for (const auto& kv : rv) nb += kv.second * kv.second;
      if (na > 0 && nb > 0) acc += dot / std::sqrt(na * nb);
    }
    total += acc / static_cast<double>(refs[i].size());
  }
  return 10.0 * total / 4.0;
}

Tokens random_sentence(Rng& rng, std::size_t max_len, std::size_t vocab) {
  static const char* words[] = {"the", "heart", "is", "normal", "no", "effusion", "mild", "edema", "lung", "clear"};
  Tokens t(1 + rng.below(max_len));
  for (auto& w : t) w = words[rng.below(vocab)];
  return t;
}

}  // namespace

TEST(Bleu, IdentityIsOne) {
  const auto s = toks("the heart size is within normal limits");
  for (int n = 1; n <= 4; ++n) EXPECT_DOUBLE_EQ(bleu_n(s, {s}, n), 1.0);
}

TEST(Bleu, ClippedUnigramPrecision) {
  const auto st = bleu_stats(toks("the the the the the the the"), {toks("the cat is on the mat")});
  EXPECT_EQ(st.matches[0], 2u);
  EXPECT_EQ(st.totals[0], 7u);
  EXPECT_NEAR(static_cast<double>(st.matches[0]) / st.totals[0], 2.0 / 7.0, 1e-12);
  // Lengths 7 vs 6: no brevity penalty.
  EXPECT_NEAR(bleu_n(toks("the the the the the the the"), {toks("the cat is on the mat")}, 1), 2.0 / 7.0, 1e-12);
}

TEST(Bleu, BrevityPenaltyClosedForm) {
  EXPECT_NEAR(bleu_n(toks("a b c"), {toks("a b c d e f")}, 3), std::exp(-1.0), 1e-12);
  BleuStats st;
  st.matches = {3, 2, 1, 1};
  st.totals = {3, 2, 1, 1};
  st.candidate_length = 3;
  st.reference_length = 6;
  EXPECT_NEAR(bleu_from_stats(st, 4), std::exp(-1.0), 1e-12);
}

TEST(Bleu, EmptyCandidateIsZero) {
  EXPECT_EQ(bleu_n({}, {toks("a b")}, 1), 0.0);
  EXPECT_EQ(bleu_n_raw({}, {toks("a b")}, 4), 0.0);
}

TEST(Bleu, ClosestReferenceLengthTiesToShorter) {
  const auto st = bleu_stats(toks("a b c d e"), {toks("a b c d e f g"), toks("a b c"), toks("x y z q r s t")});
  EXPECT_EQ(st.reference_length, 3u);
}

TEST(Bleu, RawZeroesWhereSmoothedDoesNot) {
  const auto c = toks("a b x d"), r = toks("a b c d");
  EXPECT_EQ(bleu_n_raw(c, {r}, 4), 0.0);
  EXPECT_GT(bleu_n(c, {r}, 4), 0.0);
  EXPECT_LT(bleu_n(c, {r}, 4), 1e-2);
}

TEST(Bleu, BagEqualCandidatesShareBleu1) {
  const auto ref = toks("no focal consolidation pleural effusion or pneumothorax");
  const auto a = toks("pleural effusion no consolidation"), b = toks("consolidation no effusion pleural");
  EXPECT_DOUBLE_EQ(bleu_n(a, {ref}, 1), bleu_n(b, {ref}, 1));
  EXPECT_NE(bleu_n(a, {ref}, 2), bleu_n(b, {ref}, 2));
}

TEST(Bleu, MatchesOracleOnRandomSentences) {
  Rng rng(31);
  for (int t = 0; t < 300; ++t) {
    const auto c = random_sentence(rng, 12, 6);
    std::vector<Tokens> refs;
    const std::size_t n_refs = 1 + rng.below(3);
    for (std::size_t k = 0; k < n_refs; ++k) refs.push_back(random_sentence(rng, 12, 6));
    for (int n = 1; n <= 4; ++n) {
      const double s = bleu_n(c, refs, n);
      EXPECT_NEAR(s, oracle_bleu(c, refs, n, true), 1e-12);
      EXPECT_NEAR(bleu_n_raw(c, refs, n), oracle_bleu(c, refs, n, false), 1e-12);
      EXPECT_GE(s, 0.0);
      EXPECT_LE(s, 1.0);
    }
  }
}

TEST(Bleu, CorpusLevelPoolsCounts) {
  Rng rng(8);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  BleuStats pooled;
  double mean_sentence = 0.0;
  for (int i = 0; i < 12; ++i) {
    cands.push_back(random_sentence(rng, 10, 5));
    refs.push_back({random_sentence(rng, 10, 5)});
    pooled += bleu_stats(cands.back(), refs.back());
    mean_sentence += bleu_n(cands.back(), refs.back(), 4) / 12.0;
  }
  const auto cb = corpus_bleu(cands, refs);
  for (int n = 1; n <= 4; ++n) {
    EXPECT_DOUBLE_EQ(cb.smoothed[n - 1], bleu_from_stats(pooled, n, true));
    EXPECT_DOUBLE_EQ(cb.raw[n - 1], bleu_from_stats(pooled, n, false));
  }
  EXPECT_NE(cb.smoothed[3], mean_sentence);
}

TEST(Rouge, HandFixture) {
  EXPECT_EQ(lcs_length(toks("a b c d"), toks("a c b d")), 3u);
  EXPECT_NEAR(rouge_l(toks("a b c d"), {toks("a c b d")}), rouge_formula(0.75, 0.75), 1e-12);
  EXPECT_NEAR(rouge_l(toks("a b c d"), {toks("a c b d")}), 0.75, 1e-12);
}

TEST(Rouge, IdentityAndDisjoint) {
  const auto s = toks("mild pulmonary edema");
  EXPECT_DOUBLE_EQ(rouge_l(s, {s}), 1.0);
  EXPECT_EQ(rouge_l(s, {toks("heart normal size")}), 0.0);
  EXPECT_EQ(rouge_l({}, {s}), 0.0);
}

TEST(Rouge, MatchesBruteForceOracle) {
  Rng rng(5);
  for (int t = 0; t < 300; ++t) {
    const auto a = random_sentence(rng, 10, 5), b = random_sentence(rng, 10, 5);
    const std::size_t l = brute_lcs(a, b);
    EXPECT_EQ(lcs_length(a, b), l);
    const double want = rouge_formula(static_cast<double>(l) / a.size(), static_cast<double>(l) / b.size());
    EXPECT_NEAR(rouge_l(a, {b}), want, 1e-12);
  }
}

TEST(Rouge, MaxOverReferences) {
  const auto c = toks("no acute cardiopulmonary process");
  const auto r1 = toks("no acute process"), r2 = toks("heart is normal");
  EXPECT_DOUBLE_EQ(rouge_l(c, {r1, r2}), std::max(rouge_l(c, {r1}), rouge_l(c, {r2})));
}

TEST(Meteor, IdenticalClosedForm) {
  for (std::size_t k : {1u, 2u, 5u, 9u}) {
    Tokens s;
    for (std::size_t i = 0; i < k; ++i) s.push_back("w" + std::to_string(i));
    const auto a = meteor_align(s, s);
    EXPECT_EQ(a.matches, k);
    EXPECT_EQ(a.chunks, 1u);
    EXPECT_NEAR(meteor_simple(s, {s}), 1.0 - 0.5 / std::pow(static_cast<double>(k), 3), 1e-12);
  }
}

TEST(Meteor, NoOverlapIsZero) {
  EXPECT_EQ(meteor_simple(toks("a b c"), {toks("d e f")}), 0.0);
}

TEST(Meteor, SingleSharedTokenAtDifferentPositions) {
  const auto a = meteor_align(toks("x edema y"), toks("edema p q r"));
  EXPECT_EQ(a.matches, 1u);
  EXPECT_EQ(a.chunks, 1u);
  const double p = 1.0 / 3, r = 1.0 / 4;
  EXPECT_NEAR(meteor_simple(toks("x edema y"), {toks("edema p q r")}), 10 * p * r / (r + 9 * p) * 0.5, 1e-12);
}

TEST(Meteor, MatchesAlignmentOracle) {
  Rng rng(17);
  for (int t = 0; t < 300; ++t) {
    const auto c = random_sentence(rng, 10, 6), r = random_sentence(rng, 10, 6);
    const auto a = meteor_align(c, r), o = oracle_align(c, r);
    EXPECT_EQ(a.matches, o.matches);
    EXPECT_EQ(a.chunks, o.chunks);
    const double s = meteor_simple(c, {r});
    EXPECT_GE(s, 0.0);
    EXPECT_LE(s, 1.0);
  }
}

TEST(Cider, IdentityInDisjointCorpusIsTen) {
  const auto a = toks("the heart size is normal"), b = toks("mild bibasilar atelectasis seen today");
  const auto res = cider({a, b}, {{a}, {b}});
  EXPECT_NEAR(res.per_example[0], 10.0, 1e-9);
  EXPECT_NEAR(res.per_example[1], 10.0, 1e-9);
  EXPECT_NEAR(res.mean, 10.0, 1e-9);
}

TEST(Cider, DisjointCandidateIsZero) {
  const auto a = toks("the heart size is normal"), b = toks("mild bibasilar atelectasis seen today");
  EXPECT_EQ(cider({toks("pleural effusion present")}, {{a}}).per_example[0], 0.0);
  EXPECT_EQ(cider({toks("x y z"), b}, {{a}, {b}}).per_example[0], 0.0);
}

TEST(Cider, UbiquitousNgramContributesNothing) {
  // "no" appears in every reference set.
  const std::vector<std::vector<Tokens>> refs{{toks("no edema")}, {toks("no effusion")}, {toks("no pneumothorax")}};
  const auto res = cider({toks("no"), toks("no effusion"), toks("no")}, refs);
  EXPECT_EQ(res.per_example[0], 0.0);
  EXPECT_EQ(res.per_example[2], 0.0);
  EXPECT_GT(res.per_example[1], 0.0);
}

TEST(Cider, MatchesOracle) {
  Rng rng(23);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (int i = 0; i < 15; ++i) {
    cands.push_back(random_sentence(rng, 9, 10));
    refs.emplace_back();
    const std::size_t n_refs = 1 + rng.below(2);
    for (std::size_t k = 0; k < n_refs; ++k) refs.back().push_back(random_sentence(rng, 9, 10));
  }
  const auto res = cider(cands, refs);
  double mean = 0.0;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    EXPECT_NEAR(res.per_example[i], oracle_cider_one(cands, refs, i), 1e-12);
    EXPECT_GE(res.per_example[i], 0.0);
    EXPECT_LE(res.per_example[i], 10.0 + 1e-12);
    mean += res.per_example[i];
  }
  EXPECT_NEAR(res.mean, mean / 15.0, 1e-12);
}

TEST(Cider, RejectsEmptyAndMismatched) {
  EXPECT_ANY_THROW(cider({}, {}));
  EXPECT_ANY_THROW(cider({toks("a")}, {}));
}

TEST(NlgReport, AggregatesAndSerializes) {
  Rng rng(2);
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (int i = 0; i < 6; ++i) {
    cands.push_back(random_sentence(rng, 8, 6));
    refs.push_back({random_sentence(rng, 8, 6)});
  }
  const auto rep = evaluate_nlg(cands, refs);
  const auto cb = corpus_bleu(cands, refs);
  ASSERT_EQ(rep.per_example.size(), 6u);
  double meteor = 0, rouge = 0;
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(rep.per_example[i].bleu[3], bleu_n(cands[i], refs[i], 4));
    meteor += meteor_simple(cands[i], refs[i]);
    rouge += rouge_l(cands[i], refs[i]);
  }
  for (int n = 0; n < 4; ++n) {
    EXPECT_DOUBLE_EQ(rep.corpus.bleu[n], cb.smoothed[n]);
    EXPECT_DOUBLE_EQ(rep.corpus_bleu_raw[n], cb.raw[n]);
  }
  EXPECT_NEAR(rep.corpus.meteor, meteor / 6, 1e-12);
  EXPECT_NEAR(rep.corpus.rouge_l, rouge / 6, 1e-12);
  EXPECT_DOUBLE_EQ(rep.corpus.cider, cider(cands, refs).mean);

  const auto j = nlohmann::json::parse(nlg_scores_json(rep.corpus));
  for (const char* k : {"bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider"}) EXPECT_TRUE(j.contains(k)) << k;
  EXPECT_DOUBLE_EQ(j["bleu4"].get<double>(), rep.corpus.bleu[3]);
  const auto full = nlohmann::json::parse(nlg_report_json(rep));
  EXPECT_TRUE(full.is_object());

  const auto again = evaluate_nlg(cands, refs);
  EXPECT_EQ(nlg_report_json(again), nlg_report_json(rep));
}
