#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "radgen/config.hpp"
#include "radgen/corpus.hpp"
#include "radgen/error.hpp"
#include "radgen/io.hpp"
#include "radgen/labeler.hpp"
#include "radgen/synth.hpp"
#include "support.hpp"

using namespace radgen;
using radgen::testing::TempDir;

namespace {

using Toks = std::vector<std::string>;

Corpus corpus_of(const std::vector<std::string>& reports) {
  Corpus c;
  for (std::size_t i = 0; i < reports.size(); ++i)
    c.examples.push_back(Example{"e" + std::to_string(i), "x.rgft", reports[i], std::nullopt, std::nullopt});
  return c;
}

}  // namespace

TEST(Tokenizer, Fixtures) {
  EXPECT_EQ(tokenize_report("No acute disease."), (Toks{"no", "acute", "disease", "."}));
  EXPECT_EQ(tokenize_report("XXXX-year-old male"), (Toks{"xxxx", "-", "year", "-", "old", "male"}));
  EXPECT_EQ(tokenize_report(""), Toks{});
  EXPECT_EQ(tokenize_report("Heart (normal): size; stable/unchanged, xx"),
            (Toks{"heart", "(", "normal", ")", ":", "size", ";", "stable", "/", "unchanged", ",", "xxxx"}));
  EXPECT_EQ(tokenize_report("  Mixed\tCASE \n words "), (Toks{"mixed", "case", "words"}));
}

TEST(Tokenizer, SingleXIsAWord) {
  EXPECT_EQ(tokenize_report("x ray"), (Toks{"x", "ray"}));
  EXPECT_EQ(tokenize_report("XxX"), (Toks{"xxxx"}));
}

TEST(Vocab, FrequencyThresholdBoundary) {
  Corpus c = corpus_of({"alpha beta beta", "alpha beta gamma", "alpha gamma"});
  Vocab v = build_vocab(c);
  EXPECT_TRUE(v.contains("alpha"));   // 3 times
  EXPECT_TRUE(v.contains("beta"));    // 3 times
  EXPECT_FALSE(v.contains("gamma"));  // twice
  EXPECT_EQ(v.id("gamma"), kUnkId);
  EXPECT_EQ(v.token(kPadId), v.tokens()[0]);
  EXPECT_EQ(v.size(), kNumReserved + 2);
}

TEST(Vocab, OrderByFrequencyThenLexicographic) {
  Corpus c = corpus_of({"b b b a a a c c c c"});
  Vocab v = build_vocab(c);
  EXPECT_EQ(v.id("c"), 4);
  EXPECT_EQ(v.id("a"), 5);
  EXPECT_EQ(v.id("b"), 6);
}

TEST(Vocab, DeterministicAndOrderInsensitive) {
  auto s = synth_corpus(3, 40);
  Vocab a = build_vocab(s.corpus), b = build_vocab(s.corpus);
  EXPECT_EQ(a.serialize(), b.serialize());
  Corpus shuffled = s.corpus;
  Rng rng(9);
  rng.shuffle(std::span<Example>(shuffled.examples));
  EXPECT_EQ(build_vocab(shuffled).serialize(), a.serialize());
  EXPECT_EQ(Vocab::deserialize(a.serialize()), a);
}

TEST(Vocab, EmptyCorpusRejected) {
  EXPECT_ANY_THROW(build_vocab(Corpus{}));
}

TEST(Encode, Contracts) {
  Corpus c = corpus_of({"a a a b b b"});
  Vocab v = build_vocab(c);
  EXPECT_EQ(encode_tokens(Toks{}, v, 10), (std::vector<TokenId>{kStartId, kEndId}));
  EXPECT_EQ(encode_tokens(Toks{"zzz"}, v, 10), (std::vector<TokenId>{kStartId, kUnkId, kEndId}));
  Toks many(15, "a");
  auto ids = encode_tokens(many, v, 10);
  EXPECT_EQ(ids.size(), 10u);
  EXPECT_EQ(ids.back(), kEndId);
  EXPECT_EQ(pad_to(ids, 12).size(), 12u);
  EXPECT_EQ(pad_to(ids, 12).back(), kPadId);
}

TEST(Decode, Contracts) {
  Corpus c = corpus_of({"the heart is normal . the heart is normal . the heart is normal ."});
  Vocab v = build_vocab(c);
  const std::vector<TokenId> se{kStartId, kEndId};
  EXPECT_EQ(decode_tokens(se, v), "");
  auto toks = tokenize_report("The heart is normal.");
  EXPECT_EQ(decode_tokens(encode_tokens(toks, v, 60), v), "the heart is normal .");
  const std::vector<TokenId> with_unk{kStartId, kUnkId, kEndId, v.id("heart")};
  EXPECT_EQ(decode_tokens(with_unk, v), std::string(kUnkRendering));
}

TEST(Decode, RoundTripOnSyntheticReports) {
  auto s = synth_corpus(5, 30);
  Vocab v = build_vocab(s.corpus, 1);
  for (const auto& ex : s.corpus.examples) {
    const auto toks = tokenize_report(ex.report);
    EXPECT_EQ(tokenize_report(decode_tokens(encode_tokens(toks, v, 200), v)), toks);
  }
}

TEST(Dataset, ParsesValidFile) {
  const std::string text =
      R"({"id":"a","image":"a.pgm","report":"No acute disease."})"
      "\n"
      R"({"id":"b","image":"b.pgm","report":"Heart is enlarged.","tags":["cardiomegaly"]})"
      "\n"
      R"({"id":"c","image":"c.pgm","report":"x","observations":{"Cardiomegaly":"positive"}})"
      "\n";
  Corpus c = parse_dataset(text);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.examples[1].tags->front(), "cardiomegaly");
  EXPECT_EQ(c.examples[2].observations->get("Cardiomegaly"), Mention::positive);
  EXPECT_EQ(parse_dataset(serialize_dataset(c)).examples.size(), 3u);
}

TEST(Dataset, DuplicateIdRejected) {
  const std::string text = R"({"id":"a","image":"a","report":"r"})"
                           "\n"
                           R"({"id":"a","image":"b","report":"s"})"
                           "\n";
  EXPECT_THROW(parse_dataset(text), FormatError);
}

TEST(Dataset, MissingReportNamesFieldAndLine) {
  const std::string text = R"({"id":"a","image":"a","report":"r"})"
                           "\n"
                           R"({"id":"b","image":"b"})"
                           "\n";
  try {
    parse_dataset(text);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("report"), std::string::npos) << e.what();
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Dataset, MalformedJsonReportsLine) {
  try {
    parse_dataset("{\"id\":\"a\",\"image\":\"a\",\"report\":\"r\"}\n{not json\n");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.line(), 2);
  }
}

TEST(Dataset, MissingImageFailsAtAccessNotLoad) {
  TempDir dir("corpus-missing");
  atomic_write(dir / "c.jsonl", R"({"id":"a","image":"nowhere.rgft","report":"r"})"
                                "\n");
  Corpus c = load_dataset(dir / "c.jsonl");
  ASSERT_EQ(c.size(), 1u);
  EXPECT_ANY_THROW(load_image_input(c, c.examples[0]));
}

TEST(ImageFiles, PgmAndFeatureRoundTrip) {
  GrayImage img{2, 3, {0, 1, 0.5, 0.2, 0.8, 1}};
  GrayImage back = parse_pgm(encode_pgm(img));
  EXPECT_EQ(back.height, 2u);
  EXPECT_EQ(back.width, 3u);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_NEAR(back.pixels[i], img.pixels[i], 1.0 / 255);
  FeatureRecord f{{1.5f, -2.25f, 3.0f}};
  const std::string bytes = encode_features(f);
  EXPECT_EQ(bytes.substr(0, 4), "RGFT");
  EXPECT_EQ(parse_features(bytes).values, f.values);
  EXPECT_THROW(parse_features(bytes.substr(0, bytes.size() - 1)), FormatError);
  EXPECT_THROW(parse_pgm("P2\n1 1\n255\n0"), FormatError);
}

TEST(Synth, DeterministicUnderSeed) {
  auto a = synth_corpus(17, 25), b = synth_corpus(17, 25), c = synth_corpus(18, 25);
  EXPECT_EQ(serialize_dataset(a.corpus), serialize_dataset(b.corpus));
  EXPECT_NE(serialize_dataset(a.corpus), serialize_dataset(c.corpus));
  for (std::size_t i = 0; i < 25; ++i)
    EXPECT_EQ(std::get<FeatureRecord>(a.inputs[i]).values, std::get<FeatureRecord>(b.inputs[i]).values);
}

TEST(Synth, WrittenFilesIdenticalAcrossRuns) {
  TempDir d1("synth-a"), d2("synth-b");
  write_synthetic_corpus(synth_corpus(4, 6), d1.path());
  write_synthetic_corpus(synth_corpus(4, 6), d2.path());
  EXPECT_EQ(read_file(d1 / "corpus.jsonl"), read_file(d2 / "corpus.jsonl"));
  Corpus c = load_dataset(d1 / "corpus.jsonl");
  for (const auto& ex : c.examples) {
    EXPECT_EQ(read_file(c.resolve(ex)), read_file(d2.path() / ex.image));
    EXPECT_NO_THROW(load_image_input(c, ex));
  }
}

TEST(Synth, AllNegativeReportUsesOnlyNegativeSentences) {
  ObservationVector v;
  for (std::size_t i = 1; i < kNumObservations; ++i) v[i] = Mention::negative;
  v.derive_no_finding();
  const std::string report = render_report(v);
  for (std::size_t i = 1; i < kNumObservations; ++i) {
    EXPECT_NE(report.find(report_templates()[i].negative), std::string::npos) << i;
    EXPECT_EQ(report.find(report_templates()[i].positive), std::string::npos) << i;
  }
}

TEST(Synth, MarginalsWithinThreeSigma) {
  SynthParams p;
  const std::size_t n = 2000;
  auto s = synth_corpus(8, n, p);
  for (std::size_t i = 1; i < kNumObservations; ++i) {
    std::size_t pos = 0, neg = 0;
    for (const auto& t : s.truth) {
      pos += t[i] == Mention::positive;
      neg += t[i] == Mention::negative;
    }
    auto within = [&](std::size_t count, double rate) {
      const double sigma = std::sqrt(n * rate * (1 - rate));
      return std::abs(static_cast<double>(count) - n * rate) <= 3 * sigma;
    };
    EXPECT_TRUE(within(pos, p.positive_rate[i])) << observation_names()[i] << " pos " << pos;
    EXPECT_TRUE(within(neg, p.negative_rate[i])) << observation_names()[i] << " neg " << neg;
  }
}

TEST(Synth, TagsFollowPositiveObservations) {
  auto s = synth_corpus(2, 50);
  for (std::size_t i = 0; i < 50; ++i) EXPECT_EQ(*s.corpus.examples[i].tags, tags_for(s.truth[i]));
}

TEST(Synth, LabelerRecoversGeneratingVector) {
  const RuleSet rules = load_rules(std::string(RADGEN_DATA_DIR) + "/rules.txt");
  SynthParams p;
  p.paraphrase_rate = 0.5;
  auto s = synth_corpus(31, 300, p);
  for (std::size_t i = 0; i < s.corpus.size(); ++i)
    EXPECT_EQ(label_report(s.corpus.examples[i].report, rules), s.truth[i]) << s.corpus.examples[i].report;
}

TEST(Synth, ImagesModeWritesPgm) {
  SynthParams p;
  p.images = true;
  auto s = synth_corpus(1, 3, p);
  for (const auto& in : s.inputs) {
    const auto& img = std::get<GrayImage>(in);
    EXPECT_EQ(img.height, 16u);
    EXPECT_EQ(img.width, 16u);
  }
}

TEST(Config, KeyValueAndJsonAgree) {
  RunConfig kv = parse_run_config("# comment\nd_model = 32\ntrain.lr=0.001\ndecoder=lstm\nmax_epochs = 7\n");
  RunConfig js = parse_run_config(R"({"model":{"d_model":32,"decoder":"lstm"},"train":{"lr":0.001,"max_epochs":7}})");
  EXPECT_EQ(run_config_to_json(kv), run_config_to_json(js));
  EXPECT_EQ(kv.model.d_model, 32u);
  EXPECT_EQ(kv.model.decoder, DecoderKind::lstm);
  EXPECT_DOUBLE_EQ(kv.train.lr, 0.001);
  EXPECT_EQ(kv.train.max_epochs, 7u);
}

TEST(Config, Defaults) {
  TrainConfig t;
  EXPECT_DOUBLE_EQ(t.lr, 1e-4);
  EXPECT_DOUBLE_EQ(t.beta1, 0.9);
  EXPECT_DOUBLE_EQ(t.beta2, 0.999);
  EXPECT_EQ(t.batch_size, 8u);
  EXPECT_EQ(t.max_epochs, 30u);
  EXPECT_DOUBLE_EQ(t.dropout, 0.5);
  ModelConfig m;
  EXPECT_EQ(m.d_model, 64u);
  EXPECT_EQ(m.n_heads, 2u);
  EXPECT_EQ(m.n_layers, 2u);
  EXPECT_EQ(m.d_ff, 128u);
  EXPECT_EQ(m.memory_slots, 16u);
  EXPECT_EQ(m.max_len, 60u);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(parse_run_config("no_such_key=1\n"), FormatError);
  EXPECT_THROW(parse_run_config("d_model=abc\n"), FormatError);
  RunConfig rc;
  EXPECT_THROW(apply_setting(rc, "no_such_key", "1"), ConfigError);
  EXPECT_THROW(apply_setting(rc, "d_model", "abc"), ConfigError);
  TrainConfig t;
  t.early_stop_patience = 0;
  EXPECT_THROW(t.validate(), ConfigError);
  EXPECT_EQ(model_config_from_json(model_config_to_json(ModelConfig{})).d_model, 64u);
}

TEST(AtomicWrite, ReplacesWholeFile) {
  TempDir dir("atomic");
  const auto p = dir / "sub/out.txt";
  atomic_write(p, "first");
  atomic_write(p, "second");
  EXPECT_EQ(read_file(p), "second");
  std::size_t files = 0;
  for ([[maybe_unused]] const auto& e : std::filesystem::directory_iterator(p.parent_path())) ++files;
  EXPECT_EQ(files, 1u);
}
