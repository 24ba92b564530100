// radgen: synthetic corpora, training, generation, evaluation, labeling and
// benchmark sweeps from the command line.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "radgen/checkpoint.hpp"
#include "radgen/config.hpp"
#include "radgen/corpus.hpp"
#include "radgen/decoding.hpp"
#include "radgen/error.hpp"
#include "radgen/evaluation.hpp"
#include "radgen/io.hpp"
#include "radgen/labeler.hpp"
#include "radgen/synth.hpp"
#include "radgen/training.hpp"

#ifndef RADGEN_DATA_DIR
#define RADGEN_DATA_DIR "."
#endif

namespace fs = std::filesystem;
using nlohmann::ordered_json;
using namespace radgen;

namespace {

fs::path default_rules() {
  if (const char* d = std::getenv("RADGEN_DATA")) return fs::path(d) / "rules.txt";
  return fs::path(RADGEN_DATA_DIR) / "rules.txt";
}

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& flag, std::uint64_t fallback) {
  if (flag) return *flag;
  if (const char* env = std::getenv("RADGEN_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used == std::string(env).size()) return v;
    } catch (const std::exception&) {
    }
    throw ConfigError(std::string("RADGEN_SEED must be an unsigned integer, got '") + env + "'");
  }
  return fallback;
}

void require_file(const fs::path& p, const char* what) {
  if (!fs::exists(p)) throw std::runtime_error(std::string(what) + " '" + p.string() + "' does not exist");
}

void print_header(const std::string& command, const ordered_json& effective) {
  std::cout << "# radgen " << command << " " << effective.dump() << "\n";
}

RunConfig load_config(const std::string& path) {
  if (path.empty()) return {};
  require_file(path, "config file");
  return load_run_config(path);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep))
    if (!item.empty()) out.push_back(item);
  return out;
}

// ---- synth --------------------------------------------------------------------

struct SynthArgs {
  std::optional<std::uint64_t> seed;
  std::size_t n = 0;
  std::string out;
  bool images = false;
  double paraphrase = 0.0;
  double noise = 0.1;
  double positive_rate = 0.12;
  double negative_rate = 0.18;
};

int run_synth(const SynthArgs& a) {
  if (a.n == 0) throw CLI::ValidationError("--n", "must be at least 1");
  SynthParams p;
  p.images = a.images;
  p.paraphrase_rate = a.paraphrase;
  p.noise = a.noise;
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (i == kNoFindingIndex) continue;
    p.positive_rate[i] = a.positive_rate;
    p.negative_rate[i] = a.negative_rate;
  }
  const std::uint64_t seed = resolve_seed(a.seed, 0);
  print_header("synth", {{"seed", seed}, {"n", a.n}, {"out", a.out}, {"images", a.images},
                         {"paraphrase_rate", a.paraphrase}, {"noise", a.noise},
                         {"positive_rate", a.positive_rate}, {"negative_rate", a.negative_rate}});
  const auto s = synth_corpus(seed, a.n, p);
  write_synthetic_corpus(s, a.out);
  std::cout << "wrote " << a.n << " examples to " << (fs::path(a.out) / "corpus.jsonl").string() << "\n";
  return 0;
}

// ---- train --------------------------------------------------------------------

struct TrainArgs {
  std::string corpus, valid, decoder, config, out_ckpt, history;
  std::optional<std::uint64_t> seed;
  std::optional<double> lr, dropout, mlc_weight;
  std::optional<std::size_t> epochs, batch_size, patience;
  std::size_t min_freq = kMinTokenFrequency;
};

int run_train(const TrainArgs& a) {
  require_file(a.corpus, "corpus");
  require_file(a.valid, "validation corpus");
  RunConfig rc = load_config(a.config);
  if (!a.decoder.empty()) rc.model.decoder = parse_decoder_kind(a.decoder);
  rc.train.seed = resolve_seed(a.seed, rc.train.seed);
  if (a.lr) rc.train.lr = *a.lr;
  if (a.dropout) rc.train.dropout = *a.dropout;
  if (a.mlc_weight) rc.train.mlc_loss_weight = *a.mlc_weight;
  if (a.epochs) rc.train.max_epochs = *a.epochs;
  if (a.batch_size) rc.train.batch_size = *a.batch_size;
  if (a.patience) rc.train.early_stop_patience = *a.patience;
  rc.train.validate();

  const Corpus train_corpus = load_dataset(a.corpus);
  const Corpus valid_corpus = load_dataset(a.valid);
  if (train_corpus.size() == 0) throw std::runtime_error("corpus '" + a.corpus + "' is empty");
  if (valid_corpus.size() == 0) throw std::runtime_error("validation corpus '" + a.valid + "' is empty");
  const Vocab vocab = build_vocab(train_corpus, a.min_freq);
  const auto tags = tag_universe(train_corpus);
  rc.model.vocab_size = vocab.size();
  rc.model.n_tags = tags.size();
  rc.model.dropout_rate = rc.train.dropout;
  rc.model.validate();

  ordered_json header = ordered_json::parse(run_config_to_json(rc));
  header["corpus"] = a.corpus;
  header["valid"] = a.valid;
  header["min_freq"] = a.min_freq;
  print_header("train", header);

  const auto train_set = prepare_examples(train_corpus, vocab, tags, rc.model.max_len);
  const auto valid_set = prepare_examples(valid_corpus, vocab, tags, rc.model.max_len);
  ReportModel model(rc.model, rc.train.seed);
  std::string history;
  const auto result = train(model, vocab, train_set, valid_set, rc.train, [&](const EpochRecord& r) {
    const std::string line = epoch_record_json(r);
    std::cout << line << "\n" << std::flush;
    history += line + "\n";
  });
  save_checkpoint(a.out_ckpt, model, vocab, tags);
  if (!a.history.empty()) atomic_write(a.history, history);
  std::cout << "# best epoch " << result.best_epoch << " bleu4 " << result.best_bleu4 << "; saved "
            << a.out_ckpt << "\n";
  return 0;
}

// ---- generate -----------------------------------------------------------------

struct GenerateArgs {
  std::string ckpt, corpus, out;
  std::size_t beam = 3;
  std::optional<std::size_t> max_len;
  double alpha = 0.0;
};

std::vector<std::string> generate_reports(const Checkpoint& ck, const Corpus& corpus,
                                          const BeamOptions& opts) {
  NoGradGuard ng;
  std::vector<std::string> out;
  for (const auto& ex : corpus.examples) {
    const auto hyps = beam_search_decode(ck.model, ck.model.encode(load_image_input(corpus, ex)), opts);
    out.push_back(hyps.empty() ? std::string() : decode_tokens(hyps.front().tokens, ck.vocab));
  }
  return out;
}

BeamOptions beam_options(const Checkpoint& ck, std::size_t beam, std::optional<std::size_t> max_len,
                         double alpha) {
  if (beam < 1) throw CLI::ValidationError("--beam", "must be at least 1");
  BeamOptions o;
  o.beam_size = beam;
  o.max_len = max_len.value_or(ck.model.config().max_len);
  if (o.max_len > ck.model.config().max_len) {
    throw ConfigError("--max-len " + std::to_string(o.max_len) + " exceeds the model's max_len " +
                      std::to_string(ck.model.config().max_len));
  }
  o.length_alpha = alpha;
  return o;
}

int run_generate(const GenerateArgs& a) {
  if (a.beam < 1) throw CLI::ValidationError("--beam", "must be at least 1");
  require_file(a.ckpt, "checkpoint");
  require_file(a.corpus, "corpus");
  const Checkpoint ck = load_checkpoint(a.ckpt);
  const BeamOptions opts = beam_options(ck, a.beam, a.max_len, a.alpha);
  print_header("generate", {{"ckpt", a.ckpt}, {"corpus", a.corpus}, {"beam", opts.beam_size},
                            {"max_len", opts.max_len}, {"alpha", opts.length_alpha}});
  const Corpus corpus = load_dataset(a.corpus);
  const auto gen = generate_reports(ck, corpus, opts);
  std::string out;
  for (std::size_t i = 0; i < gen.size(); ++i) {
    out += ordered_json{{"id", corpus.examples[i].id}, {"generated", gen[i]}}.dump() + "\n";
  }
  atomic_write(a.out, out);
  std::cout << "wrote " << gen.size() << " reports to " << a.out << "\n";
  return 0;
}

// ---- evaluate -----------------------------------------------------------------

struct EvaluateArgs {
  std::string corpus, generated, ckpt, mode = "clinical", rules, out;
  std::size_t beam = 3;
  double threshold = 0.5;
};

std::vector<std::string> read_generated(const std::string& path, const Corpus& corpus) {
  std::map<std::string, std::string> by_id;
  std::istringstream in(read_file(path));
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      by_id[j.at("id").get<std::string>()] = j.at("generated").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ": " + e.what(), lineno);
    }
  }
  std::vector<std::string> out;
  for (const auto& ex : corpus.examples) {
    auto it = by_id.find(ex.id);
    if (it == by_id.end()) throw std::runtime_error(path + ": no generated report for id '" + ex.id + "'");
    out.push_back(it->second);
  }
  return out;
}

int run_evaluate(const EvaluateArgs& a) {
  if (a.generated.empty() == a.ckpt.empty()) {
    throw CLI::ValidationError("evaluate", "give exactly one of --generated or --ckpt");
  }
  require_file(a.corpus, "corpus");
  const fs::path rules_path = a.rules.empty() ? default_rules() : fs::path(a.rules);
  require_file(rules_path, "rules file");
  const RuleSet rules = load_rules(rules_path);
  const Corpus corpus = load_dataset(a.corpus);
  ordered_json header{{"corpus", a.corpus}, {"mode", a.mode}, {"rules", rules_path.string()},
                      {"threshold", a.threshold}};
  EvalReport rep;
  if (!a.ckpt.empty()) {
    require_file(a.ckpt, "checkpoint");
    const Checkpoint ck = load_checkpoint(a.ckpt);
    EvalOptions opts;
    opts.mode = a.mode;
    opts.beam = beam_options(ck, a.beam, std::nullopt, 0.0);
    opts.threshold = a.threshold;
    header["ckpt"] = a.ckpt;
    header["beam"] = a.beam;
    print_header("evaluate", header);
    rep = full_evaluation(corpus, ck.model, ck.vocab, ck.tags, rules, opts);
  } else {
    require_file(a.generated, "generated reports");
    header["generated"] = a.generated;
    print_header("evaluate", header);
    rep = evaluate_generated(corpus, read_generated(a.generated, corpus), rules, a.mode);
  }
  if (!a.out.empty()) atomic_write(a.out, eval_report_to_json(rep));
  std::cout << render_eval_report(rep);
  return 0;
}

// ---- label --------------------------------------------------------------------

struct LabelArgs {
  std::string rules, in, out;
};

int run_label(const LabelArgs& a) {
  const fs::path rules_path = a.rules.empty() ? default_rules() : fs::path(a.rules);
  require_file(rules_path, "rules file");
  require_file(a.in, "input");
  const RuleSet rules = load_rules(rules_path);
  for (const auto& w : rules.warnings) std::cerr << "radgen: warning: " << w << "\n";
  std::istringstream in(read_file(a.in));
  std::string line, out;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    std::string id = std::to_string(lineno), text = line;
    if (line.front() == '{') {
      try {
        const auto j = nlohmann::json::parse(line);
        text = j.contains("report") ? j.at("report").get<std::string>() : j.at("generated").get<std::string>();
        if (j.contains("id")) id = j.at("id").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw FormatError(a.in + ": " + e.what(), lineno);
      }
    }
    const ObservationVector v = label_report(text, rules);
    ordered_json obs = ordered_json::object();
    for (std::size_t i = 0; i < kNumObservations; ++i) obs[std::string(observation_names()[i])] = to_string(v[i]);
    out += ordered_json{{"id", id}, {"observations", obs}}.dump() + "\n";
  }
  atomic_write(a.out, out);
  return 0;
}

// ---- bench --------------------------------------------------------------------

struct BenchArgs {
  std::string corpus, valid, grid = "heads=1,2,3:layers=3,5,7", config, out;
  std::size_t epochs = 1;
  std::size_t d_model = 48;
  std::optional<std::uint64_t> seed;
  bool decoders = false;
};

int run_bench(const BenchArgs& a) {
  require_file(a.corpus, "corpus");
  RunConfig rc = load_config(a.config);
  rc.train.seed = resolve_seed(a.seed, rc.train.seed);
  rc.train.max_epochs = a.epochs;
  rc.train.early_stop_patience = a.epochs;
  rc.model.d_model = a.d_model;
  const Corpus corpus = load_dataset(a.corpus);
  const Corpus valid = a.valid.empty() ? corpus : load_dataset(a.valid);
  const Vocab vocab = build_vocab(corpus);
  rc.model.vocab_size = vocab.size();
  rc.model.dropout_rate = rc.train.dropout;
  const auto train_set = prepare_examples(corpus, vocab, {}, rc.model.max_len);
  const auto valid_set = prepare_examples(valid, vocab, {}, rc.model.max_len);

  std::string table;
  if (a.decoders) {
    print_header("bench", {{"corpus", a.corpus}, {"mode", "decoders"}, {"seq_lens", {16, 64}}});
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s %6s %10s %14s %10s\n", "model", "T", "params", "sec/epoch", "depth");
    table += buf;
    for (const auto& r : benchmark_decoders(train_set, rc.model, {16, 64}, 1, rc.train.seed)) {
      std::snprintf(buf, sizeof buf, "%-12s %6zu %10zu %14.4f %10zu\n", r.model.c_str(), r.seq_len,
                    r.parameters, r.seconds_per_epoch, r.sequential_depth);
      table += buf;
    }
  } else {
    // Axes: heads, layers, hidden (LSTM hidden units), in the order given.
    std::vector<std::pair<std::string, std::vector<std::size_t>>> axes;
    for (const auto& part : split(a.grid, ':')) {
      const auto eq = part.find('=');
      if (eq == std::string::npos) throw ConfigError("--grid: expected axis=v1,v2,... in '" + part + "'");
      const std::string axis = part.substr(0, eq);
      if (axis != "heads" && axis != "layers" && axis != "hidden") {
        throw ConfigError("--grid: unknown axis '" + axis + "' (expected heads|layers|hidden)");
      }
      std::vector<std::size_t> vals;
      for (const auto& v : split(part.substr(eq + 1), ',')) vals.push_back(std::stoul(v));
      if (vals.empty()) throw ConfigError("--grid: axis '" + axis + "' has no values");
      axes.emplace_back(axis, vals);
    }
    if (axes.empty()) throw ConfigError("--grid is empty");
    ordered_json header = ordered_json::parse(run_config_to_json(rc));
    header["grid"] = a.grid;
    header["corpus"] = a.corpus;
    print_header("bench", header);
    char buf[256];
    std::snprintf(buf, sizeof buf, "%-12s %6s %6s %7s %10s %10s %10s %12s\n", "decoder", "heads",
                  "layers", "hidden", "params", "loss", "BLEU-4", "sec/epoch");
    table += buf;
    std::vector<std::size_t> idx(axes.size(), 0);
    while (true) {
      ModelConfig mc = rc.model;
      bool lstm = false;
      for (std::size_t k = 0; k < axes.size(); ++k) {
        const auto v = axes[k].second[idx[k]];
        if (axes[k].first == "heads") mc.n_heads = v;
        if (axes[k].first == "layers") mc.n_layers = v;
        if (axes[k].first == "hidden") {
          mc.lstm_hidden = v;
          lstm = true;
        }
      }
      if (lstm) mc.decoder = DecoderKind::lstm;
      ReportModel model(mc, rc.train.seed);
      const auto res = train(model, vocab, train_set, valid_set, rc.train);
      double secs = 0.0;
      for (const auto& h : res.history) secs += h.seconds;
      secs /= static_cast<double>(res.history.size());
      std::snprintf(buf, sizeof buf, "%-12s %6zu %6zu %7zu %10zu %10.4f %10.2f %12.4f\n",
                    std::string(to_string(mc.decoder)).c_str(), mc.n_heads, mc.n_layers,
                    mc.lstm_hidden, model.parameters().scalar_count(), res.history.back().loss,
                    100.0 * res.best_bleu4, secs);
      table += buf;
      std::size_t k = axes.size();
      while (k > 0) {
        --k;
        if (++idx[k] < axes[k].second.size()) break;
        idx[k] = 0;
        if (k == 0) {
          k = axes.size() + 1;
          break;
        }
      }
      if (k == axes.size() + 1) break;
    }
  }
  std::cout << table;
  if (!a.out.empty()) atomic_write(a.out, table);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Radiology report generation and clinical evaluation"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "Show help for all subcommands");

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Write a seeded synthetic corpus (JSONL + feature files)");
  synth->add_option("--seed", sa.seed, "Generator seed (default: $RADGEN_SEED, else 0)");
  synth->add_option("--n", sa.n, "Number of examples (>= 1)")->required();
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_flag("--images", sa.images, "Write 16x16 PGM images instead of feature records");
  synth->add_option("--paraphrase-rate", sa.paraphrase, "Probability of paraphrased sentences")->capture_default_str();
  synth->add_option("--noise", sa.noise, "Feature noise standard deviation")->capture_default_str();
  synth->add_option("--positive-rate", sa.positive_rate, "Per-observation positive rate")->capture_default_str();
  synth->add_option("--negative-rate", sa.negative_rate, "Per-observation negative rate")->capture_default_str();

  TrainArgs ta;
  auto* trainc = app.add_subcommand("train", "Train a report generator with teacher forcing");
  trainc->add_option("--corpus", ta.corpus, "Training corpus JSONL")->required();
  trainc->add_option("--valid", ta.valid, "Validation corpus JSONL (model selection by BLEU-4)")->required();
  trainc->add_option("--decoder", ta.decoder, "transformer | lstm (default: config, else transformer)");
  trainc->add_option("--config", ta.config, "Config file, key=value or JSON; flags override it");
  trainc->add_option("--out-ckpt", ta.out_ckpt, "Checkpoint path (metadata goes to <path>.json)")->required();
  trainc->add_option("--history", ta.history, "Also write per-epoch history JSONL here");
  trainc->add_option("--seed", ta.seed, "Seed (default: config, $RADGEN_SEED, else 0)");
  trainc->add_option("--lr", ta.lr, "Adam learning rate (default 1e-4)");
  trainc->add_option("--dropout", ta.dropout, "Dropout rate (default 0.5)");
  trainc->add_option("--epochs", ta.epochs, "Maximum epochs (default 30)");
  trainc->add_option("--batch-size", ta.batch_size, "Mini-batch size (default 8)");
  trainc->add_option("--patience", ta.patience, "Early-stopping patience in epochs (default 5)");
  trainc->add_option("--mlc-weight", ta.mlc_weight, "Weight of the MLC loss (default 1.0)");
  trainc->add_option("--min-freq", ta.min_freq, "Vocabulary frequency threshold")->capture_default_str();

  GenerateArgs ga;
  auto* gen = app.add_subcommand("generate", "Generate reports with beam search");
  gen->add_option("--ckpt", ga.ckpt, "Checkpoint path")->required();
  gen->add_option("--corpus", ga.corpus, "Corpus JSONL")->required();
  gen->add_option("--beam", ga.beam, "Beam size (>= 1)")->capture_default_str();
  gen->add_option("--max-len", ga.max_len, "Maximum tokens incl. start (default: model max_len)");
  gen->add_option("--alpha", ga.alpha, "Length normalisation exponent")->capture_default_str();
  gen->add_option("--out", ga.out, "Output JSONL of {id, generated}")->required();

  EvaluateArgs ea;
  auto* eval = app.add_subcommand("evaluate", "NLG metrics and three-stage clinical evaluation");
  eval->add_option("--corpus", ea.corpus, "Ground-truth corpus JSONL")->required();
  eval->add_option("--generated", ea.generated, "Generated reports JSONL");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint to decode and evaluate end to end");
  eval->add_option("--mode", ea.mode, "nlg | clinical")
      ->check(CLI::IsMember({"nlg", "clinical"}))
      ->capture_default_str();
  eval->add_option("--rules", ea.rules, "Labeler rules file (default: shipped rules)");
  eval->add_option("--beam", ea.beam, "Beam size when decoding a checkpoint")->capture_default_str();
  eval->add_option("--threshold", ea.threshold, "MLC decision threshold")->capture_default_str();
  eval->add_option("--out", ea.out, "Write the EvalReport JSON here");

  LabelArgs la;
  auto* label = app.add_subcommand("label", "Label report text with observations");
  label->add_option("--rules", la.rules, "Labeler rules file (default: shipped rules)");
  label->add_option("--in", la.in, "Input: one report per line, or JSONL with \"report\" or \"generated\"")->required();
  label->add_option("--out", la.out, "Output JSONL of {id, observations}")->required();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Timing/quality sweep over model grids");
  bench->add_option("--corpus", ba.corpus, "Training corpus JSONL")->required();
  bench->add_option("--valid", ba.valid, "Validation corpus (default: the training corpus)");
  bench->add_option("--grid", ba.grid, "Axes heads|layers|hidden, e.g. heads=1,2,3:layers=3,5,7")
      ->capture_default_str();
  bench->add_option("--epochs", ba.epochs, "Epochs per grid point")->capture_default_str();
  bench->add_option("--d-model", ba.d_model, "Model width (divisible by every head count)")
      ->capture_default_str();
  bench->add_option("--config", ba.config, "Config file, key=value or JSON");
  bench->add_option("--seed", ba.seed, "Seed (default: config, $RADGEN_SEED, else 0)");
  bench->add_flag("--decoders", ba.decoders, "Compare transformer and matched LSTM at T = 16, 64");
  bench->add_option("--out", ba.out, "Also write the table here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*synth) return run_synth(sa);
    if (*trainc) return run_train(ta);
    if (*gen) return run_generate(ga);
    if (*eval) return run_evaluate(ea);
    if (*label) return run_label(la);
    if (*bench) return run_bench(ba);
  } catch (const CLI::Error& e) {
    std::cerr << "radgen: error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& c : msg)
      if (c == '\n') c = ' ';
    std::cerr << "radgen: error: " << msg << "\n";
    return 1;
  }
  return 0;
}
