#include "radgen/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "radgen/error.hpp"

namespace radgen {

using ojson = nlohmann::ordered_json;

namespace {

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

PrfScore prf(std::size_t tp, std::size_t fp, std::size_t fn) {
  if (tp + fp + fn == 0) return {1.0, 1.0, 1.0};
  PrfScore s;
  s.precision = safe_div(static_cast<double>(tp), static_cast<double>(tp + fp));
  s.recall = safe_div(static_cast<double>(tp), static_cast<double>(tp + fn));
  s.f1 = safe_div(2.0 * s.precision * s.recall, s.precision + s.recall);
  return s;
}

}  // namespace

ClassificationResult classification_metrics(const std::vector<LabelSet>& gt,
                                            const std::vector<LabelSet>& pred,
                                            const std::vector<std::string>& universe) {
  if (gt.size() != pred.size()) {
    throw std::invalid_argument("classification_metrics: " + std::to_string(gt.size()) +
                                " ground-truth sets vs " + std::to_string(pred.size()) + " predictions");
  }
  ClassificationResult r;
  for (const auto& name : universe) r.per_label.push_back(LabelMetrics{name});
  auto index_of = [&](const std::string& label) {
    auto it = std::find(universe.begin(), universe.end(), label);
    if (it == universe.end()) throw std::invalid_argument("label '" + label + "' not in universe");
    return static_cast<std::size_t>(it - universe.begin());
  };
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    std::set<std::size_t> g, p;
    for (const auto& l : gt[i]) g.insert(index_of(l));
    for (const auto& l : pred[i]) p.insert(index_of(l));
    std::size_t etp = 0;
    for (auto k : p) {
      if (g.count(k)) {
        ++r.per_label[k].tp;
        ++etp;
      } else {
        ++r.per_label[k].fp;
      }
    }
    for (auto k : g)
      if (!p.count(k)) ++r.per_label[k].fn;
    r.per_example.push_back(prf(etp, p.size() - etp, g.size() - etp));
    tp += etp;
    fp += p.size() - etp;
    fn += g.size() - etp;
  }
  std::size_t active = 0;
  for (auto& l : r.per_label) {
    l.support = l.tp + l.fn;
    const PrfScore s = prf(l.tp, l.fp, l.fn);
    if (l.tp + l.fp + l.fn == 0) {
      l.precision = l.recall = l.f1 = 0.0;
      continue;
    }
    l.precision = s.precision;
    l.recall = s.recall;
    l.f1 = s.f1;
    r.macro.precision += s.precision;
    r.macro.recall += s.recall;
    r.macro.f1 += s.f1;
    ++active;
  }
  if (active == 0) {
    r.macro = {1.0, 1.0, 1.0};
  } else {
    r.macro.precision /= static_cast<double>(active);
    r.macro.recall /= static_cast<double>(active);
    r.macro.f1 /= static_cast<double>(active);
  }
  r.micro = prf(tp, fp, fn);
  return r;
}

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::mlc_obs: return "mlc_obs";
    case Stage::mlc_tags: return "mlc_tags";
    case Stage::nlg: return "nlg";
    case Stage::generated_obs: return "generated_obs";
  }
  return "?";
}

LabelSet threshold_labels(const std::vector<double>& logits, const std::vector<std::string>& names,
                          double threshold) {
  if (threshold < 0.0 || threshold > 1.0) throw ConfigError("threshold must be in [0, 1]");
  if (logits.size() != names.size()) throw ShapeError("threshold_labels: score/name count mismatch");
  const double cut = threshold == 0.0   ? -std::numeric_limits<double>::infinity()
                     : threshold == 1.0 ? std::numeric_limits<double>::infinity()
                                        : std::log(threshold / (1.0 - threshold));
  LabelSet out;
  for (std::size_t i = 0; i < logits.size(); ++i)
    if (logits[i] >= cut) out.push_back(names[i]);
  return out;
}

LabelSet positive_labels(const ObservationVector& v) { return v.positive_names(); }

ObservationVector ground_truth_observations(const Example& ex, const RuleSet& rules) {
  if (ex.observations) {
    ObservationVector v = *ex.observations;
    return v;
  }
  return label_report(ex.report, rules);
}

std::vector<std::string> observation_universe() {
  const auto& n = observation_names();
  return {n.begin(), n.end()};
}

namespace {

StageResult classification_stage(Stage stage, const std::vector<LabelSet>& gt,
                                 const std::vector<LabelSet>& pred,
                                 const std::vector<std::string>& universe) {
  StageResult s{stage};
  s.present = true;
  s.classification = classification_metrics(gt, pred, universe);
  return s;
}

StageResult absent(Stage stage, std::string why) {
  StageResult s{stage};
  s.present = false;
  s.absent_reason = std::move(why);
  return s;
}

std::vector<double> values_of(const Tensor& t) {
  auto v = t.values();
  return {v.begin(), v.end()};
}

}  // namespace

Stage1Result stage1_eval(const Corpus& corpus, const std::vector<MemoryGrid>& memories,
                         const ReportModel& model, const std::vector<std::string>& tag_names,
                         const RuleSet& rules, double threshold) {
  if (memories.size() != corpus.size()) throw std::invalid_argument("stage1_eval: memory count mismatch");
  NoGradGuard ng;
  const auto universe = observation_universe();
  Stage1Result r;
  std::vector<LabelSet> gt_obs, gt_tags;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const MlcOutput out = model.mlc(memories[i]);
    r.predictions.obs.push_back(threshold_labels(values_of(out.obs_logits), universe, threshold));
    gt_obs.push_back(positive_labels(ground_truth_observations(corpus.examples[i], rules)));
    if (out.tag_logits.defined() && out.tag_logits.size() == tag_names.size()) {
      r.predictions.tags.push_back(threshold_labels(values_of(out.tag_logits), tag_names, threshold));
    }
  }
  r.obs = classification_stage(Stage::mlc_obs, gt_obs, r.predictions.obs, universe);
  if (!corpus.has_tags()) {
    r.tags = absent(Stage::mlc_tags, "corpus has no tags");
  } else if (tag_names.empty() || r.predictions.tags.size() != corpus.size()) {
    r.tags = absent(Stage::mlc_tags, "model has no tag head");
    r.predictions.tags.clear();
  } else {
    for (const auto& ex : corpus.examples) {
      LabelSet t;
      for (const auto& tag : ex.tags.value_or(std::vector<std::string>{}))
        if (std::find(tag_names.begin(), tag_names.end(), tag) != tag_names.end()) t.push_back(tag);
      gt_tags.push_back(std::move(t));
    }
    r.tags = classification_stage(Stage::mlc_tags, gt_tags, r.predictions.tags, tag_names);
  }
  return r;
}

StageResult stage2_eval(const std::vector<std::string>& gt_reports,
                        const std::vector<std::string>& generated) {
  if (gt_reports.size() != generated.size()) throw std::invalid_argument("stage2_eval: count mismatch");
  std::vector<Tokens> cands;
  std::vector<std::vector<Tokens>> refs;
  for (std::size_t i = 0; i < gt_reports.size(); ++i) {
    cands.push_back(tokenize_report(generated[i]));
    refs.push_back({tokenize_report(gt_reports[i])});
  }
  StageResult s{Stage::nlg};
  s.present = true;
  s.nlg = evaluate_nlg(cands, refs);
  return s;
}

StageResult stage3_eval(const std::vector<ObservationVector>& gt,
                        const std::vector<std::string>& generated, const RuleSet& rules) {
  if (gt.size() != generated.size()) throw std::invalid_argument("stage3_eval: count mismatch");
  std::vector<LabelSet> g, p;
  for (std::size_t i = 0; i < gt.size(); ++i) {
    g.push_back(positive_labels(gt[i]));
    p.push_back(positive_labels(label_report(generated[i], rules)));
  }
  return classification_stage(Stage::generated_obs, g, p, observation_universe());
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string corpus_fingerprint(const Corpus& corpus) {
  const std::string s = serialize_dataset(corpus);
  return hex64(fnv1a64(s.data(), s.size()));
}

std::string parameters_fingerprint(const ParameterSet& params) {
  std::uint64_t h = fnv1a64(nullptr, 0);
  for (const auto& [name, t] : params.entries()) {
    h = hash_combine(h, fnv1a64(name.data(), name.size()));
    auto v = t.values();
    h = hash_combine(h, fnv1a64(v.data(), v.size() * sizeof(double)));
  }
  return hex64(h);
}

std::string config_fingerprint(const ModelConfig& config) {
  const std::string s = model_config_to_json(config);
  return hex64(fnv1a64(s.data(), s.size()));
}

namespace {

void fill_examples_text(EvalReport& rep, const Corpus& corpus, const std::vector<std::string>& generated,
                        const std::vector<ObservationVector>& gt, const RuleSet& rules) {
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    ExampleRecord e;
    e.id = corpus.examples[i].id;
    e.gt_report = corpus.examples[i].report;
    e.generated = generated[i];
    e.gt_obs = positive_labels(gt[i]);
    e.gt_tags = corpus.examples[i].tags;
    if (rep.nlg.present && i < rep.nlg.nlg.per_example.size()) e.nlg = rep.nlg.nlg.per_example[i];
    if (rep.generated_obs.present) {
      e.generated_obs = positive_labels(label_report(generated[i], rules));
      e.stage3 = rep.generated_obs.classification.per_example[i];
    }
    rep.examples.push_back(std::move(e));
  }
}

void check_mode(const std::string& mode) {
  if (mode != "nlg" && mode != "clinical") {
    throw ConfigError("unknown evaluation mode '" + mode + "' (expected nlg|clinical)");
  }
}

}  // namespace

EvalReport evaluate_generated(const Corpus& corpus, const std::vector<std::string>& generated,
                              const RuleSet& rules, const std::string& mode) {
  check_mode(mode);
  if (generated.size() != corpus.size()) {
    throw std::invalid_argument("evaluate: " + std::to_string(generated.size()) +
                                " generated reports for " + std::to_string(corpus.size()) + " examples");
  }
  EvalReport rep;
  rep.mode = mode;
  rep.corpus_id = corpus_fingerprint(corpus);
  rep.checkpoint_id = "none";
  rep.config_hash = "none";
  std::vector<std::string> gt_reports;
  std::vector<ObservationVector> gt;
  for (const auto& ex : corpus.examples) {
    gt_reports.push_back(ex.report);
    gt.push_back(ground_truth_observations(ex, rules));
  }
  rep.nlg = stage2_eval(gt_reports, generated);
  rep.mlc_obs = absent(Stage::mlc_obs, "no model given");
  rep.mlc_tags = absent(Stage::mlc_tags, "no model given");
  if (mode == "clinical") {
    rep.generated_obs = stage3_eval(gt, generated, rules);
  } else {
    rep.generated_obs = absent(Stage::generated_obs, "nlg mode");
  }
  fill_examples_text(rep, corpus, generated, gt, rules);
  return rep;
}

EvalReport full_evaluation(const Corpus& corpus, const ReportModel& model, const Vocab& vocab,
                           const std::vector<std::string>& tag_names, const RuleSet& rules,
                           const EvalOptions& options) {
  check_mode(options.mode);
  NoGradGuard ng;
  std::vector<MemoryGrid> memories;
  std::vector<std::string> generated;
  for (const auto& ex : corpus.examples) {
    memories.push_back(model.encode(load_image_input(corpus, ex)));
    const auto hyps = beam_search_decode(model, memories.back(), options.beam);
    generated.push_back(hyps.empty() ? std::string() : decode_tokens(hyps.front().tokens, vocab));
  }
  EvalReport rep = evaluate_generated(corpus, generated, rules, options.mode);
  rep.checkpoint_id = parameters_fingerprint(model.parameters());
  rep.config_hash = config_fingerprint(model.config());
  if (options.mode == "clinical") {
    Stage1Result s1 = stage1_eval(corpus, memories, model, tag_names, rules, options.threshold);
    rep.mlc_obs = s1.obs;
    rep.mlc_tags = s1.tags;
    for (std::size_t i = 0; i < rep.examples.size(); ++i) {
      auto& e = rep.examples[i];
      e.pred_obs = s1.predictions.obs[i];
      e.mlc_obs = s1.obs.classification.per_example[i];
      if (s1.tags.present) {
        e.pred_tags = s1.predictions.tags[i];
        e.mlc_tags = s1.tags.classification.per_example[i];
      }
    }
  } else {
    rep.mlc_obs = absent(Stage::mlc_obs, "nlg mode");
    rep.mlc_tags = absent(Stage::mlc_tags, "nlg mode");
  }
  return rep;
}

// ---- JSON -------------------------------------------------------------------

namespace {

ojson prf_json(const PrfScore& s) {
  return ojson{{"precision", s.precision}, {"recall", s.recall}, {"f1", s.f1}};
}

PrfScore prf_from(const ojson& j) {
  return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

ojson scores_json(const NlgScores& s) {
  ojson j;
  for (int k = 0; k < 4; ++k) j["bleu" + std::to_string(k + 1)] = s.bleu[k];
  j["meteor"] = s.meteor;
  j["rouge_l"] = s.rouge_l;
  j["cider"] = s.cider;
  return j;
}

NlgScores scores_from(const ojson& j) {
  NlgScores s;
  for (int k = 0; k < 4; ++k) s.bleu[k] = j.at("bleu" + std::to_string(k + 1)).get<double>();
  s.meteor = j.at("meteor").get<double>();
  s.rouge_l = j.at("rouge_l").get<double>();
  s.cider = j.at("cider").get<double>();
  return s;
}

ojson stage_json(const StageResult& s) {
  ojson j;
  j["stage"] = to_string(s.stage);
  j["present"] = s.present;
  if (!s.present) {
    j["reason"] = s.absent_reason;
    return j;
  }
  if (s.stage == Stage::nlg) {
    j["corpus"] = scores_json(s.nlg.corpus);
    j["bleu_level"] = "corpus";
    j["bleu_raw"] = s.nlg.corpus_bleu_raw;
    j["mean_sentence_bleu"] = s.nlg.mean_sentence_bleu;
    auto arr = ojson::array();
    for (const auto& e : s.nlg.per_example) arr.push_back(scores_json(e));
    j["per_example"] = arr;
    return j;
  }
  const auto& c = s.classification;
  j["micro"] = prf_json(c.micro);
  j["macro"] = prf_json(c.macro);
  auto labels = ojson::array();
  for (const auto& l : c.per_label) {
    labels.push_back(ojson{{"label", l.label}, {"tp", l.tp}, {"fp", l.fp}, {"fn", l.fn},
                           {"support", l.support}, {"precision", l.precision},
                           {"recall", l.recall}, {"f1", l.f1}});
  }
  j["per_label"] = labels;
  auto ex = ojson::array();
  for (const auto& e : c.per_example) ex.push_back(prf_json(e));
  j["per_example"] = ex;
  return j;
}

StageResult stage_from(const ojson& j, Stage expected) {
  StageResult s{expected};
  if (j.at("stage").get<std::string>() != to_string(expected)) {
    throw FormatError("eval report: stage '" + j.at("stage").get<std::string>() + "' out of place");
  }
  s.present = j.at("present").get<bool>();
  if (!s.present) {
    s.absent_reason = j.value("reason", "");
    return s;
  }
  if (expected == Stage::nlg) {
    s.nlg.corpus = scores_from(j.at("corpus"));
    s.nlg.corpus_bleu_raw = j.at("bleu_raw").get<std::array<double, 4>>();
    s.nlg.mean_sentence_bleu = j.at("mean_sentence_bleu").get<std::array<double, 4>>();
    for (const auto& e : j.at("per_example")) s.nlg.per_example.push_back(scores_from(e));
    return s;
  }
  auto& c = s.classification;
  c.micro = prf_from(j.at("micro"));
  c.macro = prf_from(j.at("macro"));
  for (const auto& l : j.at("per_label")) {
    LabelMetrics m;
    m.label = l.at("label").get<std::string>();
    m.tp = l.at("tp").get<std::size_t>();
    m.fp = l.at("fp").get<std::size_t>();
    m.fn = l.at("fn").get<std::size_t>();
    m.support = l.at("support").get<std::size_t>();
    m.precision = l.at("precision").get<double>();
    m.recall = l.at("recall").get<double>();
    m.f1 = l.at("f1").get<double>();
    c.per_label.push_back(std::move(m));
  }
  for (const auto& e : j.at("per_example")) c.per_example.push_back(prf_from(e));
  return s;
}

template <typename T>
void put_optional(ojson& j, const char* key, const std::optional<T>& v) {
  if (v) j[key] = *v;
  else j[key] = nullptr;
}

}  // namespace

std::string eval_report_to_json(const EvalReport& r) {
  ojson j;
  j["schema"] = r.schema;
  j["mode"] = r.mode;
  j["corpus_id"] = r.corpus_id;
  j["checkpoint_id"] = r.checkpoint_id;
  j["config_hash"] = r.config_hash;
  j["stages"] = ojson{{"mlc_obs", stage_json(r.mlc_obs)},
                      {"mlc_tags", stage_json(r.mlc_tags)},
                      {"nlg", stage_json(r.nlg)},
                      {"generated_obs", stage_json(r.generated_obs)}};
  auto ex = ojson::array();
  for (const auto& e : r.examples) {
    ojson o;
    o["id"] = e.id;
    o["gt_obs"] = e.gt_obs;
    o["pred_obs"] = e.pred_obs;
    o["generated_obs"] = e.generated_obs;
    put_optional(o, "gt_tags", e.gt_tags);
    put_optional(o, "pred_tags", e.pred_tags);
    o["gt_report"] = e.gt_report;
    o["generated"] = e.generated;
    o["mlc_obs"] = e.mlc_obs ? prf_json(*e.mlc_obs) : ojson(nullptr);
    o["mlc_tags"] = e.mlc_tags ? prf_json(*e.mlc_tags) : ojson(nullptr);
    o["nlg"] = scores_json(e.nlg);
    o["generated_obs_scores"] = e.stage3 ? prf_json(*e.stage3) : ojson(nullptr);
    ex.push_back(std::move(o));
  }
  j["examples"] = ex;
  return j.dump(2) + "\n";
}

EvalReport eval_report_from_json(std::string_view text) {
  ojson j;
  try {
    j = ojson::parse(text);
  } catch (const ojson::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
  try {
    EvalReport r;
    r.schema = j.at("schema").get<std::string>();
    if (r.schema != "eval/1") throw FormatError("eval report: unsupported schema '" + r.schema + "'");
    r.mode = j.at("mode").get<std::string>();
    r.corpus_id = j.at("corpus_id").get<std::string>();
    r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    const auto& st = j.at("stages");
    r.mlc_obs = stage_from(st.at("mlc_obs"), Stage::mlc_obs);
    r.mlc_tags = stage_from(st.at("mlc_tags"), Stage::mlc_tags);
    r.nlg = stage_from(st.at("nlg"), Stage::nlg);
    r.generated_obs = stage_from(st.at("generated_obs"), Stage::generated_obs);
    for (const auto& o : j.at("examples")) {
      ExampleRecord e;
      e.id = o.at("id").get<std::string>();
      e.gt_obs = o.at("gt_obs").get<LabelSet>();
      e.pred_obs = o.at("pred_obs").get<LabelSet>();
      e.generated_obs = o.at("generated_obs").get<LabelSet>();
      if (!o.at("gt_tags").is_null()) e.gt_tags = o.at("gt_tags").get<LabelSet>();
      if (!o.at("pred_tags").is_null()) e.pred_tags = o.at("pred_tags").get<LabelSet>();
      e.gt_report = o.at("gt_report").get<std::string>();
      e.generated = o.at("generated").get<std::string>();
      if (!o.at("mlc_obs").is_null()) e.mlc_obs = prf_from(o.at("mlc_obs"));
      if (!o.at("mlc_tags").is_null()) e.mlc_tags = prf_from(o.at("mlc_tags"));
      e.nlg = scores_from(o.at("nlg"));
      if (!o.at("generated_obs_scores").is_null()) e.stage3 = prf_from(o.at("generated_obs_scores"));
      r.examples.push_back(std::move(e));
    }
    return r;
  } catch (const ojson::exception& e) {
    throw FormatError(std::string("eval report: ") + e.what());
  }
}

// ---- tables -----------------------------------------------------------------

std::string render_nlg_table(const std::vector<std::pair<std::string, NlgScores>>& rows) {
  std::size_t w = 5;
  for (const auto& r : rows) w = std::max(w, r.first.size());
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-*s %8s %8s %8s %8s %8s %8s %8s\n", static_cast<int>(w), "Model",
                "BLEU-1", "BLEU-2", "BLEU-3", "BLEU-4", "METEOR", "ROUGE", "CIDEr");
  os << buf;
  for (const auto& [name, s] : rows) {
    std::snprintf(buf, sizeof buf, "%-*s %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f %8.2f\n",
                  static_cast<int>(w), name.c_str(), 100 * s.bleu[0], 100 * s.bleu[1],
                  100 * s.bleu[2], 100 * s.bleu[3], 100 * s.meteor, 100 * s.rouge_l, 100 * s.cider);
    os << buf;
  }
  return os.str();
}

namespace {

void render_classification(std::ostringstream& os, const StageResult& s) {
  char buf[256];
  os << "[" << to_string(s.stage) << "]";
  if (!s.present) {
    os << " absent (" << s.absent_reason << ")\n";
    return;
  }
  os << "\n";
  std::snprintf(buf, sizeof buf, "%-28s %9s %9s %9s %8s\n", "Label", "Precision", "Recall", "F1",
                "Support");
  os << buf;
  for (const auto& l : s.classification.per_label) {
    std::snprintf(buf, sizeof buf, "%-28s %9.4f %9.4f %9.4f %8zu\n", l.label.c_str(), l.precision,
                  l.recall, l.f1, l.support);
    os << buf;
  }
  for (const auto& [name, v] : {std::pair{"micro", s.classification.micro},
                                std::pair{"macro", s.classification.macro}}) {
    std::snprintf(buf, sizeof buf, "%-28s %9.4f %9.4f %9.4f\n", name, v.precision, v.recall, v.f1);
    os << buf;
  }
}

}  // namespace

std::string render_eval_report(const EvalReport& r) {
  std::ostringstream os;
  os << "[nlg] BLEU " << (r.nlg.present ? "corpus-level" : "") << "\n";
  if (r.nlg.present) os << render_nlg_table({{"model", r.nlg.nlg.corpus}});
  if (r.mode == "clinical") {
    render_classification(os, r.mlc_obs);
    render_classification(os, r.mlc_tags);
    render_classification(os, r.generated_obs);
  }
  return os.str();
}

}  // namespace radgen
