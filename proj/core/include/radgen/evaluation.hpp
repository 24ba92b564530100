#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "radgen/corpus.hpp"
#include "radgen/decoding.hpp"
#include "radgen/labeler.hpp"
#include "radgen/metrics.hpp"
#include "radgen/model.hpp"

namespace radgen {

using LabelSet = std::vector<std::string>;

struct LabelMetrics {
  std::string label;
  std::size_t tp = 0, fp = 0, fn = 0;
  std::size_t support = 0;  // tp + fn
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

struct PrfScore {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Zero-division conventions: P = 0 when nothing is predicted, R = 0 when
// nothing is expected, F1 = 0 when P + R = 0. A set of examples with
// nothing expected and nothing predicted scores 1 (nothing to get wrong).
struct ClassificationResult {
  std::vector<LabelMetrics> per_label;  // universe order
  PrfScore micro;
  PrfScore macro;  // over labels with support or predictions
  std::vector<PrfScore> per_example;
};

ClassificationResult classification_metrics(const std::vector<LabelSet>& gt,
                                            const std::vector<LabelSet>& pred,
                                            const std::vector<std::string>& universe);

enum class Stage { mlc_obs, mlc_tags, nlg, generated_obs };
std::string_view to_string(Stage s);

struct StageResult {
  StageResult() = default;
  explicit StageResult(Stage s) : stage(s) {}

  Stage stage = Stage::nlg;
  bool present = false;
  std::string absent_reason;
  ClassificationResult classification;  // classification stages
  NlgReport nlg;                        // nlg stage
};

struct ExampleRecord {
  std::string id;
  LabelSet gt_obs, pred_obs, generated_obs;
  std::optional<LabelSet> gt_tags, pred_tags;
  std::string gt_report, generated;
  std::optional<PrfScore> mlc_obs, mlc_tags, stage3;
  NlgScores nlg;
};

struct EvalReport {
  std::string schema = "eval/1";
  std::string mode;  // "nlg" or "clinical"
  std::string corpus_id;
  std::string checkpoint_id;
  std::string config_hash;
  StageResult mlc_obs{Stage::mlc_obs};
  StageResult mlc_tags{Stage::mlc_tags};
  StageResult nlg{Stage::nlg};
  StageResult generated_obs{Stage::generated_obs};
  std::vector<ExampleRecord> examples;
};

// Thresholding is done on logits so that 0 selects everything and 1 nothing.
LabelSet threshold_labels(const std::vector<double>& logits, const std::vector<std::string>& names,
                          double threshold);

LabelSet positive_labels(const ObservationVector& v);

// Ground-truth observations of an example: its own field, else the labeler
// applied to its report.
ObservationVector ground_truth_observations(const Example& ex, const RuleSet& rules);

std::vector<std::string> observation_universe();

struct MlcPredictions {
  std::vector<LabelSet> obs;
  std::vector<LabelSet> tags;
};

struct Stage1Result {
  StageResult obs;
  StageResult tags;
  MlcPredictions predictions;
};

// MLC scores thresholded into label sets, compared with ground truth. The
// tags result is absent when the corpus or the model has no tags.
Stage1Result stage1_eval(const Corpus& corpus, const std::vector<MemoryGrid>& memories,
                         const ReportModel& model, const std::vector<std::string>& tag_names,
                         const RuleSet& rules, double threshold = 0.5);

StageResult stage2_eval(const std::vector<std::string>& gt_reports,
                        const std::vector<std::string>& generated);

StageResult stage3_eval(const std::vector<ObservationVector>& gt,
                        const std::vector<std::string>& generated, const RuleSet& rules);

struct EvalOptions {
  std::string mode = "clinical";
  BeamOptions beam;  // beam size 3 by default
  double threshold = 0.5;
};

// encode -> MLC -> beam decode -> stages 1-3 (+ tags).
EvalReport full_evaluation(const Corpus& corpus, const ReportModel& model, const Vocab& vocab,
                           const std::vector<std::string>& tag_names, const RuleSet& rules,
                           const EvalOptions& options);

// Stages computable from text alone (stage 2, and stage 3 in clinical mode).
EvalReport evaluate_generated(const Corpus& corpus, const std::vector<std::string>& generated,
                              const RuleSet& rules, const std::string& mode);

std::string eval_report_to_json(const EvalReport& report);
EvalReport eval_report_from_json(std::string_view text);

// Fixed-width score table, scores x100.
std::string render_nlg_table(const std::vector<std::pair<std::string, NlgScores>>& rows);
std::string render_eval_report(const EvalReport& report);

std::string hex64(std::uint64_t v);
std::string corpus_fingerprint(const Corpus& corpus);
std::string parameters_fingerprint(const ParameterSet& params);
std::string config_fingerprint(const ModelConfig& config);

}  // namespace radgen
