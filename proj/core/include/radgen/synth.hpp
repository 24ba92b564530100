#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "radgen/corpus.hpp"
#include "radgen/observations.hpp"
#include "radgen/rng.hpp"

namespace radgen {

struct SynthParams {
  // Per-observation marginals; index kNoFindingIndex is ignored (derived).
  std::array<double, kNumObservations> positive_rate{};
  std::array<double, kNumObservations> negative_rate{};
  double noise = 0.1;
  std::size_t memory_slots = 16;
  std::size_t feature_dim = 32;
  // Emit PGM images for the tiny-conv encoder instead of feature records.
  bool images = false;
  std::size_t image_side = 16;
  // Probability of using the paraphrase template for a sentence.
  double paraphrase_rate = 0.0;
  std::string id_prefix = "syn";

  SynthParams();
  void validate() const;
};

struct SentenceTemplate {
  std::string_view positive;
  std::string_view negative;
  std::string_view positive_alt;
  std::string_view negative_alt;
};

// Sentence templates for every non-derived observation (index 0 unused).
const std::array<SentenceTemplate, kNumObservations>& report_templates();
inline constexpr std::string_view kNormalSentence = "The lungs are clear.";
inline constexpr std::string_view kNormalSentenceAlt = "No acute cardiopulmonary abnormality.";

// Report text for an observation vector: one sentence per mentioned
// observation in canonical order. `alt_mask[i]` picks the paraphrase.
std::string render_report(const ObservationVector& obs,
                          const std::array<bool, kNumObservations>& alt_mask = {});

// Tags implied by an observation vector: lowercase names of positive
// observations ("normal" for No Finding).
std::vector<std::string> tags_for(const ObservationVector& obs);

struct SyntheticCorpus {
  Corpus corpus;
  std::vector<ObservationVector> truth;
  std::vector<ImageInput> inputs;
};

SyntheticCorpus synth_corpus(std::uint64_t seed, std::size_t n, const SynthParams& params = {});

// dir/corpus.jsonl plus dir/features/<id>.rgft (or dir/images/<id>.pgm).
void write_synthetic_corpus(const SyntheticCorpus& synth, const std::filesystem::path& dir);

}  // namespace radgen
