#include "radgen/synth.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

#include "radgen/io.hpp"

namespace radgen {

SynthParams::SynthParams() {
  positive_rate.fill(0.12);
  negative_rate.fill(0.18);
  positive_rate[kNoFindingIndex] = negative_rate[kNoFindingIndex] = 0.0;
}

void SynthParams::validate() const {
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (positive_rate[i] < 0 || negative_rate[i] < 0 || positive_rate[i] + negative_rate[i] > 1.0) {
      throw std::invalid_argument("synth: marginals for '" + std::string(observation_names()[i]) +
                                  "' must be non-negative and sum to <= 1");
    }
  }
  if (!images) {
    if (memory_slots == 0 || feature_dim < 2 * (kNumObservations - 1)) {
      throw std::invalid_argument("synth: feature layout needs >= 1 slot and >= 26 dims");
    }
  } else if (image_side % 4 != 0 || (image_side / 4) * (image_side / 4) < kNumObservations - 1) {
    throw std::invalid_argument("synth: image side must be a multiple of 4 with >= 13 blocks");
  }
  if (noise < 0) throw std::invalid_argument("synth: noise must be >= 0");
  if (paraphrase_rate < 0 || paraphrase_rate > 1) throw std::invalid_argument("synth: paraphrase_rate must be in [0, 1]");
}

const std::array<SentenceTemplate, kNumObservations>& report_templates() {
  static const std::array<SentenceTemplate, kNumObservations> t = {{
      {"", "", "", ""},  // No Finding: derived
      {"There is a widened mediastinum.", "No widened mediastinum.",
       "Mediastinal widening is noted.", "Negative for mediastinal widening."},
      {"The heart is enlarged.", "There is no cardiomegaly.", "Cardiomegaly is present.",
       "Negative for cardiomegaly."},
      {"There is a right basilar opacity.", "No focal opacity is seen.",
       "Patchy opacities are seen bilaterally.", "Lungs are clear of opacities."},
      {"A nodule is seen in the left upper lobe.", "No pulmonary nodule or mass.",
       "There is a spiculated mass.", "Without suspicious lesion."},
      {"There is mild pulmonary edema.", "No pulmonary edema.", "Vascular congestion is present.",
       "Negative for edema."},
      {"Focal areas of pulmonary consolidation.", "No focal areas of pulmonary consolidation.",
       "Dense consolidation in the lingula.", "Lungs free of consolidation."},
      {"Findings are concerning for pneumonia.", "No evidence of pneumonia.", "Infection is likely.",
       "Negative for infection."},
      {"There is bibasilar atelectasis.", "No atelectasis.", "Lung bases appear atelectatic.",
       "Bases without atelectasis."},
      {"There is a small right pneumothorax.", "There is no pneumothorax.",
       "Apical pneumothorax is identified.", "Negative for pneumothorax."},
      {"There is a small left pleural effusion.", "No pleural effusion.",
       "Bilateral effusions are present.", "Costophrenic angles free of effusion."},
      {"There is apical pleural thickening.", "No pleural thickening.", "Pleural scarring is noted.",
       "Without pleural scarring."},
      {"There is a healed rib fracture.", "No acute fracture.", "Old fractures of the ribs.",
       "Negative for fractures."},
      {"A pacemaker is in place.", "No support devices are present.",
       "Catheter tip projects over the cava.", "Without catheter."},
  }};
  return t;
}

std::string render_report(const ObservationVector& obs,
                          const std::array<bool, kNumObservations>& alt_mask) {
  const auto& templates = report_templates();
  std::string out;
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (i == kNoFindingIndex || obs[i] == Mention::not_mentioned) continue;
    const auto& t = templates[i];
    std::string_view s = obs[i] == Mention::positive ? (alt_mask[i] ? t.positive_alt : t.positive)
                                                     : (alt_mask[i] ? t.negative_alt : t.negative);
    if (!out.empty()) out += ' ';
    out += s;
  }
  if (out.empty()) out = alt_mask[kNoFindingIndex] ? kNormalSentenceAlt : kNormalSentence;
  return out;
}

std::vector<std::string> tags_for(const ObservationVector& obs) {
  std::vector<std::string> tags;
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (obs[i] != Mention::positive) continue;
    if (i == kNoFindingIndex) {
      tags.emplace_back("normal");
      continue;
    }
    std::string name(observation_names()[i]);
    std::transform(name.begin(), name.end(), name.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    tags.push_back(std::move(name));
  }
  return tags;
}

namespace {

// Every slot carries the observation code: dim 2(i-1) marks observation i
// positive, 2(i-1)+1 negative. Everything gets Gaussian noise.
FeatureRecord make_features(const ObservationVector& obs, const SynthParams& p, Rng& rng) {
  FeatureRecord rec;
  rec.values.resize(p.memory_slots * p.feature_dim);
  for (auto& v : rec.values) v = static_cast<float>(p.noise * rng.normal());
  for (std::size_t slot = 0; slot < p.memory_slots; ++slot) {
    for (std::size_t i = 1; i < kNumObservations; ++i) {
      const std::size_t base = slot * p.feature_dim + 2 * (i - 1);
      if (obs[i] == Mention::positive) rec.values[base] += 1.0f;
      if (obs[i] == Mention::negative) rec.values[base + 1] += 1.0f;
    }
  }
  return rec;
}

// 4x4-pixel block i-1 is bright for positive, mid-grey for negative.
GrayImage make_image(const ObservationVector& obs, const SynthParams& p, Rng& rng) {
  GrayImage img;
  img.height = img.width = p.image_side;
  img.pixels.resize(p.image_side * p.image_side);
  const std::size_t blocks_per_row = p.image_side / 4;
  for (std::size_t y = 0; y < p.image_side; ++y) {
    for (std::size_t x = 0; x < p.image_side; ++x) {
      const std::size_t block = (y / 4) * blocks_per_row + x / 4;
      double v = 0.0;
      if (block + 1 < kNumObservations) {
        const Mention m = obs[block + 1];
        v = m == Mention::positive ? 1.0 : m == Mention::negative ? 0.5 : 0.0;
      }
      img.pixels[y * p.image_side + x] = std::clamp(v + p.noise * rng.normal(), 0.0, 1.0);
    }
  }
  // Round-trip through 8-bit so in-memory and on-disk inputs agree exactly.
  return parse_pgm(encode_pgm(img));
}

}  // namespace

SyntheticCorpus synth_corpus(std::uint64_t seed, std::size_t n, const SynthParams& params) {
  if (n == 0) throw std::invalid_argument("synth_corpus: n must be >= 1");
  params.validate();
  SyntheticCorpus out;
  Rng labels = Rng(seed).fork(1);
  Rng noise = Rng(seed).fork(2);
  Rng phrasing = Rng(seed).fork(3);
  const std::size_t width = std::to_string(n - 1).size();
  for (std::size_t k = 0; k < n; ++k) {
    ObservationVector obs;
    for (std::size_t i = 0; i < kNumObservations; ++i) {
      if (i == kNoFindingIndex) continue;
      const double u = labels.uniform();
      obs[i] = u < params.positive_rate[i]                              ? Mention::positive
               : u < params.positive_rate[i] + params.negative_rate[i] ? Mention::negative
                                                                       : Mention::not_mentioned;
    }
    obs.derive_no_finding();
    std::array<bool, kNumObservations> alt{};
    for (auto& a : alt) a = phrasing.uniform() < params.paraphrase_rate;

    std::string num = std::to_string(k);
    Example ex;
    ex.id = params.id_prefix + std::string(width - num.size(), '0') + num;
    ex.report = render_report(obs, alt);
    ex.tags = tags_for(obs);
    ex.observations = obs;
    if (params.images) {
      ex.image = "images/" + ex.id + ".pgm";
      out.inputs.emplace_back(make_image(obs, params, noise));
    } else {
      ex.image = "features/" + ex.id + ".rgft";
      out.inputs.emplace_back(make_features(obs, params, noise));
    }
    out.corpus.examples.push_back(std::move(ex));
    out.truth.push_back(obs);
  }
  return out;
}

void write_synthetic_corpus(const SyntheticCorpus& synth, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  for (std::size_t k = 0; k < synth.corpus.examples.size(); ++k) {
    const auto& ex = synth.corpus.examples[k];
    const auto& input = synth.inputs[k];
    std::string bytes = std::holds_alternative<FeatureRecord>(input)
                            ? encode_features(std::get<FeatureRecord>(input))
                            : encode_pgm(std::get<GrayImage>(input));
    atomic_write(dir / ex.image, bytes);
  }
  atomic_write(dir / "corpus.jsonl", serialize_dataset(synth.corpus));
}

}  // namespace radgen
