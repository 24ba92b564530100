#include "radgen/observations.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace radgen {

namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

}  // namespace

std::string_view to_string(Mention m) {
  switch (m) {
    case Mention::positive: return "positive";
    case Mention::negative: return "negative";
    default: return "not-mentioned";
  }
}

Mention parse_mention(std::string_view text) {
  if (text == "positive") return Mention::positive;
  if (text == "negative") return Mention::negative;
  if (text == "not-mentioned") return Mention::not_mentioned;
  throw std::invalid_argument("unknown observation value '" + std::string(text) +
                              "' (expected positive|negative)");
}

const std::array<std::string_view, kNumObservations>& observation_names() {
  static const std::array<std::string_view, kNumObservations> names = {
      "No Finding",   "Enlarged Cardiomediastinum", "Cardiomegaly", "Lung Opacity",
      "Lung Lesion",  "Edema",                      "Consolidation", "Pneumonia",
      "Atelectasis",  "Pneumothorax",               "Pleural Effusion", "Pleural Other",
      "Fracture",     "Support Devices"};
  return names;
}

std::optional<std::size_t> observation_index(std::string_view name) {
  const auto& names = observation_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (iequals(names[i], name)) return i;
  }
  return std::nullopt;
}

Mention ObservationVector::get(std::string_view name) const {
  auto idx = observation_index(name);
  if (!idx) throw std::invalid_argument("unknown observation '" + std::string(name) + "'");
  return values_[*idx];
}

void ObservationVector::set(std::string_view name, Mention m) {
  auto idx = observation_index(name);
  if (!idx) throw std::invalid_argument("unknown observation '" + std::string(name) + "'");
  values_[*idx] = m;
}

void ObservationVector::derive_no_finding() {
  bool any_mentioned = false, any_positive = false;
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (i == kNoFindingIndex) continue;
    any_mentioned |= values_[i] != Mention::not_mentioned;
    any_positive |= values_[i] == Mention::positive;
  }
  values_[kNoFindingIndex] =
      (any_mentioned && !any_positive) ? Mention::positive : Mention::not_mentioned;
}

std::vector<std::string> ObservationVector::positive_names() const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    if (values_[i] == Mention::positive) out.emplace_back(observation_names()[i]);
  }
  return out;
}

std::vector<double> ObservationVector::positive_indicator() const {
  std::vector<double> out(kNumObservations);
  for (std::size_t i = 0; i < kNumObservations; ++i) {
    out[i] = values_[i] == Mention::positive ? 1.0 : 0.0;
  }
  return out;
}

}  // namespace radgen
