#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "radgen/observations.hpp"

namespace radgen {

using Phrase = std::vector<std::string>;

struct ObservationRule {
  std::size_t index = 0;  // into observation_names()
  std::vector<Phrase> phrases;
  std::vector<Phrase> negations;
  std::size_t window = 6;
};

struct RuleSet {
  std::vector<ObservationRule> rules;
  std::vector<std::string> warnings;
};

inline constexpr std::size_t kDefaultNegationWindow = 6;

// Line-oriented format: OBS <name> / PHRASE <tokens> / NEG <tokens> /
// WINDOW <int>, '#' comments. Throws FormatError with the line number.
RuleSet parse_rules(std::string_view text);
RuleSet load_rules(const std::filesystem::path& path);

// Per sentence, a mention is negated when a cue ends at most `window` tokens
// before it. Any positive mention wins over negated ones across sentences.
ObservationVector label_report(std::string_view text, const RuleSet& rules);

using KeywordDictionary = std::vector<Phrase>;

KeywordDictionary parse_keywords(std::string_view text);
KeywordDictionary load_keywords(const std::filesystem::path& path);

// |K_gen ∩ K_ref| / |K_ref| over distinct dictionary keywords present in each
// text. A keyword-free reference scores 1 if the candidate is keyword-free
// too, else 0.
double keywords_accuracy(std::string_view generated, std::string_view reference,
                         const KeywordDictionary& dictionary);

}  // namespace radgen
