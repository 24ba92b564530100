#include "radgen/labeler.hpp"

#include <algorithm>
#include <charconv>
#include <set>
#include <sstream>

#include "radgen/corpus.hpp"
#include "radgen/error.hpp"
#include "radgen/io.hpp"

namespace radgen {

namespace {

std::vector<std::string> split_ws(std::string_view s) {
  std::vector<std::string> out;
  std::istringstream in{std::string(s)};
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

bool matches_at(const std::vector<std::string>& toks, std::size_t pos, const Phrase& phrase) {
  if (pos + phrase.size() > toks.size()) return false;
  return std::equal(phrase.begin(), phrase.end(), toks.begin() + static_cast<std::ptrdiff_t>(pos));
}

bool negated(const std::vector<std::string>& sentence, std::size_t mention_start,
             const ObservationRule& rule) {
  const std::size_t lo = mention_start > rule.window ? mention_start - rule.window : 0;
  for (const auto& cue : rule.negations) {
    for (std::size_t s = lo; s + cue.size() <= mention_start; ++s) {
      if (matches_at(sentence, s, cue)) return true;
    }
  }
  return false;
}

void add_unique(std::vector<Phrase>& list, Phrase p, std::vector<std::string>& warnings,
                std::string_view what, long lineno) {
  if (std::find(list.begin(), list.end(), p) != list.end()) {
    std::string joined;
    for (auto& t : p) joined += (joined.empty() ? "" : " ") + t;
    warnings.push_back("line " + std::to_string(lineno) + ": duplicate " + std::string(what) +
                       " '" + joined + "' ignored");
    return;
  }
  list.push_back(std::move(p));
}

std::vector<std::vector<std::string>> sentences_of(std::string_view text) {
  std::vector<std::vector<std::string>> out(1);
  for (auto& tok : tokenize_report(text)) {
    if (tok == ".") {
      if (!out.back().empty()) out.emplace_back();
    } else {
      out.back().push_back(std::move(tok));
    }
  }
  if (out.back().empty()) out.pop_back();
  return out;
}

}  // namespace

RuleSet parse_rules(std::string_view text) {
  RuleSet rs;
  std::vector<Phrase> global_neg;
  std::size_t global_window = kDefaultNegationWindow;
  // Per-block overrides, resolved once the file is read.
  std::vector<std::vector<Phrase>> block_neg;
  std::vector<std::optional<std::size_t>> block_window;

  std::istringstream in{std::string(text)};
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    auto words = split_ws(line);
    if (words.empty()) continue;
    const std::string directive = words.front();
    words.erase(words.begin());
    std::string rest;
    for (auto& w : words) rest += (rest.empty() ? "" : " ") + w;

    if (directive == "OBS") {
      if (rest.empty()) throw FormatError("OBS needs an observation name", lineno);
      auto idx = observation_index(rest);
      if (!idx) throw FormatError("unknown observation '" + rest + "'", lineno);
      if (*idx == kNoFindingIndex) {
        throw FormatError("'" + rest + "' is derived from the other observations and takes no rules", lineno);
      }
      for (const auto& r : rs.rules) {
        if (r.index == *idx) throw FormatError("observation '" + rest + "' defined twice", lineno);
      }
      rs.rules.push_back(ObservationRule{*idx, {}, {}, 0});
      block_neg.emplace_back();
      block_window.emplace_back();
    } else if (directive == "PHRASE" || directive == "NEG") {
      if (words.empty()) throw FormatError(directive + " needs at least one token", lineno);
      Phrase p = tokenize_report(rest);
      if (p.empty()) throw FormatError(directive + " needs at least one token", lineno);
      if (directive == "PHRASE") {
        if (rs.rules.empty()) throw FormatError("PHRASE before any OBS", lineno);
        add_unique(rs.rules.back().phrases, std::move(p), rs.warnings, "phrase", lineno);
      } else if (rs.rules.empty()) {
        add_unique(global_neg, std::move(p), rs.warnings, "negation cue", lineno);
      } else {
        add_unique(block_neg.back(), std::move(p), rs.warnings, "negation cue", lineno);
      }
    } else if (directive == "WINDOW") {
      std::size_t w = 0;
      auto [ptr, ec] = std::from_chars(rest.data(), rest.data() + rest.size(), w);
      if (words.size() != 1 || ec != std::errc() || ptr != rest.data() + rest.size()) {
        throw FormatError("WINDOW needs one non-negative integer", lineno);
      }
      if (rs.rules.empty()) global_window = w;
      else block_window.back() = w;
    } else {
      throw FormatError("unknown directive '" + directive + "'", lineno);
    }
  }
  if (rs.rules.empty()) throw FormatError("rules file defines no observations");
  for (std::size_t i = 0; i < rs.rules.size(); ++i) {
    auto& r = rs.rules[i];
    if (r.phrases.empty()) {
      throw FormatError("observation '" + std::string(observation_names()[r.index]) +
                        "' has no PHRASE lines");
    }
    r.negations = global_neg;
    for (auto& p : block_neg[i]) {
      if (std::find(r.negations.begin(), r.negations.end(), p) == r.negations.end()) {
        r.negations.push_back(p);
      }
    }
    r.window = block_window[i].value_or(global_window);
  }
  return rs;
}

RuleSet load_rules(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("rules file '" + path.string() + "' does not exist");
  }
  try {
    return parse_rules(read_file(path));
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

ObservationVector label_report(std::string_view text, const RuleSet& rules) {
  ObservationVector out;
  for (const auto& sentence : sentences_of(text)) {
    for (const auto& rule : rules.rules) {
      for (const auto& phrase : rule.phrases) {
        for (std::size_t s = 0; s + phrase.size() <= sentence.size(); ++s) {
          if (!matches_at(sentence, s, phrase)) continue;
          Mention& slot = out[rule.index];
          if (negated(sentence, s, rule)) {
            if (slot == Mention::not_mentioned) slot = Mention::negative;
          } else {
            slot = Mention::positive;
          }
        }
      }
    }
  }
  out.derive_no_finding();
  return out;
}

KeywordDictionary parse_keywords(std::string_view text) {
  KeywordDictionary dict;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    Phrase p = tokenize_report(line);
    if (!p.empty() && std::find(dict.begin(), dict.end(), p) == dict.end()) dict.push_back(std::move(p));
  }
  return dict;
}

KeywordDictionary load_keywords(const std::filesystem::path& path) {
  return parse_keywords(read_file(path));
}

double keywords_accuracy(std::string_view generated, std::string_view reference,
                         const KeywordDictionary& dictionary) {
  if (dictionary.empty()) throw std::invalid_argument("keywords_accuracy: empty keyword dictionary");
  auto present = [&](std::string_view text) {
    const auto toks = tokenize_report(text);
    std::set<std::size_t> found;
    for (std::size_t k = 0; k < dictionary.size(); ++k) {
      for (std::size_t s = 0; s + dictionary[k].size() <= toks.size(); ++s) {
        if (matches_at(toks, s, dictionary[k])) {
          found.insert(k);
          break;
        }
      }
    }
    return found;
  };
  const auto ref = present(reference);
  const auto gen = present(generated);
  if (ref.empty()) return gen.empty() ? 1.0 : 0.0;
  std::size_t hit = 0;
  for (auto k : ref) hit += gen.count(k);
  return static_cast<double>(hit) / static_cast<double>(ref.size());
}

}  // namespace radgen
