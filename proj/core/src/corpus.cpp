#include "radgen/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

#include <json.hpp>

#include "radgen/error.hpp"
#include "radgen/io.hpp"

namespace radgen {

using nlohmann::json;

bool Corpus::has_tags() const {
  return std::any_of(examples.begin(), examples.end(),
                     [](const Example& e) { return e.tags.has_value(); });
}

// ---- tokenizer ---------------------------------------------------------------

namespace {

bool is_split_punct(char c) {
  switch (c) {
    case '.': case ',': case ':': case ';': case '(': case ')': case '/': case '-':
      return true;
    default:
      return false;
  }
}

bool is_deid_placeholder(const std::string& word) {
  return word.size() >= 2 && std::all_of(word.begin(), word.end(), [](char c) { return c == 'x'; });
}

}  // namespace

std::vector<std::string> tokenize_report(std::string_view text) {
  std::vector<std::string> out;
  std::string word;
  auto flush = [&] {
    if (word.empty()) return;
    out.push_back(is_deid_placeholder(word) ? std::string("xxxx") : word);
    word.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (is_split_punct(ch)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      word.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

// ---- vocab -------------------------------------------------------------------

namespace {
const std::array<std::string, kNumReserved> kReservedTokens = {"<pad>", "<start>", "<end>", "<unk>"};
}

Vocab::Vocab() : Vocab({}, {}) {}

Vocab::Vocab(std::vector<std::string> words, std::vector<std::uint64_t> freqs) {
  if (words.size() != freqs.size()) throw std::invalid_argument("Vocab: words/freqs length mismatch");
  tokens_.assign(kReservedTokens.begin(), kReservedTokens.end());
  freqs_.assign(kNumReserved, 0);
  for (std::size_t i = 0; i < words.size(); ++i) {
    const auto id = static_cast<TokenId>(tokens_.size());
    if (!index_.emplace(words[i], id).second) {
      throw std::invalid_argument("Vocab: duplicate token '" + words[i] + "'");
    }
    tokens_.push_back(std::move(words[i]));
    freqs_.push_back(freqs[i]);
  }
}

TokenId Vocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnkId : it->second;
}

bool Vocab::contains(std::string_view token) const { return index_.count(std::string(token)) > 0; }

const std::string& Vocab::token(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " outside vocab of " +
                            std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::string Vocab::serialize() const {
  std::string out;
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) {
    out += tokens_[i];
    out += '\t';
    out += std::to_string(freqs_[i]);
    out += '\n';
  }
  return out;
}

Vocab Vocab::deserialize(std::string_view text) {
  std::vector<std::string> words;
  std::vector<std::uint64_t> freqs;
  std::istringstream in{std::string(text)};
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.rfind('\t');
    if (tab == std::string::npos) throw FormatError("vocab entry without frequency", lineno);
    words.push_back(line.substr(0, tab));
    freqs.push_back(std::stoull(line.substr(tab + 1)));
  }
  return Vocab(std::move(words), std::move(freqs));
}

Vocab build_vocab(const Corpus& corpus, std::uint64_t min_freq) {
  if (corpus.examples.empty()) throw std::invalid_argument("build_vocab: empty corpus");
  std::map<std::string, std::uint64_t> counts;
  for (const auto& ex : corpus.examples) {
    for (auto& tok : tokenize_report(ex.report)) ++counts[tok];
  }
  std::vector<std::pair<std::string, std::uint64_t>> kept;
  for (auto& [tok, n] : counts) {
    if (n >= min_freq) kept.emplace_back(tok, n);
  }
  std::stable_sort(kept.begin(), kept.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> words;
  std::vector<std::uint64_t> freqs;
  for (auto& [tok, n] : kept) {
    words.push_back(tok);
    freqs.push_back(n);
  }
  return Vocab(std::move(words), std::move(freqs));
}

std::vector<TokenId> encode_tokens(std::span<const std::string> tokens, const Vocab& vocab,
                                   std::size_t max_len) {
  if (max_len < 2) throw std::invalid_argument("encode_tokens: max_len must be >= 2");
  std::vector<TokenId> ids;
  ids.reserve(std::min(tokens.size() + 2, max_len));
  ids.push_back(kStartId);
  for (const auto& tok : tokens) {
    if (ids.size() + 1 >= max_len) break;
    ids.push_back(vocab.id(tok));
  }
  ids.push_back(kEndId);
  return ids;
}

std::vector<TokenId> pad_to(std::vector<TokenId> ids, std::size_t length) {
  if (ids.size() < length) ids.resize(length, kPadId);
  return ids;
}

std::string decode_tokens(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (TokenId id : ids) {
    if (id == kEndId) break;
    if (id == kPadId || id == kStartId) continue;
    if (!out.empty()) out += ' ';
    out += id == kUnkId ? std::string(kUnkRendering) : vocab.token(id);
  }
  return out;
}

// ---- JSONL dataset -----------------------------------------------------------

namespace {

Example example_from_json(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("record is not a JSON object");
  auto req = [&](const char* field) -> std::string {
    auto it = j.find(field);
    if (it == j.end()) throw std::invalid_argument(std::string("missing required field \"") + field + "\"");
    if (!it->is_string()) throw std::invalid_argument(std::string("field \"") + field + "\" must be a string");
    return it->get<std::string>();
  };
  Example ex;
  ex.id = req("id");
  ex.image = req("image");
  ex.report = req("report");
  if (ex.id.empty()) throw std::invalid_argument("field \"id\" is empty");
  if (tokenize_report(ex.report).empty()) throw std::invalid_argument("field \"report\" is empty");
  if (auto it = j.find("tags"); it != j.end()) {
    if (!it->is_array()) throw std::invalid_argument("field \"tags\" must be an array of strings");
    std::vector<std::string> tags;
    for (const auto& t : *it) {
      if (!t.is_string()) throw std::invalid_argument("field \"tags\" must be an array of strings");
      tags.push_back(t.get<std::string>());
    }
    ex.tags = std::move(tags);
  }
  if (auto it = j.find("observations"); it != j.end()) {
    if (!it->is_object()) throw std::invalid_argument("field \"observations\" must be an object");
    ObservationVector obs;
    for (auto& [name, value] : it->items()) {
      if (!observation_index(name)) throw std::invalid_argument("unknown observation \"" + name + "\"");
      if (!value.is_string()) throw std::invalid_argument("observation \"" + name + "\" must be a string");
      obs.set(name, parse_mention(value.get<std::string>()));
    }
    ex.observations = obs;
  }
  return ex;
}

}  // namespace

std::string example_to_json(const Example& ex) {
  json j;
  j["id"] = ex.id;
  j["image"] = ex.image;
  j["report"] = ex.report;
  if (ex.tags) j["tags"] = *ex.tags;
  if (ex.observations) {
    json obs = json::object();
    for (std::size_t i = 0; i < kNumObservations; ++i) {
      const Mention m = (*ex.observations)[i];
      if (m != Mention::not_mentioned) obs[std::string(observation_names()[i])] = to_string(m);
    }
    j["observations"] = obs;
  }
  return j.dump();
}

Corpus parse_dataset(std::string_view text, std::filesystem::path base_dir) {
  Corpus corpus;
  corpus.base_dir = std::move(base_dir);
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  long lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Example ex;
    try {
      ex = example_from_json(json::parse(line));
    } catch (const json::exception& e) {
      throw FormatError(std::string("malformed JSON: ") + e.what(), lineno);
    } catch (const std::invalid_argument& e) {
      throw FormatError(e.what(), lineno);
    }
    if (!seen.insert(ex.id).second) throw FormatError("duplicate id \"" + ex.id + "\"", lineno);
    corpus.examples.push_back(std::move(ex));
  }
  return corpus;
}

Corpus load_dataset(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("corpus file '" + path.string() + "' does not exist");
  }
  try {
    return parse_dataset(read_file(path), path.parent_path());
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

std::string serialize_dataset(const Corpus& corpus) {
  std::string out;
  for (const auto& ex : corpus.examples) {
    out += example_to_json(ex);
    out += '\n';
  }
  return out;
}

// ---- images ------------------------------------------------------------------

GrayImage parse_pgm(std::string_view bytes) {
  std::size_t pos = 0;
  auto skip_space_and_comments = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> std::size_t {
    skip_space_and_comments();
    std::size_t v = 0, digits = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos++] - '0');
      ++digits;
    }
    if (digits == 0) throw FormatError("PGM: malformed header");
    return v;
  };
  if (bytes.substr(0, 2) != "P5") throw FormatError("PGM: expected binary 'P5' magic");
  pos = 2;
  GrayImage img;
  img.width = read_int();
  img.height = read_int();
  const std::size_t maxval = read_int();
  if (img.width == 0 || img.height == 0) throw FormatError("PGM: zero dimension");
  if (maxval == 0 || maxval > 255) throw FormatError("PGM: only 8-bit images are supported");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("PGM: malformed header");
  }
  ++pos;
  const std::size_t n = img.width * img.height;
  if (bytes.size() - pos < n) throw FormatError("PGM: truncated pixel data");
  img.pixels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    img.pixels[i] = static_cast<double>(static_cast<unsigned char>(bytes[pos + i])) /
                    static_cast<double>(maxval);
  }
  return img;
}

GrayImage read_pgm(const std::filesystem::path& path) { return parse_pgm(read_file(path)); }

std::string encode_pgm(const GrayImage& image) {
  std::string out = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  for (double p : image.pixels) {
    const double c = std::clamp(p, 0.0, 1.0);
    out.push_back(static_cast<char>(static_cast<unsigned char>(c * 255.0 + 0.5)));
  }
  return out;
}

FeatureRecord parse_features(std::string_view bytes) {
  ByteReader r(bytes);
  if (r.take(4) != "RGFT") throw FormatError("feature file: expected 'RGFT' magic");
  const std::uint32_t n = r.u32();
  FeatureRecord rec;
  rec.values.resize(n);
  for (auto& v : rec.values) v = r.f32();
  if (r.remaining() != 0) throw FormatError("feature file: trailing bytes after payload");
  return rec;
}

FeatureRecord read_features(const std::filesystem::path& path) {
  return parse_features(read_file(path));
}

std::string encode_features(const FeatureRecord& record) {
  std::string out = "RGFT";
  put_u32(out, static_cast<std::uint32_t>(record.values.size()));
  for (float v : record.values) put_f32(out, v);
  return out;
}

ImageInput load_image_input(const Corpus& corpus, const Example& example) {
  const auto path = corpus.resolve(example);
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("example '" + example.id + "': image file '" + path.string() +
                             "' not found");
  }
  std::string bytes = read_file(path);
  try {
    if (bytes.starts_with("RGFT")) return parse_features(bytes);
    if (bytes.starts_with("P5")) return parse_pgm(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
  throw FormatError(path.string() + ": neither a P5 PGM image nor an RGFT feature file");
}

}  // namespace radgen
