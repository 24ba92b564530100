#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

#include "radgen/observations.hpp"
#include "radgen/tensor.hpp"

namespace radgen {

// One image/report pair. `report` is the generation target (findings and
// impression already concatenated by data preparation).
struct Example {
  std::string id;
  std::string image;  // path, relative to the corpus file's directory
  std::string report;
  std::optional<std::vector<std::string>> tags;
  std::optional<ObservationVector> observations;
};

struct Corpus {
  std::filesystem::path base_dir;
  std::vector<Example> examples;

  std::size_t size() const { return examples.size(); }
  bool has_tags() const;
  std::filesystem::path resolve(const Example& ex) const { return base_dir / ex.image; }
};

// Lowercases, isolates . , : ; ( ) / - as their own tokens, splits on
// whitespace and maps de-identification runs (xx, XXXX, ...) to "xxxx".
std::vector<std::string> tokenize_report(std::string_view text);

inline constexpr TokenId kPadId = 0;
inline constexpr TokenId kStartId = 1;
inline constexpr TokenId kEndId = 2;
inline constexpr TokenId kUnkId = 3;
inline constexpr std::size_t kNumReserved = 4;
inline constexpr std::string_view kUnkRendering = "xxxx-unk";

class Vocab {
 public:
  Vocab();
  // Entries after the reserved ids, in id order, with training frequencies.
  Vocab(std::vector<std::string> words, std::vector<std::uint64_t> freqs);

  std::size_t size() const { return tokens_.size(); }
  TokenId id(std::string_view token) const;  // unk when absent
  bool contains(std::string_view token) const;
  const std::string& token(TokenId id) const;
  std::uint64_t frequency(TokenId id) const { return freqs_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::vector<std::uint64_t>& frequencies() const { return freqs_; }

  // Canonical text form: one "token\tfrequency" line per id.
  std::string serialize() const;
  static Vocab deserialize(std::string_view text);

  bool operator==(const Vocab& other) const {
    return tokens_ == other.tokens_ && freqs_ == other.freqs_;
  }

 private:
  std::vector<std::string> tokens_;
  std::vector<std::uint64_t> freqs_;
  std::unordered_map<std::string, TokenId> index_;
};

inline constexpr std::uint64_t kMinTokenFrequency = 3;

// Keeps tokens seen at least min_freq times; ids by descending frequency,
// ties lexicographic.
Vocab build_vocab(const Corpus& corpus, std::uint64_t min_freq = kMinTokenFrequency);

// [start] + ids + [end], truncated to max_len while keeping the end token.
std::vector<TokenId> encode_tokens(std::span<const std::string> tokens, const Vocab& vocab,
                                   std::size_t max_len);
// Pads `ids` with pad to exactly `length` (no-op if already that long).
std::vector<TokenId> pad_to(std::vector<TokenId> ids, std::size_t length);
// Skips pad/start, stops at the first end, joins with single spaces.
std::string decode_tokens(std::span<const TokenId> ids, const Vocab& vocab);

// JSONL: {"id", "image", "report", "tags"?, "observations"?} per line.
Corpus load_dataset(const std::filesystem::path& path);
Corpus parse_dataset(std::string_view text, std::filesystem::path base_dir = {});
std::string serialize_dataset(const Corpus& corpus);
std::string example_to_json(const Example& ex);

// ---- image inputs ----------------------------------------------------------

struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;  // row-major, scaled to [0, 1]
};

struct FeatureRecord {
  std::vector<float> values;
};

using ImageInput = std::variant<GrayImage, FeatureRecord>;

// Binary PGM (P5, maxval <= 255).
GrayImage read_pgm(const std::filesystem::path& path);
GrayImage parse_pgm(std::string_view bytes);
std::string encode_pgm(const GrayImage& image);

// "RGFT", u32 count, count little-endian float32.
FeatureRecord read_features(const std::filesystem::path& path);
FeatureRecord parse_features(std::string_view bytes);
std::string encode_features(const FeatureRecord& record);

// Dispatches on the file's magic bytes. Missing files fail here, at access.
ImageInput load_image_input(const Corpus& corpus, const Example& example);

}  // namespace radgen
