#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace radgen {

inline constexpr std::size_t kNumObservations = 14;
// Index of the derived "No Finding" entry.
inline constexpr std::size_t kNoFindingIndex = 0;

enum class Mention : std::uint8_t { not_mentioned, positive, negative };

std::string_view to_string(Mention m);
Mention parse_mention(std::string_view text);

// Canonical observation names, in canonical order.
const std::array<std::string_view, kNumObservations>& observation_names();
// Case-insensitive lookup by name.
std::optional<std::size_t> observation_index(std::string_view name);

// Tri-state assignment for each of the 14 thoracic observations.
class ObservationVector {
 public:
  ObservationVector() { values_.fill(Mention::not_mentioned); }

  Mention operator[](std::size_t i) const { return values_.at(i); }
  Mention& operator[](std::size_t i) { return values_.at(i); }
  Mention get(std::string_view name) const;
  void set(std::string_view name, Mention m);

  // Sets "No Finding": positive iff at least one other observation is
  // mentioned and none of them is positive; not-mentioned otherwise.
  void derive_no_finding();

  std::vector<std::string> positive_names() const;
  std::vector<double> positive_indicator() const;

  bool operator==(const ObservationVector&) const = default;

 private:
  std::array<Mention, kNumObservations> values_;
};

}  // namespace radgen
