#pragma once

#include <compare>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fep {

inline constexpr std::string_view kVersion = "1.0.0";

// Error families map onto the CLI exit codes (2, 3, 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class InvariantError : public Error {
 public:
  using Error::Error;
};

using StudentId = std::string;

enum class Outcome : std::uint8_t { Failure = 0, Success = 1 };

inline std::string_view to_string(Outcome o) {
  return o == Outcome::Success ? "success" : "failure";
}

// Identifies a data source: the single primary source or the i-th additional one.
struct SourceTag {
  enum class Kind : std::uint8_t { Primary, Additional };

  Kind kind = Kind::Primary;
  int index = 0;

  static constexpr SourceTag primary() { return {Kind::Primary, 0}; }
  static constexpr SourceTag additional(int i) { return {Kind::Additional, i}; }

  bool is_primary() const { return kind == Kind::Primary; }

  auto operator<=>(const SourceTag&) const = default;
};

inline std::string to_string(SourceTag tag) {
  return tag.is_primary() ? std::string("primary")
                          : "additional" + std::to_string(tag.index);
}

inline SourceTag parse_source_tag(std::string_view s) {
  if (s == "primary") return SourceTag::primary();
  constexpr std::string_view prefix = "additional";
  if (s.substr(0, prefix.size()) == prefix && s.size() > prefix.size()) {
    int index = 0;
    for (char c : s.substr(prefix.size())) {
      if (c < '0' || c > '9') throw DataError("bad source tag '" + std::string(s) + "'");
      index = index * 10 + (c - '0');
    }
    return SourceTag::additional(index);
  }
  throw DataError("bad source tag '" + std::string(s) + "'");
}

// Feature cells that could not be computed carry this marker; the learner
// routes it along each split's default direction.
inline constexpr double kMissing = std::numeric_limits<double>::quiet_NaN();

inline bool is_missing(double v) { return v != v; }

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace fep
