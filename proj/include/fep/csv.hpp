#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "fep/common.hpp"

namespace fep::csv {

// RFC 4180 reader over an in-memory buffer. Quoted fields may contain
// separators, doubled quotes and line breaks; CRLF and LF both end records.
class Reader {
 public:
  explicit Reader(std::string text) : text_(std::move(text)) {
    if (text_.size() >= 3 && text_.compare(0, 3, "\xEF\xBB\xBF") == 0) pos_ = 3;
  }

  static Reader from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return Reader(std::move(ss).str());
  }

  // Reads the next record into `fields`. Returns false at end of input.
  // `record_line` receives the 1-based line where the record started.
  bool next(std::vector<std::string>& fields, std::size_t& record_line) {
    if (pos_ >= text_.size()) return false;
    record_line = line_;
    std::size_t n = 0;
    auto field = [&]() -> std::string& {
      if (n == fields.size()) fields.emplace_back();
      fields[n].clear();
      return fields[n];
    };
    std::string* cur = &field();
    bool in_quotes = false;
    bool was_quoted = false;
    while (pos_ < text_.size()) {
      char c = text_[pos_++];
      if (in_quotes) {
        if (c == '"') {
          if (pos_ < text_.size() && text_[pos_] == '"') {
            cur->push_back('"');
            ++pos_;
          } else {
            in_quotes = false;
          }
        } else {
          if (c == '\n') ++line_;
          cur->push_back(c);
        }
        continue;
      }
      if (c == '"' && cur->empty() && !was_quoted) {
        in_quotes = was_quoted = true;
      } else if (c == ',') {
        ++n;
        cur = &field();
        was_quoted = false;
      } else if (c == '\n') {
        ++line_;
        break;
      } else if (c == '\r') {
        if (pos_ < text_.size() && text_[pos_] == '\n') ++pos_;
        ++line_;
        break;
      } else {
        cur->push_back(c);
      }
    }
    if (in_quotes) throw DataError("unterminated quoted field starting at line " + std::to_string(record_line));
    fields.resize(n + 1);
    return true;
  }

 private:
  std::string text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

inline std::string quote(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << quote(fields[i]);
  }
  out << '\n';
}

// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  if (is_missing(v)) return "NA";
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline std::string format_fixed(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

template <class T>
std::optional<T> parse_number(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) s.remove_suffix(1);
  if (s.empty()) return std::nullopt;
  if (s.front() == '+') s.remove_prefix(1);
  T value{};
  auto res = std::from_chars(s.data(), s.data() + s.size(), value);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) return std::nullopt;
  return value;
}

}  // namespace fep::csv
