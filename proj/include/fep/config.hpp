#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "fep/common.hpp"
#include "fep/csv.hpp"

namespace fep {

// Key/value text with optional [sections]. Wraps the Boost INI parser and
// adds typed getters whose errors name the offending field.
class KeyValueFile {
 public:
  KeyValueFile() = default;

  static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>") {
    KeyValueFile kv;
    kv.origin_ = origin;
    std::istringstream in(text);
    try {
      boost::property_tree::ini_parser::read_ini(in, kv.tree_);
    } catch (const boost::property_tree::ini_parser_error& e) {
      throw ConfigError(origin + ":" + std::to_string(e.line()) + ": " + e.message());
    }
    return kv;
  }

  static KeyValueFile load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse(ss.str(), path.string());
  }

  const std::string& origin() const { return origin_; }

  bool has(const std::string& key) const { return tree_.get_optional<std::string>(path(key)).has_value(); }

  bool has_section(const std::string& section) const {
    auto child = tree_.get_child_optional(path(section));
    return child && !child->empty();
  }

  std::optional<std::string> get_string(const std::string& key) const {
    auto v = tree_.get_optional<std::string>(path(key));
    if (!v) return std::nullopt;
    return trim(*v);
  }

  std::string require_string(const std::string& key) const {
    auto v = get_string(key);
    if (!v || v->empty()) throw ConfigError(origin_ + ": missing required field '" + key + "'");
    return *v;
  }

  template <class T>
  std::optional<T> get(const std::string& key) const {
    auto s = get_string(key);
    if (!s) return std::nullopt;
    auto v = csv::parse_number<T>(*s);
    if (!v) throw ConfigError(origin_ + ": field '" + key + "': cannot parse '" + *s + "' as a number");
    return v;
  }

  template <class T>
  T get_or(const std::string& key, T fallback) const {
    auto v = get<T>(key);
    return v ? *v : fallback;
  }

  template <class T>
  std::optional<std::vector<T>> get_list(const std::string& key) const {
    auto s = get_string(key);
    if (!s) return std::nullopt;
    std::vector<T> out;
    std::stringstream ss(*s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      auto v = csv::parse_number<T>(item);
      if (!v) throw ConfigError(origin_ + ": field '" + key + "': cannot parse list item '" + trim(item) + "'");
      out.push_back(*v);
    }
    return out;
  }

  // Fails on any key outside `allowed` (entries are "section.key").
  void reject_unknown(const std::set<std::string>& allowed) const {
    for (const auto& [name, node] : tree_) {
      if (node.empty()) {
        if (!allowed.count(name)) throw ConfigError(origin_ + ": unknown field '" + name + "'");
        continue;
      }
      for (const auto& [key, leaf] : node) {
        std::string full = name + "." + key;
        if (!allowed.count(full)) throw ConfigError(origin_ + ": unknown field '" + full + "'");
      }
    }
  }

 private:
  static boost::property_tree::ptree::path_type path(const std::string& key) {
    return boost::property_tree::ptree::path_type(key, '.');
  }

  static std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t");
    if (b == std::string::npos) return {};
    auto e = s.find_last_not_of(" \t");
    return s.substr(b, e - b + 1);
  }

  boost::property_tree::ptree tree_;
  std::string origin_;
};

}  // namespace fep
