#pragma once

// Flat key-value configuration files.
//
//   # comment
//   key = value
//
// Keys are case-sensitive identifiers; a key may appear once. Lists are
// separated by commas or whitespace, groups of a list by semicolons.

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "epinv/errors.hpp"

namespace epinv::io {

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is) {
    Config c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ParseError("config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      if (key.empty()) throw ParseError("config line " + std::to_string(lineno) + ": empty key");
      if (!c.values_.emplace(key, value).second) {
        throw ParseError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
    }
    return c;
  }

  static Config parse_string(const std::string& text) {
    std::istringstream is(text);
    return parse(is);
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require_string(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ParseError("config: missing required key '" + key + "'");
    return it->second;
  }

  double get_double(const std::string& key, double fallback) const {
    return has(key) ? to_double(key, require_string(key)) : fallback;
  }

  long get_long(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string v = require_string(key);
    std::size_t pos = 0;
    long out = 0;
    try {
      out = std::stol(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty()) throw ParseError("config: '" + key + "' is not an integer: " + v);
    return out;
  }

  std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string v = require_string(key);
    std::size_t pos = 0;
    std::uint64_t out = 0;
    try {
      out = std::stoull(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty() || v[0] == '-') {
      throw ParseError("config: '" + key + "' is not an unsigned integer: " + v);
    }
    return out;
  }

  bool get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = require_string(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ParseError("config: '" + key + "' is not a boolean: " + v);
  }

  std::vector<double> get_doubles(const std::string& key) const {
    std::vector<double> out;
    for (const auto& tok : split_list(get_string(key, ""))) out.push_back(to_double(key, tok));
    return out;
  }

  /// Semicolon-separated groups of numbers, e.g. "0.05 0.02 0.035 1e-5; ...".
  std::vector<std::vector<double>> get_groups(const std::string& key) const {
    std::vector<std::vector<double>> out;
    std::stringstream ss(get_string(key, ""));
    std::string group;
    while (std::getline(ss, group, ';')) {
      if (trim(group).empty()) continue;
      std::vector<double> g;
      for (const auto& tok : split_list(group)) g.push_back(to_double(key, tok));
      out.push_back(std::move(g));
    }
    return out;
  }

  /// Throws ParseError naming the first key outside `allowed`.
  void check_keys(const std::set<std::string>& allowed) const {
    for (const auto& [k, v] : values_) {
      if (!allowed.count(k)) throw ParseError("config: unknown key '" + k + "'");
    }
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s) {
      if (ch == ',' || ch == ' ' || ch == '\t') {
        if (!cur.empty()) out.push_back(cur);
        cur.clear();
      } else {
        cur += ch;
      }
    }
    if (!cur.empty()) out.push_back(cur);
    return out;
  }

  static double to_double(const std::string& key, const std::string& v) {
    std::size_t pos = 0;
    double out = 0.0;
    try {
      out = std::stod(v, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    if (pos != v.size() || v.empty()) throw ParseError("config: '" + key + "' is not a number: " + v);
    return out;
  }

  std::map<std::string, std::string> values_;
};

inline Config read_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ParseError("cannot open config file " + path);
  return Config::parse(is);
}

}  // namespace epinv::io
