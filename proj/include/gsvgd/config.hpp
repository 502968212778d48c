#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace gsvgd {

// Parse or lookup failure, anchored to a config line when one applies.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(int line, const std::string &message)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + message
                                    : message),
        line(line) {}
  int line;
};

// Key-value config with nested sections:
//   [experiment]
//   name = gaussian-grid
//   [experiment.engine]
//   iterations = 500
// Keys are addressed as "section.key". Repeated keys form a list. Comments
// start with '#' or ';'.
class ConfigFile {
 public:
  struct Entry {
    std::string value;
    int line;
  };

  static ConfigFile parse_string(const std::string &text) {
    ConfigFile cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int lineno = 0;
    while (std::getline(in, raw)) {
      ++lineno;
      std::string line = strip(raw);
      if (line.empty() || line[0] == '#' || line[0] == ';') continue;
      if (line.front() == '[') {
        if (line.back() != ']')
          throw ConfigError(lineno, "unterminated section header");
        section = strip(line.substr(1, line.size() - 2));
        if (section.empty()) throw ConfigError(lineno, "empty section name");
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw ConfigError(lineno, "expected 'key = value'");
      const std::string key = strip(line.substr(0, eq));
      const std::string value = strip(line.substr(eq + 1));
      if (key.empty()) throw ConfigError(lineno, "empty key");
      const std::string full = section.empty() ? key : section + "." + key;
      cfg.entries_[full].push_back({value, lineno});
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_string(ss.str());
  }

  bool has(const std::string &key) const { return entries_.count(key) > 0; }

  std::string get_string(const std::string &key, const std::string &fallback) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second.back().value;
  }

  std::string require_string(const std::string &key) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError(0, "missing required key '" + key + "'");
    return it->second.back().value;
  }

  double get_double(const std::string &key, double fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_double(it->second.back());
  }

  long get_long(const std::string &key, long fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    return parse_long(it->second.back());
  }

  std::uint64_t get_u64(const std::string &key, std::uint64_t fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto &e = it->second.back();
    try {
      return std::stoull(e.value);
    } catch (...) {
      throw ConfigError(e.line, "expected unsigned integer, got '" + e.value + "'");
    }
  }

  // all values of a repeated key, in file order
  std::vector<std::string> get_list(const std::string &key) const {
    std::vector<std::string> out;
    const auto it = entries_.find(key);
    if (it == entries_.end()) return out;
    for (const auto &e : it->second) out.push_back(e.value);
    return out;
  }

  // comma-separated numbers, e.g. "10, 20, 50"
  std::vector<long> get_long_csv(const std::string &key, std::vector<long> fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto &e = it->second.back();
    std::vector<long> out;
    std::istringstream ss(e.value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        out.push_back(std::stol(strip(tok)));
      } catch (...) {
        throw ConfigError(e.line, "expected integer list, got '" + e.value + "'");
      }
    }
    if (out.empty()) throw ConfigError(e.line, "empty list for '" + key + "'");
    return out;
  }

  std::vector<double> get_double_csv(const std::string &key,
                                     std::vector<double> fallback) const {
    const auto it = entries_.find(key);
    if (it == entries_.end()) return fallback;
    const auto &e = it->second.back();
    std::vector<double> out;
    std::istringstream ss(e.value);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
      try {
        out.push_back(std::stod(strip(tok)));
      } catch (...) {
        throw ConfigError(e.line, "expected number list, got '" + e.value + "'");
      }
    }
    if (out.empty()) throw ConfigError(e.line, "empty list for '" + key + "'");
    return out;
  }

  int line_of(const std::string &key) const {
    const auto it = entries_.find(key);
    return it == entries_.end() ? 0 : it->second.back().line;
  }

  const std::map<std::string, std::vector<Entry>> &entries() const { return entries_; }

 private:
  static std::string strip(const std::string &s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  double parse_double(const Entry &e) const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(e.line, "expected number, got '" + e.value + "'");
    }
  }

  long parse_long(const Entry &e) const {
    try {
      std::size_t pos = 0;
      const long v = std::stol(e.value, &pos);
      if (pos != e.value.size()) throw std::invalid_argument("");
      return v;
    } catch (...) {
      throw ConfigError(e.line, "expected integer, got '" + e.value + "'");
    }
  }

  std::map<std::string, std::vector<Entry>> entries_;
};

}  // namespace gsvgd
