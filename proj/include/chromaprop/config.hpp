#pragma once

// Flat `key = value` text configs. '#' starts a comment; blank lines are
// ignored. Every key must be consumed, so typos fail loudly.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace chromaprop {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace detail

class Config {
 public:
  Config() = default;

  static Config parse(std::istream& is, const std::string& origin = "config") {
    Config c;
    c.origin_ = origin;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto text = detail::trim(line);
      if (text.empty()) continue;
      const auto eq = text.find('=');
      const std::string where = origin + ":" + std::to_string(lineno);
      if (eq == std::string::npos) throw ConfigError(where + ": expected `key = value`");
      auto key = detail::trim(std::string_view(text).substr(0, eq));
      auto value = detail::trim(std::string_view(text).substr(eq + 1));
      if (key.empty()) throw ConfigError(where + ": empty key");
      if (c.values_.count(key)) throw ConfigError(where + ": duplicate key " + key);
      c.values_[key] = value;
    }
    return c;
  }

  static Config parse_string(const std::string& text, const std::string& origin = "config") {
    std::istringstream is(text);
    return parse(is, origin);
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config " + path.string());
    return parse(is, path.string());
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  std::string get(const std::string& key, const std::string& fallback) const {
    used_.insert(key);
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    used_.insert(key);
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError(origin_ + ": missing key " + key);
    return it->second;
  }

  template <class T>
  T get_as(const std::string& key, T fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    return convert<T>(key, require(key));
  }

  template <class T>
  T require_as(const std::string& key) const {
    return convert<T>(key, require(key));
  }

  /// Comma separated list, e.g. `warp_distances = 1, 2`.
  template <class T>
  std::vector<T> get_list(const std::string& key, std::vector<T> fallback) const {
    if (!has(key)) {
      used_.insert(key);
      return fallback;
    }
    std::vector<T> out;
    std::stringstream ss(require(key));
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(convert<T>(key, detail::trim(item)));
    return out;
  }

  /// Keys present in the file but never read.
  std::vector<std::string> unused() const {
    std::vector<std::string> out;
    for (const auto& [k, v] : values_)
      if (!used_.count(k)) out.push_back(k);
    return out;
  }

  void reject_unused() const {
    const auto u = unused();
    if (!u.empty()) throw ConfigError(origin_ + ": unknown key " + u.front());
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  template <class T>
  T convert(const std::string& key, const std::string& text) const {
    const std::string bad = origin_ + ": bad value for " + key + ": '" + text + "'";
    if constexpr (std::is_same_v<T, std::string>) {
      return text;
    } else if constexpr (std::is_same_v<T, bool>) {
      if (text == "true" || text == "1" || text == "yes") return true;
      if (text == "false" || text == "0" || text == "no") return false;
      throw ConfigError(bad);
    } else {
      T v{};
      const auto* end = text.data() + text.size();
      const auto [ptr, ec] = std::from_chars(text.data(), end, v);
      if (ec != std::errc() || ptr != end) throw ConfigError(bad);
      return v;
    }
  }

  std::string origin_ = "config";
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
};

}  // namespace chromaprop
