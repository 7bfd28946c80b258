#pragma once

// Plain `key = value` config files. `#` starts a comment; blank lines are
// ignored; later keys override earlier ones. Lookups are typed and every key
// must be claimed by the consumer, so typos surface as errors.

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "guing/core.hpp"

namespace guing {

class KvConfig {
 public:
  static KvConfig parse(std::string_view text, const std::string& origin = "<config>") {
    KvConfig c;
    c.origin_ = origin;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    for (std::string line; std::getline(in, line);) {
      ++line_no;
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto t = trim(line);
      if (t.empty()) continue;
      const auto eq = t.find('=');
      if (eq == std::string::npos)
        throw Error(Errc::ParseError, origin + ":" + std::to_string(line_no) + ": expected key = value");
      const auto key = trim(t.substr(0, eq));
      if (key.empty()) throw Error(Errc::ParseError, origin + ":" + std::to_string(line_no) + ": empty key");
      c.values_[std::string(key)] = std::string(trim(t.substr(eq + 1)));
    }
    return c;
  }

  static KvConfig load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(Errc::IoError, "cannot open config " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    KvConfig c = parse(ss.str(), path.string());
    c.base_dir_ = path.parent_path();
    return c;
  }

  bool has(const std::string& key) const { return values_.contains(key); }

  std::string str(const std::string& key, const std::string& fallback) const {
    claimed_.insert(key);
    auto it = values_.find(key);
    return it == values_.end() ? fallback : it->second;
  }

  std::string require(const std::string& key) const {
    claimed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) throw Error(Errc::ParseError, origin_ + ": missing key '" + key + "'");
    return it->second;
  }

  // Relative paths resolve against the config file's directory.
  std::filesystem::path path(const std::string& key) const {
    std::filesystem::path p = require(key);
    return p.is_absolute() || base_dir_.empty() ? p : base_dir_ / p;
  }

  template <typename T>
  T num(const std::string& key, T fallback) const {
    claimed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    return to_num<T>(key, it->second);
  }

  std::vector<std::size_t> sizes(const std::string& key, std::vector<std::size_t> fallback) const {
    claimed_.insert(key);
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<std::size_t> out;
    std::string item;
    std::istringstream in(it->second);
    while (std::getline(in, item, ',')) out.push_back(to_num<std::size_t>(key, std::string(trim(item))));
    if (out.empty()) throw Error(Errc::ParseError, origin_ + ": empty list for '" + key + "'");
    return out;
  }

  // Throws on keys nobody asked for.
  void reject_unclaimed() const {
    for (const auto& [k, v] : values_)
      if (!claimed_.contains(k)) throw Error(Errc::ParseError, origin_ + ": unknown key '" + k + "'");
  }

 private:
  static std::string_view trim(std::string_view s) {
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
    while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
    return s;
  }

  template <typename T>
  T to_num(const std::string& key, const std::string& v) const {
    T out{};
    const auto* end = v.data() + v.size();
    auto [p, ec] = std::from_chars(v.data(), end, out);
    if (ec != std::errc{} || p != end)
      throw Error(Errc::ParseError, origin_ + ": bad value '" + v + "' for '" + key + "'");
    return out;
  }

  std::string origin_;
  std::filesystem::path base_dir_;
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> claimed_;
};

}  // namespace guing
