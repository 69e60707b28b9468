#pragma once

#include <map>
#include <string>
#include <vector>

#include "canopyseg/error.hpp"

namespace canopyseg {

// Plain-text key=value configuration with [section] headers. '#' and ';'
// start comments. One file drives the whole pipeline.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& section, const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& section, const std::string& key, std::int64_t fallback) const;
  std::uint64_t get_u64(const std::string& section, const std::string& key, std::uint64_t fallback) const;
  bool get_bool(const std::string& section, const std::string& key, bool fallback) const;
  // Comma-separated doubles.
  std::vector<double> get_list(const std::string& section, const std::string& key,
                               const std::vector<double>& fallback) const;

  void set(const std::string& section, const std::string& key, const std::string& value);

  const std::map<std::string, std::map<std::string, std::string>>& sections() const { return sections_; }
  std::string to_string() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> sections_;
};

}  // namespace canopyseg
