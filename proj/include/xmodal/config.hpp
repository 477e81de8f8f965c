#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace xmodal {

// Flat `key = value` configuration. Blank lines and lines starting with '#' are ignored.
// Typed getters record which keys were read so leftovers can be reported as unknown.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  static KeyValueConfig parse(std::string_view text);
  static KeyValueConfig load(const std::filesystem::path& path);

  // Applies a single `key=value` override (as given to --set).
  void set_override(std::string_view assignment);
  void set(std::string key, std::string value) { values_[std::move(key)] = std::move(value); }

  bool contains(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback);
  double get_double(const std::string& key, double fallback);
  std::uint64_t get_uint(const std::string& key, std::uint64_t fallback);
  bool get_bool(const std::string& key, bool fallback);
  std::vector<std::size_t> get_size_list(const std::string& key, const std::vector<std::size_t>& fallback);

  // Throws ConfigError for the first key no getter asked for.
  void require_all_consumed() const;

  // Serialized form, keys sorted.
  std::string to_string() const;

 private:
  const std::string* lookup(const std::string& key);

  std::map<std::string, std::string> values_;
  std::set<std::string> consumed_;
};

// Formatting helpers shared by the config writers: shortest round-trip decimal.
std::string format_double(double value);
std::string format_size_list(const std::vector<std::size_t>& values);

}  // namespace xmodal
