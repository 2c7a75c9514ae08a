#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace semiseg {

/// Documentation row for one recognised configuration key.
struct ConfigKeyDoc {
  std::string key;
  std::string default_value;
  std::string description;
};

/// Flat key/value configuration read from a TOML subset.
///
/// Supported syntax: `key = value` lines, `[section]` headers (keys become
/// `section.key`), `#` comments, quoted strings, booleans, numbers and
/// single-line arrays `[a, b, c]`. Nested tables and multi-line values are not
/// supported.
class KeyValueConfig {
 public:
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<string>");
  static KeyValueConfig load(const std::filesystem::path& path);

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;
  std::vector<std::int64_t> get_int_list(const std::string& key,
                                         std::vector<std::int64_t> fallback) const;
  std::vector<bool> get_bool_list(const std::string& key, std::vector<bool> fallback) const;

  /// Throws ConfigError naming every key not listed in `schema`.
  void check_known(const std::vector<ConfigKeyDoc>& schema) const;

  std::vector<std::string> keys() const;
  /// Canonical `key = value` text, sorted by key.
  std::string canonical() const;

 private:
  struct Entry {
    std::string scalar;
    std::vector<std::string> items;
    bool is_list = false;
  };
  const Entry* find(const std::string& key) const;
  [[noreturn]] void bad_value(const std::string& key, const std::string& expected) const;

  std::map<std::string, Entry> entries_;
  std::string origin_;
};

/// 64-bit FNV-1a, stable across platforms; used for config fingerprints.
std::uint64_t fnv1a64(const std::string& text);

}  // namespace semiseg
