#include "semiseg/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

#include "semiseg/error.hpp"

namespace semiseg {

namespace {

std::string trim(std::string_view s) {
  auto begin = s.find_first_not_of(" \t\r\n");
  if (begin == std::string_view::npos) {
    return {};
  }
  auto end = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(begin, end - begin + 1));
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') {
      quoted = !quoted;
    } else if (line[i] == '#' && !quoted) {
      return line.substr(0, i);
    }
  }
  return line;
}

std::string unquote(const std::string& token) {
  if (token.size() >= 2 && token.front() == '"' && token.back() == '"') {
    return token.substr(1, token.size() - 2);
  }
  return token;
}

std::vector<std::string> split_list(const std::string& body) {
  std::vector<std::string> items;
  std::string current;
  bool quoted = false;
  for (char c : body) {
    if (c == '"') {
      quoted = !quoted;
      current.push_back(c);
    } else if (c == ',' && !quoted) {
      items.push_back(unquote(trim(current)));
      current.clear();
    } else {
      current.push_back(c);
    }
  }
  if (!trim(current).empty()) {
    items.push_back(unquote(trim(current)));
  }
  return items;
}

bool parse_double(const std::string& s, double& out) {
  if (s.empty()) {
    return false;
  }
  char* end = nullptr;
  out = std::strtod(s.c_str(), &end);
  return end == s.c_str() + s.size();
}

bool parse_int(const std::string& s, std::int64_t& out) {
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true") {
    out = true;
    return true;
  }
  if (s == "false") {
    out = false;
    return true;
  }
  return false;
}

}  // namespace

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t hash = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    hash ^= c;
    hash *= 0x100000001b3ULL;
  }
  return hash;
}

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto line = trim(strip_comment(raw));
    if (line.empty()) {
      continue;
    }
    const auto where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[' && line.find('=') == std::string::npos) {
      if (line.back() != ']') {
        throw ConfigError(where + ": malformed section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(where + ": expected 'key = value'");
    }
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw ConfigError(where + ": empty key");
    }
    if (!section.empty()) {
      key = section + "." + key;
    }
    Entry entry;
    if (!value.empty() && value.front() == '[') {
      if (value.back() != ']') {
        throw ConfigError(where + ": unterminated array for '" + key + "'");
      }
      entry.is_list = true;
      entry.items = split_list(value.substr(1, value.size() - 2));
    } else {
      entry.scalar = unquote(value);
    }
    cfg.entries_[key] = std::move(entry);
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("cannot open config file " + path.string());
  }
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse(buffer.str(), path.string());
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.contains(key); }

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  auto parsed = parse(key + " = " + value, "<override>");
  entries_[key] = parsed.entries_.at(key);
}

const KeyValueConfig::Entry* KeyValueConfig::find(const std::string& key) const {
  auto it = entries_.find(key);
  return it == entries_.end() ? nullptr : &it->second;
}

void KeyValueConfig::bad_value(const std::string& key, const std::string& expected) const {
  throw ConfigError(origin_ + ": key '" + key + "' must be " + expected);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  if (e->is_list) {
    bad_value(key, "a string");
  }
  return e->scalar;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  double v = 0;
  if (e->is_list || !parse_double(e->scalar, v)) {
    bad_value(key, "a number");
  }
  return v;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  std::int64_t v = 0;
  if (e->is_list || !parse_int(e->scalar, v)) {
    bad_value(key, "an integer");
  }
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  bool v = false;
  if (e->is_list || !parse_bool(e->scalar, v)) {
    bad_value(key, "true or false");
  }
  return v;
}

std::vector<double> KeyValueConfig::get_double_list(const std::string& key,
                                                    std::vector<double> fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  if (!e->is_list) {
    bad_value(key, "an array of numbers");
  }
  std::vector<double> out;
  for (const auto& item : e->items) {
    double v = 0;
    if (!parse_double(item, v)) {
      bad_value(key, "an array of numbers");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<std::int64_t> KeyValueConfig::get_int_list(const std::string& key,
                                                       std::vector<std::int64_t> fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  if (!e->is_list) {
    bad_value(key, "an array of integers");
  }
  std::vector<std::int64_t> out;
  for (const auto& item : e->items) {
    std::int64_t v = 0;
    if (!parse_int(item, v)) {
      bad_value(key, "an array of integers");
    }
    out.push_back(v);
  }
  return out;
}

std::vector<bool> KeyValueConfig::get_bool_list(const std::string& key,
                                                std::vector<bool> fallback) const {
  const auto* e = find(key);
  if (!e) {
    return fallback;
  }
  if (!e->is_list) {
    bad_value(key, "an array of booleans");
  }
  std::vector<bool> out;
  for (const auto& item : e->items) {
    bool v = false;
    if (!parse_bool(item, v)) {
      bad_value(key, "an array of booleans");
    }
    out.push_back(v);
  }
  return out;
}

void KeyValueConfig::check_known(const std::vector<ConfigKeyDoc>& schema) const {
  std::vector<std::string> unknown;
  for (const auto& [key, _] : entries_) {
    const bool known = std::any_of(schema.begin(), schema.end(),
                                   [&](const ConfigKeyDoc& doc) { return doc.key == key; });
    if (!known) {
      unknown.push_back(key);
    }
  }
  if (!unknown.empty()) {
    std::string msg = origin_ + ": unknown configuration keys:";
    for (const auto& k : unknown) {
      msg += " " + k;
    }
    throw ConfigError(msg);
  }
}

std::vector<std::string> KeyValueConfig::keys() const {
  std::vector<std::string> out;
  for (const auto& [key, _] : entries_) {
    out.push_back(key);
  }
  return out;
}

std::string KeyValueConfig::canonical() const {
  std::ostringstream out;
  for (const auto& [key, entry] : entries_) {
    out << key << " = ";
    if (entry.is_list) {
      out << '[';
      for (std::size_t i = 0; i < entry.items.size(); ++i) {
        out << (i ? ", " : "") << entry.items[i];
      }
      out << ']';
    } else {
      out << entry.scalar;
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace semiseg
