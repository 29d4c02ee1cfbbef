#pragma once
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "kflow/common.hpp"

namespace kflow {

struct ConfigEntry {
  std::string section;  // empty for the preamble
  std::string key;
  std::string value;
};

// Flat key = value text with [section] headers and # comments. Writing is
// canonical (sections in first-appearance order), so parse(write(c)) == c.
class Config {
 public:
  Config() = default;
  static Config parse(std::istream& is);
  static Config parse_string(const std::string& text);
  static Config parse_file(const std::string& path);

  bool has(const std::string& section, const std::string& key) const;
  const std::string& get(const std::string& section, const std::string& key) const;
  std::string get_or(const std::string& section, const std::string& key,
                     const std::string& fallback) const;
  long get_long(const std::string& section, const std::string& key) const;
  long get_long_or(const std::string& section, const std::string& key, long fallback) const;
  double get_double(const std::string& section, const std::string& key) const;
  double get_double_or(const std::string& section, const std::string& key,
                       double fallback) const;
  bool get_bool_or(const std::string& section, const std::string& key, bool fallback) const;
  // comma-separated values, trimmed, empty items dropped
  std::vector<std::string> get_list(const std::string& section, const std::string& key) const;

  // insert or overwrite in place
  void set(const std::string& section, const std::string& key, const std::string& value);
  const std::vector<ConfigEntry>& entries() const { return entries_; }

  void write(std::ostream& os) const;
  std::string to_string() const;
  std::uint64_t hash() const;  // FNV-1a of the canonical text

 private:
  std::vector<ConfigEntry> entries_;
};

std::uint64_t fnv1a(const std::string& text);
std::string hex_u64(std::uint64_t v);  // 16 lowercase hex digits

}  // namespace kflow
