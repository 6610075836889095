#pragma once

// Flat key=value configuration. One assignment per line, '#' starts a
// comment, blank lines are skipped, later assignments to a key override
// earlier ones. Values keep their surrounding text verbatim after trimming
// whitespace; typed getters parse on demand and reject trailing garbage.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace lafs {

struct ConfigMap {
  std::vector<std::pair<std::string, std::string>> items;  // insertion order

  bool has(const std::string& key) const;
  void set(const std::string& key, const std::string& value);  // overwrite or append

  std::string get(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  uint64_t get_u64(const std::string& key, uint64_t fallback) const;
  // accepts 1/0/true/false/yes/no/on/off, case-insensitive
  bool get_bool(const std::string& key, bool fallback) const;
};

ConfigMap parse_config_text(const std::string& text, const std::string& origin = "<string>");
ConfigMap parse_config_file(const std::string& path);

// Environment seed default: LAFS_SEED when set and parseable, else fallback.
uint64_t seed_from_env(uint64_t fallback);

}  // namespace lafs
