#include "lafs/config.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace lafs {

namespace {

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* kind) {
  throw std::invalid_argument("config: key '" + key + "' holds '" + value + "', not " + kind);
}

}  // namespace

bool ConfigMap::has(const std::string& key) const {
  for (const auto& kv : items)
    if (kv.first == key) return true;
  return false;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  for (auto& kv : items)
    if (kv.first == key) {
      kv.second = value;
      return;
    }
  items.emplace_back(key, value);
}

std::string ConfigMap::get(const std::string& key, const std::string& fallback) const {
  for (const auto& kv : items)
    if (kv.first == key) return kv.second;
  return fallback;
}

int ConfigMap::get_int(const std::string& key, int fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t used = 0;
    const int out = std::stoi(v, &used);
    if (used != v.size()) bad_value(key, v, "an integer");
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "an integer");
  } catch (const std::out_of_range&) {
    bad_value(key, v, "an integer");
  }
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t used = 0;
    const double out = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "a number");
  } catch (const std::out_of_range&) {
    bad_value(key, v, "a number");
  }
}

uint64_t ConfigMap::get_u64(const std::string& key, uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string v = get(key, "");
  try {
    size_t used = 0;
    const uint64_t out = std::stoull(v, &used);
    if (used != v.size()) bad_value(key, v, "an unsigned integer");
    return out;
  } catch (const std::invalid_argument&) {
    bad_value(key, v, "an unsigned integer");
  } catch (const std::out_of_range&) {
    bad_value(key, v, "an unsigned integer");
  }
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  std::string v = get(key, "");
  std::transform(v.begin(), v.end(), v.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  bad_value(key, get(key, ""), "a boolean");
}

ConfigMap parse_config_text(const std::string& text, const std::string& origin) {
  ConfigMap cfg;
  std::istringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos || eq == 0)
      throw std::invalid_argument("config: " + origin + ": line " + std::to_string(line_no) +
                                  ": expected key=value, got '" + line + "'");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty())
      throw std::invalid_argument("config: " + origin + ": line " + std::to_string(line_no) +
                                  ": empty key");
    cfg.set(key, trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigMap parse_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::invalid_argument("config: " + path + ": cannot open");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config_text(ss.str(), path);
}

uint64_t seed_from_env(uint64_t fallback) {
  const char* env = std::getenv("LAFS_SEED");
  if (!env || !*env) return fallback;
  try {
    size_t used = 0;
    const uint64_t out = std::stoull(env, &used);
    if (used != std::string(env).size())
      throw std::invalid_argument("LAFS_SEED holds '" + std::string(env) + "', not an integer");
    return out;
  } catch (const std::invalid_argument&) {
    throw std::invalid_argument("LAFS_SEED holds '" + std::string(env) + "', not an integer");
  } catch (const std::out_of_range&) {
    throw std::invalid_argument("LAFS_SEED holds '" + std::string(env) + "', not an integer");
  }
}

}  // namespace lafs
