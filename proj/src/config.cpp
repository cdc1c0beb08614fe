#include "metaopt/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

extern char** environ;

namespace metaopt {

namespace {

std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace

void KeyValueConfig::set(const std::string& key, const std::string& value) {
  if (key.empty()) throw std::invalid_argument("config: empty key");
  entries_[key] = value;
}

bool KeyValueConfig::has(const std::string& key) const { return entries_.count(key) != 0; }

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  const auto it = entries_.find(key);
  return it == entries_.end() ? fallback : it->second;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::size_t used = 0;
  std::int64_t v;
  try {
    v = std::stoll(it->second, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' is not an integer: " + it->second);
  }
  if (used != it->second.size())
    throw std::invalid_argument("config: '" + key + "' is not an integer: " + it->second);
  return v;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  std::size_t used = 0;
  double v;
  try {
    v = std::stod(it->second, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("config: '" + key + "' is not a number: " + it->second);
  }
  if (used != it->second.size())
    throw std::invalid_argument("config: '" + key + "' is not a number: " + it->second);
  return v;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return fallback;
  const std::string& v = it->second;
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("config: '" + key + "' is not a boolean: " + v);
}

KeyValueConfig& KeyValueConfig::merge_under(const KeyValueConfig& weaker) {
  for (const auto& [k, v] : weaker.entries_) entries_.emplace(k, v);
  return *this;
}

KeyValueConfig KeyValueConfig::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("config: cannot open " + path);
  KeyValueConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": expected key = value");
    const std::string key = trim(t.substr(0, eq));
    const std::string value = trim(t.substr(eq + 1));
    if (key.empty())
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.entries_.count(key))
      throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) +
                               ": duplicate key '" + key + "'");
    cfg.entries_[key] = value;
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::from_env(const char* prefix) {
  KeyValueConfig cfg;
  const std::string pre(prefix);
  for (char** e = environ; e && *e; ++e) {
    const std::string entry(*e);
    const auto eq = entry.find('=');
    if (eq == std::string::npos || eq < pre.size()) continue;
    if (entry.compare(0, pre.size(), pre) != 0) continue;
    std::string key = entry.substr(pre.size(), eq - pre.size());
    if (key.empty()) continue;
    for (auto& c : key) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    cfg.entries_[key] = entry.substr(eq + 1);
  }
  return cfg;
}

void KeyValueConfig::write(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("config: cannot write " + path);
  for (const auto& [k, v] : entries_) out << k << " = " << v << '\n';
  if (!out) throw std::runtime_error("config: short write on " + path);
}

std::vector<std::uint64_t> parse_seed_list(const std::string& text) {
  std::vector<std::uint64_t> seeds;
  std::string cur;
  auto flush = [&] {
    const std::string t = trim(cur);
    cur.clear();
    if (t.empty()) throw std::invalid_argument("seed list: empty entry");
    std::size_t used = 0;
    std::uint64_t v;
    try {
      v = std::stoull(t, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("seed list: bad entry '" + t + "'");
    }
    if (used != t.size()) throw std::invalid_argument("seed list: bad entry '" + t + "'");
    seeds.push_back(v);
  };
  for (char c : text) {
    if (c == ',')
      flush();
    else
      cur += c;
  }
  flush();
  return seeds;
}

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> vals;
  std::string cur;
  auto flush = [&] {
    const std::string t = trim(cur);
    cur.clear();
    if (t.empty()) throw std::invalid_argument("number list: empty entry");
    std::size_t used = 0;
    double v;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      throw std::invalid_argument("number list: bad entry '" + t + "'");
    }
    if (used != t.size()) throw std::invalid_argument("number list: bad entry '" + t + "'");
    vals.push_back(v);
  };
  for (char c : text) {
    if (c == ',')
      flush();
    else
      cur += c;
  }
  flush();
  return vals;
}

}  // namespace metaopt
