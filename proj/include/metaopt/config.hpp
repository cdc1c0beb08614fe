#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace metaopt {

// Layered string key=value store. Callers build the final view by starting
// from the strongest layer and merging weaker ones underneath:
//   cli.merge_under(file).merge_under(env).merge_under(defaults)
class KeyValueConfig {
 public:
  KeyValueConfig() = default;

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const;

  std::string get(const std::string& key, const std::string& fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Existing keys win; missing ones are filled in from `weaker`.
  KeyValueConfig& merge_under(const KeyValueConfig& weaker);

  // key = value lines, # comments, blank lines ignored. Duplicate keys are an
  // error (they are invariably typos in hand-edited files).
  static KeyValueConfig from_file(const std::string& path);

  // METAOPT_OUTER_ITERS=x becomes outer_iters=x.
  static KeyValueConfig from_env(const char* prefix = "METAOPT_");

  // Sorted key = value dump; the standard artifact name is
  // resolved_config.txt and feeding it back via from_file reproduces the run.
  void write(const std::string& path) const;

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

std::vector<std::uint64_t> parse_seed_list(const std::string& text);    // "1,2,3"
std::vector<double> parse_double_list(const std::string& text);         // "0,0.05,0.1"

}  // namespace metaopt
