#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace sslm {

// Flat key=value configuration. Keys keep insertion order so that saved
// snapshots are diff-able. '#' starts a comment, blank lines are ignored.
class KvConfig {
 public:
  static KvConfig load(const std::filesystem::path& path);
  static KvConfig parse(const std::string& text);

  void save(const std::filesystem::path& path) const;
  std::string to_string() const;

  void set(const std::string& key, const std::string& value);
  std::optional<std::string> get(const std::string& key) const;
  bool has(const std::string& key) const { return get(key).has_value(); }

  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::string get_str(const std::string& key, const std::string& fallback) const;

  const std::vector<std::pair<std::string, std::string>>& items() const {
    return items_;
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

}  // namespace sslm
