#pragma once

// "key = value" text files with '#' comments, used for model and training
// configuration.

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace gilt {

class KeyValueFile {
 public:
  static KeyValueFile parse(const std::string& text);
  static KeyValueFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void set(const std::string& key, int value) { set(key, std::to_string(value)); }
  void set(const std::string& key, bool value) { set(key, std::string(value ? "true" : "false")); }
  void set(const std::string& key, double value);

  bool has(const std::string& key) const { return values_.contains(key); }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  int get_int(const std::string& key, int fallback) const;
  double get_double(const std::string& key, double fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Keys that were parsed but never read; used to reject typos.
  std::vector<std::string> unknown_keys(const std::vector<std::string>& known) const;

  std::string to_string() const;
  void save(const std::filesystem::path& path) const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace gilt
